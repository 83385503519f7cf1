//! Beer–Lambert vessel synthesis and log-domain subtraction.
//!
//! A contrast-filled frame is `I_raw = I_bg · exp(−μ_c · d_c)` with the vessel
//! thickness `d_c` approximated by the distance transform of the vessel mask.
//! Subtracting in the log domain then recovers `μ_c · d_c` exactly.

mod phantom;

pub use phantom::{generate_phantom, BackgroundStyle, Phantom, PhantomConfig, Segment};

use serde::Serialize;

use crate::anm::{soft_mask, synthesize_noise, NoiseParams, SoftMaskConfig};
use crate::error::{CdsaError, Result};
use crate::image::{ensure_same_shape, BinaryMask, Image};
use crate::morphology::distance_transform;
use crate::rng::SeededRng;

/// Background optical depth `μ_bg · d_bg`.
#[derive(Clone, Debug, PartialEq)]
pub enum BackgroundDepth {
    Scalar(f64),
    Map(Image),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeerLambertParams {
    pub i0: f64,
    pub mu_bg_d_bg: BackgroundDepth,
    /// Contrast attenuation per pixel of thickness.
    pub mu_c: f64,
    /// Floor applied before taking logarithms.
    pub epsilon_log: f64,
}

impl Default for BeerLambertParams {
    fn default() -> Self {
        Self { i0: 1.0, mu_bg_d_bg: BackgroundDepth::Scalar(0.5), mu_c: 1.0, epsilon_log: 1e-4 }
    }
}

impl BeerLambertParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.i0 > 0.0) || !self.i0.is_finite() {
            return Err(CdsaError::arg(format!("i0 must be > 0, got {}", self.i0)));
        }
        if !(self.mu_c >= 0.0) || !self.mu_c.is_finite() {
            return Err(CdsaError::arg(format!("mu_c must be >= 0, got {}", self.mu_c)));
        }
        if !(self.epsilon_log > 0.0) || !self.epsilon_log.is_finite() {
            return Err(CdsaError::arg(format!("epsilon_log must be > 0, got {}", self.epsilon_log)));
        }
        match &self.mu_bg_d_bg {
            BackgroundDepth::Scalar(d) if !(d.is_finite() && *d >= 0.0) => {
                Err(CdsaError::arg(format!("background optical depth must be >= 0, got {d}")))
            }
            BackgroundDepth::Map(m) if m.data().iter().any(|&d| d < 0.0) => {
                Err(CdsaError::arg("background optical depth map has negative entries"))
            }
            _ => Ok(()),
        }
    }

    /// Pre-contrast frame `I_0 · exp(−μ_bg·d_bg)`.
    pub fn background(&self, height: usize, width: usize) -> Result<Image> {
        self.validate()?;
        match &self.mu_bg_d_bg {
            BackgroundDepth::Scalar(d) => Ok(Image::filled(height, width, self.i0 * (-d).exp())),
            BackgroundDepth::Map(m) => {
                ensure_same_shape((height, width), m.shape())?;
                Ok(m.map(|d| self.i0 * (-d).exp()))
            }
        }
    }
}

/// Returns the contrast-filled frame and the thickness map `d_c`.
pub fn synthesize_vessel_frame(i_bg: &Image, mask: &BinaryMask, p: &BeerLambertParams) -> Result<(Image, Image)> {
    p.validate()?;
    ensure_same_shape(i_bg.shape(), mask.shape())?;
    if let Some(i) = i_bg.data().iter().position(|&v| !(v > 0.0 && v <= p.i0)) {
        return Err(CdsaError::arg(format!(
            "background intensity {} at pixel {i} outside (0, i0]",
            i_bg.data()[i]
        )));
    }
    let depth = distance_transform(mask)?;
    let raw = i_bg.zip_map(&depth, |b, d| if d == 0.0 { b } else { b * (-p.mu_c * d).exp() })?;
    Ok((raw, depth))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subtraction {
    pub image: Image,
    /// Pixels where either input was raised to the log floor.
    pub clamped: usize,
}

/// `ln(max(pv_bg, ε)) − ln(max(pv_raw, ε))`
pub fn log_subtract(pv_bg: &Image, pv_raw: &Image, epsilon_log: f64) -> Result<Subtraction> {
    ensure_same_shape(pv_bg.shape(), pv_raw.shape())?;
    if !(epsilon_log > 0.0) || !epsilon_log.is_finite() {
        return Err(CdsaError::arg(format!("epsilon_log must be > 0, got {epsilon_log}")));
    }
    let mut clamped = 0;
    let data = pv_bg
        .data()
        .iter()
        .zip(pv_raw.data())
        .map(|(&b, &r)| {
            if b < epsilon_log || r < epsilon_log {
                clamped += 1;
            }
            b.max(epsilon_log).ln() - r.max(epsilon_log).ln()
        })
        .collect();
    Ok(Subtraction { image: Image::new(pv_bg.height(), pv_bg.width(), data)?, clamped })
}

/// Optional noise corruption of the synthesized frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseInjection {
    pub params: NoiseParams,
    pub soft_mask: SoftMaskConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    /// Contrast-filled frame, noisy when noise was requested.
    pub input: Image,
    /// The clean pre-contrast background.
    pub target: Image,
    pub depth: Image,
}

pub fn generate_synthetic_pair(
    i_bg: &Image,
    mask: &BinaryMask,
    p: &BeerLambertParams,
    noise: Option<&NoiseInjection>,
    rng: &mut SeededRng,
) -> Result<SyntheticPair> {
    let (raw, depth) = synthesize_vessel_frame(i_bg, mask, p)?;
    let input = match noise {
        None => raw,
        Some(n) => {
            let m_soft = soft_mask(mask, n.soft_mask.dilate_radius, n.soft_mask.blur_sigma)?;
            synthesize_noise(&raw, &n.params, &m_soft, rng)?
        }
    };
    Ok(SyntheticPair { input, target: i_bg.clone(), depth })
}

/// Pearson correlation between two images over the mask support.
pub fn vessel_pearson(subtracted: &Image, raw: &Image, mask: &BinaryMask) -> Result<f64> {
    ensure_same_shape(subtracted.shape(), raw.shape())?;
    ensure_same_shape(subtracted.shape(), mask.shape())?;
    let pairs: Vec<(f64, f64)> = mask
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| (subtracted.data()[i], raw.data()[i]))
        .collect();
    if pairs.len() < 2 {
        return Err(CdsaError::UndefinedCorrelation(format!("mask support has {} pixels", pairs.len())));
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(a, b) in &pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(CdsaError::UndefinedCorrelation("constant values over the mask support".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Display encoding of a subtraction: values scaled so `[0, max]` spans the
/// full 16-bit range. Negative values clip to 0.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DisplayScale {
    pub max: f64,
}

pub fn display_normalize(img: &Image) -> (Image, DisplayScale) {
    let max = img.max().max(0.0);
    let scaled = if max > 0.0 { img.map(|v| (v / max).clamp(0.0, 1.0)) } else { Image::zeros(img.height(), img.width()) };
    (scaled, DisplayScale { max })
}
