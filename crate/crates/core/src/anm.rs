//! Adaptive noise module: coordinate attention, mask-guided dual pooling,
//! softplus regression heads for the noise parameters, and
//! signal-dependent noise synthesis `I + ε·sqrt(α·I + γ)·M_soft`.

use rayon::prelude::*;

use crate::error::{CdsaError, Result};
use crate::gsm::sigmoid;
use crate::image::{ensure_same_shape, BinaryMask, Image};
use crate::morphology::dilate;
use crate::rng::SeededRng;
use crate::tensor::Tensor4;
use crate::vesselness::gaussian_smooth;

/// Added to the mask area in the masked mean.
pub const POOL_EPS: f64 = 1e-6;

/// Gain `alpha` (signal-dependent) and floor `gamma` (stationary) of the noise variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl NoiseParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha >= 0.0 && gamma >= 0.0) || !alpha.is_finite() || !gamma.is_finite() {
            return Err(CdsaError::arg(format!(
                "noise parameters must be finite and >= 0 (alpha={alpha}, gamma={gamma})"
            )));
        }
        Ok(Self { alpha, gamma })
    }

    /// Per-pixel variance `α·I + γ`.
    pub fn variance(&self, intensity: f64) -> f64 {
        self.alpha * intensity + self.gamma
    }
}

/// Coordinate attention with a ReLU bottleneck.
///
/// The features are average-pooled along each axis, passed through a shared
/// 1×1 reduction to `mid` channels, then expanded back per axis into sigmoid
/// attention maps. Inference-time batch norm in the bottleneck is assumed to
/// be folded into the reduction weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordAttParams {
    pub channels: usize,
    pub mid: usize,
    /// `mid × channels`
    pub reduce_w: Vec<f64>,
    pub reduce_b: Vec<f64>,
    /// `channels × mid`, applied to the height-pooled branch.
    pub expand_h_w: Vec<f64>,
    pub expand_h_b: Vec<f64>,
    /// `channels × mid`, applied to the width-pooled branch.
    pub expand_w_w: Vec<f64>,
    pub expand_w_b: Vec<f64>,
    /// Bypass the block entirely.
    pub identity_mode: bool,
}

/// Bottleneck width with reduction ratio 8 and a floor of 8 channels.
pub fn coord_att_mid_channels(channels: usize) -> usize {
    (channels / 8).max(8)
}

impl CoordAttParams {
    pub fn identity(channels: usize) -> Self {
        let mut p = Self::with_constant_logits(channels, 0.0);
        p.identity_mode = true;
        p
    }

    /// Zero weights everywhere and every attention logit equal to `logit`.
    pub fn with_constant_logits(channels: usize, logit: f64) -> Self {
        let mid = coord_att_mid_channels(channels);
        Self {
            channels,
            mid,
            reduce_w: vec![0.0; mid * channels],
            reduce_b: vec![0.0; mid],
            expand_h_w: vec![0.0; channels * mid],
            expand_h_b: vec![logit; channels],
            expand_w_w: vec![0.0; channels * mid],
            expand_w_b: vec![logit; channels],
            identity_mode: false,
        }
    }

    pub fn random(channels: usize, rng: &mut SeededRng) -> Self {
        let mid = coord_att_mid_channels(channels);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.next_range(-1.0, 1.0)).collect() };
        Self {
            channels,
            mid,
            reduce_w: draw(mid * channels),
            reduce_b: draw(mid),
            expand_h_w: draw(channels * mid),
            expand_h_b: draw(channels),
            expand_w_w: draw(channels * mid),
            expand_w_b: draw(channels),
            identity_mode: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, m) = (self.channels, self.mid);
        let ok = self.reduce_w.len() == m * c
            && self.reduce_b.len() == m
            && self.expand_h_w.len() == c * m
            && self.expand_h_b.len() == c
            && self.expand_w_w.len() == c * m
            && self.expand_w_b.len() == c;
        if !ok {
            return Err(CdsaError::arg(format!(
                "coordinate attention parameters inconsistent with {c} channels / {m} mid"
            )));
        }
        Ok(())
    }

    /// Attention along one axis from the pooled profile `pooled[ch][i]`.
    fn axis_attention(&self, pooled: &[Vec<f64>], expand_w: &[f64], expand_b: &[f64]) -> Vec<Vec<f64>> {
        let len = pooled.first().map_or(0, Vec::len);
        let (c, m) = (self.channels, self.mid);
        let hidden: Vec<Vec<f64>> = (0..m)
            .map(|k| {
                (0..len)
                    .map(|i| {
                        let z = self.reduce_b[k]
                            + (0..c).map(|ch| self.reduce_w[k * c + ch] * pooled[ch][i]).sum::<f64>();
                        z.max(0.0)
                    })
                    .collect()
            })
            .collect();
        (0..c)
            .map(|ch| {
                (0..len)
                    .map(|i| {
                        let z = expand_b[ch] + (0..m).map(|k| expand_w[ch * m + k] * hidden[k][i]).sum::<f64>();
                        sigmoid(z)
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn coord_att(f: &Tensor4, p: &CoordAttParams) -> Result<Tensor4> {
    p.validate()?;
    let (n, c, h, w) = f.dims();
    if c != p.channels {
        return Err(CdsaError::arg(format!(
            "features have {c} channels, attention expects {}",
            p.channels
        )));
    }
    if p.identity_mode {
        return Ok(f.clone());
    }
    let mut out = f.clone();
    for b in 0..n {
        let pooled_h: Vec<Vec<f64>> = (0..c)
            .map(|ch| (0..h).map(|y| (0..w).map(|x| f.get(b, ch, y, x)).sum::<f64>() / w as f64).collect())
            .collect();
        let pooled_w: Vec<Vec<f64>> = (0..c)
            .map(|ch| (0..w).map(|x| (0..h).map(|y| f.get(b, ch, y, x)).sum::<f64>() / h as f64).collect())
            .collect();
        let a_h = p.axis_attention(&pooled_h, &p.expand_h_w, &p.expand_h_b);
        let a_w = p.axis_attention(&pooled_w, &p.expand_w_w, &p.expand_w_b);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = f.get(b, ch, y, x) * a_h[ch][y] * a_w[ch][x];
                    out.set(b, ch, y, x, v);
                }
            }
        }
    }
    Ok(out)
}

/// Mask-guided descriptor `[f_mean ‖ f_max]` for each batch item.
///
/// `f_mean = Σ(A ⊙ M) / (ΣM + eps)` and `f_max = max(A ⊙ M)` per channel, with
/// `A` the attended features. The maximum runs over the masked product, so
/// pixels outside the mask contribute zeros and an empty mask gives 0.
pub fn masked_dual_pool(f: &Tensor4, m_dil: &BinaryMask, p: &CoordAttParams) -> Result<Vec<Vec<f64>>> {
    let (n, c, h, w) = f.dims();
    ensure_same_shape((h, w), m_dil.shape())?;
    let att = coord_att(f, p)?;
    let area = m_dil.count() as f64;
    let bits = m_dil.bits();
    Ok((0..n)
        .map(|b| {
            let mut means = Vec::with_capacity(c);
            let mut maxes = Vec::with_capacity(c);
            for ch in 0..c {
                let start = att.index(b, ch, 0, 0);
                let plane = &att.data()[start..start + h * w];
                let mut sum = 0.0;
                let mut max = f64::NEG_INFINITY;
                for (&v, &m) in plane.iter().zip(bits) {
                    let prod = if m { v } else { 0.0 };
                    sum += prod;
                    max = max.max(prod);
                }
                means.push(sum / (area + POOL_EPS));
                maxes.push(if plane.is_empty() { 0.0 } else { max });
            }
            means.extend(maxes);
            means
        })
        .collect())
}

/// Decoupled linear heads over the pooled descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub w_alpha: Vec<f64>,
    pub b_alpha: f64,
    pub w_gamma: Vec<f64>,
    pub b_gamma: f64,
}

impl HeadParams {
    pub fn zeroed(width: usize) -> Self {
        Self { w_alpha: vec![0.0; width], b_alpha: 0.0, w_gamma: vec![0.0; width], b_gamma: 0.0 }
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn regress_noise_params(descriptor: &[f64], head: &HeadParams) -> Result<NoiseParams> {
    let d = descriptor.len();
    if head.w_alpha.len() != d || head.w_gamma.len() != d {
        return Err(CdsaError::arg(format!(
            "descriptor has {d} entries, heads expect {} and {}",
            head.w_alpha.len(),
            head.w_gamma.len()
        )));
    }
    let dot = |w: &[f64]| w.iter().zip(descriptor).map(|(a, b)| a * b).sum::<f64>();
    Ok(NoiseParams {
        alpha: softplus(dot(&head.w_alpha) + head.b_alpha),
        gamma: softplus(dot(&head.w_gamma) + head.b_gamma),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftMaskConfig {
    pub dilate_radius: f64,
    pub blur_sigma: f64,
}

impl Default for SoftMaskConfig {
    fn default() -> Self {
        Self { dilate_radius: 3.0, blur_sigma: 2.0 }
    }
}

/// Dilated vessel mask blurred by a Gaussian, clamped to [0, 1].
pub fn soft_mask(mask: &BinaryMask, dilate_radius: f64, blur_sigma: f64) -> Result<Image> {
    let dil = dilate(mask, dilate_radius)?;
    Ok(gaussian_smooth(&dil.to_image(), blur_sigma)?.map(|v| v.clamp(0.0, 1.0)))
}

/// Adds `ε·sqrt(α·I + γ)·M_soft` with one standard normal per pixel.
///
/// Pixel `i` uses normal draw `start + i` of `rng`, where `start` is reserved
/// from the stream; the result does not depend on the thread count.
pub fn synthesize_noise(i_bg: &Image, params: &NoiseParams, m_soft: &Image, rng: &mut SeededRng) -> Result<Image> {
    ensure_same_shape(i_bg.shape(), m_soft.shape())?;
    if let Some(i) = i_bg.data().iter().position(|&v| v < 0.0) {
        return Err(CdsaError::arg(format!(
            "background intensity is negative at pixel {i}; clamp before synthesizing noise"
        )));
    }
    NoiseParams::new(params.alpha, params.gamma)?;
    let (h, w) = i_bg.shape();
    let start = rng.reserve_normals((h * w) as u64);
    let stream = rng.clone();
    let mut out = vec![0.0; h * w];
    out.par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let i = y * w + x;
            let bg = i_bg.data()[i];
            let eps = stream.normal_at(start + i as u64);
            *o = bg + eps * params.variance(bg).sqrt() * m_soft.data()[i];
        }
    });
    Ok(Image::from_raw(h, w, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_saturated_attention() {
        let mut rng = SeededRng::new(1);
        let f = Tensor4::from_fn(1, 2, 4, 4, |_, _, _, _| rng.next_range(-1.0, 1.0));
        assert_eq!(coord_att(&f, &CoordAttParams::identity(2)).unwrap(), f);
        let sat = coord_att(&f, &CoordAttParams::with_constant_logits(2, 20.0)).unwrap();
        for (a, b) in sat.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(coord_att(&f, &CoordAttParams::identity(3)).is_err());
    }

    #[test]
    fn full_and_empty_mask_pooling() {
        let f = Tensor4::from_fn(1, 2, 3, 3, |_, c, y, x| (c as f64 + 1.0) * (y as f64 - x as f64));
        let d = masked_dual_pool(&f, &BinaryMask::full(3, 3), &CoordAttParams::identity(2)).unwrap();
        assert!(d[0][0].abs() < 1e-6 && d[0][1].abs() < 1e-6);
        assert_eq!(d[0][2], 2.0);
        assert_eq!(d[0][3], 4.0);
        let e = masked_dual_pool(&f, &BinaryMask::empty(3, 3), &CoordAttParams::identity(2)).unwrap();
        assert_eq!(e[0], vec![0.0; 4]);
        assert!(masked_dual_pool(&f, &BinaryMask::empty(3, 4), &CoordAttParams::identity(2)).is_err());
    }

    #[test]
    fn heads_are_strictly_positive() {
        let p = regress_noise_params(&[0.3, -0.2], &HeadParams::zeroed(2)).unwrap();
        assert!((p.alpha - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((p.gamma - std::f64::consts::LN_2).abs() < 1e-15);
        let mut h = HeadParams::zeroed(2);
        h.b_alpha = -20.0;
        let p = regress_noise_params(&[1.0, 1.0], &h).unwrap();
        assert!(p.alpha > 0.0 && (p.alpha - 2.061e-9).abs() < 1e-12);
        assert!(regress_noise_params(&[1.0], &h).is_err());
        assert_eq!(softplus(1000.0), 1000.0);
    }

    #[test]
    fn soft_mask_limits() {
        let z = soft_mask(&BinaryMask::empty(16, 16), 3.0, 2.0).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let one = soft_mask(&BinaryMask::full(16, 16), 3.0, 2.0).unwrap();
        assert!(one.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn noise_rejects_negative_background() {
        let bg = Image::new(1, 2, vec![0.5, -0.1]).unwrap();
        let m = Image::filled(1, 2, 1.0);
        let p = NoiseParams::new(0.1, 0.0).unwrap();
        assert!(synthesize_noise(&bg, &p, &m, &mut SeededRng::new(0)).is_err());
        assert!(NoiseParams::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn zero_noise_is_bit_exact() {
        let bg = Image::from_fn(8, 8, |y, x| 0.1 + 0.01 * (y * 8 + x) as f64);
        let ones = Image::filled(8, 8, 1.0);
        let p0 = NoiseParams::new(0.0, 0.0).unwrap();
        assert_eq!(synthesize_noise(&bg, &p0, &ones, &mut SeededRng::new(4)).unwrap(), bg);
        let p = NoiseParams::new(0.05, 1e-3).unwrap();
        let zeros = Image::zeros(8, 8);
        assert_eq!(synthesize_noise(&bg, &p, &zeros, &mut SeededRng::new(4)).unwrap(), bg);
    }
}
