//! Gaussian scale space, scale-normalised Hessian and multiscale Frangi
//! vesselness.
//!
//! Second derivatives are taken by central differences of the smoothed
//! image (not derivative-of-Gaussian kernels). Each scale flags a border
//! ring of `ceil(4σ) + 1` pixels whose response is forced to zero.

use rayon::prelude::*;

use crate::error::{CdsaError, Result};
use crate::image::{reflect_index, Image};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Polarity {
    /// Vessels darker than the background (X-ray contrast); gates on `λ2 > 0`.
    DarkVessels,
    BrightVessels,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Structureness {
    /// Half of the maximum Hessian norm over the unflagged pixels at each scale.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleSpaceConfig {
    pub sigmas: Vec<f64>,
    pub beta: f64,
    pub c: Structureness,
    pub polarity: Polarity,
    pub gamma_norm: f64,
}

impl Default for ScaleSpaceConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![1.0, 1.5, 2.0, 3.0, 4.0, 6.0],
            beta: 0.5,
            c: Structureness::Auto,
            polarity: Polarity::DarkVessels,
            gamma_norm: 2.0,
        }
    }
}

impl ScaleSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(CdsaError::arg("sigma list is empty"));
        }
        if self.sigmas.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(CdsaError::arg("sigmas must be finite and > 0"));
        }
        if self.sigmas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CdsaError::arg("sigmas must be strictly increasing"));
        }
        if !(self.beta > 0.0) {
            return Err(CdsaError::arg("beta must be > 0"));
        }
        if let Structureness::Fixed(c) = self.c {
            if !(c > 0.0) {
                return Err(CdsaError::arg("c must be > 0"));
            }
        }
        if !self.gamma_norm.is_finite() {
            return Err(CdsaError::arg("gamma_norm must be finite"));
        }
        Ok(())
    }
}

pub fn kernel_radius(sigma: f64) -> usize {
    (4.0 * sigma).ceil() as usize
}

/// Normalised 1-D Gaussian truncated at `ceil(4σ)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(CdsaError::arg(format!("sigma must be > 0, got {sigma}")));
    }
    let r = kernel_radius(sigma) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// Separable convolution with a symmetric kernel and reflective boundaries.
pub(crate) fn convolve_separable(img: &Image, kernel: &[f64]) -> Image {
    let (h, w) = img.shape();
    let r = (kernel.len() / 2) as isize;
    let src = img.data();
    let mut tmp = vec![0.0; h * w];
    tmp.par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        let line = &src[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &wk) in kernel.iter().enumerate() {
                acc += wk * line[reflect_index(x as isize + k as isize - r, w)];
            }
            *out = acc;
        }
    });
    let mut dst = vec![0.0; h * w];
    dst.par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        for (k, &wk) in kernel.iter().enumerate() {
            let sy = reflect_index(y as isize + k as isize - r, h);
            let line = &tmp[sy * w..(sy + 1) * w];
            for (out, &v) in row.iter_mut().zip(line) {
                *out += wk * v;
            }
        }
    });
    Image::from_raw(h, w, dst)
}

pub fn gaussian_smooth(img: &Image, sigma: f64) -> Result<Image> {
    let kernel = gaussian_kernel(sigma)?;
    Ok(convolve_separable(img, &kernel))
}

/// Scale-normalised second derivatives at one scale.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianField {
    pub hxx: Image,
    pub hxy: Image,
    pub hyy: Image,
    pub sigma: f64,
    /// Width of the flagged boundary ring.
    pub border: usize,
}

impl HessianField {
    pub fn shape(&self) -> (usize, usize) {
        self.hxx.shape()
    }

    pub fn is_flagged(&self, y: usize, x: usize) -> bool {
        let (h, w) = self.shape();
        y < self.border || x < self.border || y + self.border >= h || x + self.border >= w
    }
}

pub fn hessian_at_scale(img: &Image, sigma: f64, gamma_norm: f64) -> Result<HessianField> {
    let kernel = gaussian_kernel(sigma)?;
    let (h, w) = img.shape();
    if h < kernel.len() || w < kernel.len() {
        return Err(CdsaError::arg(format!(
            "image {h}x{w} is smaller than the {0}x{0} kernel support at sigma {sigma}",
            kernel.len()
        )));
    }
    let s = convolve_separable(img, &kernel);
    let scale = sigma.powf(gamma_norm);
    let at = |y: isize, x: isize| s.get(reflect_index(y, h), reflect_index(x, w));
    let mut hxx = Image::zeros(h, w);
    let mut hxy = Image::zeros(h, w);
    let mut hyy = Image::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            let c = s.get(y, x);
            hxx.set(y, x, scale * (at(yi, xi + 1) - 2.0 * c + at(yi, xi - 1)));
            hyy.set(y, x, scale * (at(yi + 1, xi) - 2.0 * c + at(yi - 1, xi)));
            let d = at(yi + 1, xi + 1) - at(yi + 1, xi - 1) - at(yi - 1, xi + 1) + at(yi - 1, xi - 1);
            hxy.set(y, x, scale * 0.25 * d);
        }
    }
    Ok(HessianField { hxx, hxy, hyy, sigma, border: kernel_radius(sigma) + 1 })
}

/// Eigenvalues of `[[hxx, hxy], [hxy, hyy]]` ordered so that `|λ1| <= |λ2|`.
pub fn eig2x2_symmetric(hxx: f64, hxy: f64, hyy: f64) -> (f64, f64) {
    let mean = 0.5 * (hxx + hyy);
    let disc = (0.5 * (hxx - hyy)).hypot(hxy);
    let (a, b) = (mean + disc, mean - disc);
    if a.abs() <= b.abs() {
        (a, b)
    } else {
        (b, a)
    }
}

#[inline]
fn frangi_value(l1: f64, l2: f64, beta: f64, c: f64, polarity: Polarity) -> f64 {
    let gate = match polarity {
        Polarity::DarkVessels => l2 > 0.0,
        Polarity::BrightVessels => l2 < 0.0,
    };
    if !gate || c <= 0.0 {
        return 0.0;
    }
    let rb = l1 / l2;
    let s2 = l1 * l1 + l2 * l2;
    (-rb * rb / (2.0 * beta * beta)).exp() * (1.0 - (-s2 / (2.0 * c * c)).exp())
}

/// Resolves `c` for one scale. Auto picks half the largest `S` over unflagged pixels.
pub fn resolve_structureness(h: &HessianField, c: Structureness) -> f64 {
    match c {
        Structureness::Fixed(c) => c,
        Structureness::Auto => {
            let (rows, cols) = h.shape();
            let mut max_s: f64 = 0.0;
            for y in 0..rows {
                for x in 0..cols {
                    if h.is_flagged(y, x) {
                        continue;
                    }
                    let (l1, l2) = eig2x2_symmetric(h.hxx.get(y, x), h.hxy.get(y, x), h.hyy.get(y, x));
                    max_s = max_s.max(l1.hypot(l2));
                }
            }
            0.5 * max_s
        }
    }
}

/// Per-pixel Frangi vesselness at one scale; flagged border pixels are zero.
pub fn frangi_response(h: &HessianField, cfg: &ScaleSpaceConfig) -> Image {
    let c = resolve_structureness(h, cfg.c);
    let (rows, cols) = h.shape();
    Image::from_fn(rows, cols, |y, x| {
        if h.is_flagged(y, x) {
            return 0.0;
        }
        let (l1, l2) = eig2x2_symmetric(h.hxx.get(y, x), h.hxy.get(y, x), h.hyy.get(y, x));
        frangi_value(l1, l2, cfg.beta, c, cfg.polarity)
    })
}

/// Frangi responses at every configured scale, in `cfg.sigmas` order.
pub fn scale_responses(img: &Image, cfg: &ScaleSpaceConfig) -> Result<Vec<Image>> {
    cfg.validate()?;
    cfg.sigmas
        .par_iter()
        .map(|&sigma| {
            let h = hessian_at_scale(img, sigma, cfg.gamma_norm)?;
            Ok(frangi_response(&h, cfg))
        })
        .collect()
}

/// Multiscale vesselness prior: pixelwise maximum of the per-scale responses.
pub fn integrated_geometric_prior(img: &Image, cfg: &ScaleSpaceConfig) -> Result<Image> {
    let responses = scale_responses(img, cfg)?;
    let (h, w) = img.shape();
    let mut prior = Image::zeros(h, w);
    for r in &responses {
        for (p, &v) in prior.data_mut().iter_mut().zip(r.data()) {
            *p = p.max(v);
        }
    }
    Ok(prior)
}

/// Index into `cfg.sigmas` of the strongest response at each pixel
/// (lowest index on ties).
pub fn best_scale_index(img: &Image, cfg: &ScaleSpaceConfig) -> Result<Vec<usize>> {
    let responses = scale_responses(img, cfg)?;
    let n = img.len();
    Ok((0..n)
        .map(|i| {
            let mut best = 0;
            for (k, r) in responses.iter().enumerate() {
                if r.data()[i] > responses[best].data()[i] {
                    best = k;
                }
            }
            best
        })
        .collect())
}
