//! Local moment alignment loss.
//!
//! Sliding-window mean, second raw moment and variance, combined as
//! `Σ W·|ln(σ²_syn + ε) − ln(σ²_tar + ε)| + λ·W·|μ_syn − μ_tar|`.
//! Windows use half-sample reflection at the border, so constant images are
//! exact fixed points everywhere.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CdsaError, Result};
use crate::gradcheck::{central_difference, GradCheckReport, FD_STEP};
use crate::image::{ensure_same_shape, reflect_index, BinaryMask, Image};

/// Pixels whose absolute-value argument is within this of zero are treated
/// as sitting on the kink by the gradient check.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StatLossConfig {
    pub window_k: usize,
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for StatLossConfig {
    fn default() -> Self {
        Self { window_k: 11, lambda: 1.0, epsilon: 1e-6 }
    }
}

impl StatLossConfig {
    pub fn validate(&self) -> Result<()> {
        check_window(self.window_k)?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(CdsaError::arg(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(CdsaError::arg(format!("epsilon must be finite and > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

fn check_window(k: usize) -> Result<()> {
    if k < 3 || k % 2 == 0 {
        return Err(CdsaError::arg(format!("window side must be odd and >= 3, got {k}")));
    }
    Ok(())
}

fn check_image(img: &Image, k: usize) -> Result<()> {
    check_window(k)?;
    let (h, w) = img.shape();
    if h < k || w < k {
        return Err(CdsaError::arg(format!("image {h}x{w} is smaller than the {k}x{k} window")));
    }
    Ok(())
}

/// One-dimensional reflected box sum along rows, without normalization.
fn box_rows(data: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = vec![0.0; h * w];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let src = &data[y * w..(y + 1) * w];
        for (x, o) in row.iter_mut().enumerate() {
            *o = (-r..=r).map(|d| src[reflect_index(x as isize + d, w)]).sum();
        }
    });
    out
}

/// Adjoint of [`box_rows`]: scatters each output back onto its window.
fn box_rows_adjoint(data: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = vec![0.0; h * w];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let src = &data[y * w..(y + 1) * w];
        for (x, &g) in src.iter().enumerate() {
            for d in -r..=r {
                row[reflect_index(x as isize + d, w)] += g;
            }
        }
    });
    out
}

fn transpose(data: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = data[y * w + x];
        }
    }
    out
}

fn box_mean(data: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let rows = box_rows(data, h, w, k);
    let cols = box_rows(&transpose(&rows, h, w), w, h, k);
    let norm = 1.0 / (k * k) as f64;
    transpose(&cols, w, h).into_iter().map(|v| v * norm).collect()
}

fn box_mean_adjoint(data: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let cols = box_rows_adjoint(&transpose(data, h, w), w, h, k);
    let rows = box_rows_adjoint(&transpose(&cols, w, h), h, w, k);
    let norm = 1.0 / (k * k) as f64;
    rows.into_iter().map(|v| v * norm).collect()
}

pub fn local_mean(img: &Image, k: usize) -> Result<Image> {
    check_image(img, k)?;
    let (h, w) = img.shape();
    Ok(Image::from_raw(h, w, box_mean(img.data(), h, w, k)))
}

pub fn local_second_moment(img: &Image, k: usize) -> Result<Image> {
    local_mean(&img.map(|v| v * v), k)
}

/// `E[X²] − μ²`, clamped at zero.
pub fn local_variance(img: &Image, k: usize) -> Result<Image> {
    check_image(img, k)?;
    let (h, w) = img.shape();
    Ok(Image::from_raw(h, w, moments(img, k).var))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StatLoss {
    pub total: f64,
    pub log_variance_term: f64,
    /// Already multiplied by lambda.
    pub mean_term: f64,
    /// Σ W, for per-pixel normalization by callers.
    pub weight_sum: f64,
}

struct Moments {
    /// Reference value subtracted before accumulating moments.
    shift: f64,
    /// Local mean of `x − shift`.
    mu_shifted: Vec<f64>,
    mu: Vec<f64>,
    var: Vec<f64>,
    /// `var` before the clamp was active (`E[X²] − μ² > 0`).
    unclamped: Vec<bool>,
}

// Moments are accumulated about the first pixel. The variance is unchanged
// mathematically, but a constant image yields exactly zero instead of
// cancellation residue that the log term would amplify by 1/ε.
fn moments(img: &Image, k: usize) -> Moments {
    let (h, w) = img.shape();
    let shift = img.data()[0];
    let centered: Vec<f64> = img.data().iter().map(|v| v - shift).collect();
    let mu_shifted = box_mean(&centered, h, w, k);
    let sq: Vec<f64> = centered.iter().map(|v| v * v).collect();
    let m2 = box_mean(&sq, h, w, k);
    let raw: Vec<f64> = m2.iter().zip(&mu_shifted).map(|(s, m)| s - m * m).collect();
    Moments {
        unclamped: raw.iter().map(|&v| v > 0.0).collect(),
        var: raw.into_iter().map(|v| v.max(0.0)).collect(),
        mu: mu_shifted.iter().map(|m| m + shift).collect(),
        mu_shifted,
        shift,
    }
}

fn prepare(i_syn: &Image, i_tar: &Image, w: &BinaryMask, cfg: &StatLossConfig) -> Result<()> {
    cfg.validate()?;
    ensure_same_shape(i_syn.shape(), i_tar.shape())?;
    ensure_same_shape(i_syn.shape(), w.shape())?;
    check_image(i_syn, cfg.window_k)
}

pub fn moment_alignment_loss(i_syn: &Image, i_tar: &Image, w: &BinaryMask, cfg: &StatLossConfig) -> Result<StatLoss> {
    prepare(i_syn, i_tar, w, cfg)?;
    let s = moments(i_syn, cfg.window_k);
    let t = moments(i_tar, cfg.window_k);
    let (mut log_term, mut mean_term) = (0.0, 0.0);
    for (i, &on) in w.bits().iter().enumerate() {
        if on {
            log_term += ((s.var[i] + cfg.epsilon).ln() - (t.var[i] + cfg.epsilon).ln()).abs();
            mean_term += (s.mu[i] - t.mu[i]).abs();
        }
    }
    let mean_term = cfg.lambda * mean_term;
    Ok(StatLoss {
        total: log_term + mean_term,
        log_variance_term: log_term,
        mean_term,
        weight_sum: w.count() as f64,
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of the total loss with respect to `i_syn`. The absolute value
/// uses `sign(0) = 0`, and the variance clamp passes no gradient.
pub fn moment_alignment_gradient(i_syn: &Image, i_tar: &Image, w: &BinaryMask, cfg: &StatLossConfig) -> Result<Image> {
    prepare(i_syn, i_tar, w, cfg)?;
    let (h, wd) = i_syn.shape();
    let k = cfg.window_k;
    let s = moments(i_syn, k);
    let t = moments(i_tar, k);
    let n = h * wd;
    // upstream gradients on the second moment and on the mean
    let mut g_m2 = vec![0.0; n];
    let mut g_mu = vec![0.0; n];
    for i in 0..n {
        if !w.bits()[i] {
            continue;
        }
        let a = (s.var[i] + cfg.epsilon).ln() - (t.var[i] + cfg.epsilon).ln();
        let g_var = if s.unclamped[i] { sign(a) / (s.var[i] + cfg.epsilon) } else { 0.0 };
        g_m2[i] = g_var;
        g_mu[i] = cfg.lambda * sign(s.mu[i] - t.mu[i]) - 2.0 * s.mu_shifted[i] * g_var;
    }
    let back_m2 = box_mean_adjoint(&g_m2, h, wd, k);
    let back_mu = box_mean_adjoint(&g_mu, h, wd, k);
    let data = i_syn
        .data()
        .iter()
        .zip(back_m2.iter().zip(&back_mu))
        .map(|(&x, (&b2, &b1))| 2.0 * (x - s.shift) * b2 + b1)
        .collect();
    Ok(Image::from_raw(h, wd, data))
}

/// Pixels of `i_syn` whose window touches a weighted pixel where either
/// absolute-value argument is within [`KINK_MARGIN`] of zero.
pub fn kink_pixels(i_syn: &Image, i_tar: &Image, w: &BinaryMask, cfg: &StatLossConfig) -> Result<Vec<bool>> {
    prepare(i_syn, i_tar, w, cfg)?;
    let (h, wd) = i_syn.shape();
    let s = moments(i_syn, cfg.window_k);
    let t = moments(i_tar, cfg.window_k);
    let mut at_kink = vec![0.0; h * wd];
    for i in 0..h * wd {
        if !w.bits()[i] {
            continue;
        }
        let a = (s.var[i] + cfg.epsilon).ln() - (t.var[i] + cfg.epsilon).ln();
        let b = s.mu[i] - t.mu[i];
        let mean_kink = cfg.lambda > 0.0 && b.abs() <= KINK_MARGIN;
        if a.abs() <= KINK_MARGIN || mean_kink || !s.unclamped[i] {
            at_kink[i] = 1.0;
        }
    }
    // the adjoint spreads each flag over every input pixel that feeds it
    Ok(box_mean_adjoint(&at_kink, h, wd, cfg.window_k).into_iter().map(|v| v > 0.0).collect())
}

/// Central-difference check of [`moment_alignment_gradient`] over every
/// pixel of `i_syn` not influenced by a kink.
pub fn gradcheck_stat_loss(i_syn: &Image, i_tar: &Image, w: &BinaryMask, cfg: &StatLossConfig) -> Result<GradCheckReport> {
    let grad = moment_alignment_gradient(i_syn, i_tar, w, cfg)?;
    let skip = kink_pixels(i_syn, i_tar, w, cfg)?;
    let (h, wd) = i_syn.shape();
    let mut x = i_syn.data().to_vec();
    let mut report = GradCheckReport::default();
    for i in 0..x.len() {
        if skip[i] {
            report.skipped += 1;
            continue;
        }
        let num = central_difference(&mut x, i, FD_STEP, |d| {
            let p = Image::from_raw(h, wd, d.to_vec());
            moment_alignment_loss(&p, i_tar, w, cfg).expect("validated inputs").total
        });
        report.record(grad.data()[i], num);
    }
    Ok(report)
}

/// Two random images with different local statistics and a random weight mask
/// covering about 70% of the pixels.
pub fn random_stat_instance(seed: u64, h: usize, w: usize) -> (Image, Image, BinaryMask) {
    let mut rng = crate::rng::SeededRng::new(seed);
    let syn = Image::from_fn(h, w, |_, _| rng.next_f64());
    let tar = Image::from_fn(h, w, |_, _| 0.2 + 0.6 * rng.next_f64());
    let mask = BinaryMask::from_fn(h, w, |_, _| rng.next_f64() < 0.7);
    (syn, tar, mask)
}
