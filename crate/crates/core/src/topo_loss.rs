//! Segmentation losses: soft Dice, binary cross-entropy and soft-clDice,
//! with their weighted sum and analytic gradients.
//!
//! The soft skeleton follows the clDice construction: repeated 3×3 min-pool
//! erosions, an opening (min-pool then max-pool) at each level, and the
//! residual `relu(e - open(e))` folded in as `skel + relu(δ - skel·δ)`.
//! Pooling windows are clipped at the image border.

use crate::error::{CdsaError, Result};
use crate::gradcheck::{central_difference, GradCheckReport, FD_STEP};
use crate::image::{ensure_same_shape, BinaryMask, Image};

/// Smoothing constant of the Dice and clDice ratios.
pub const SMOOTH: f64 = 1.0;
/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the cross-entropy,
/// which bounds the per-pixel loss by `-ln(BCE_CLAMP) ≈ 16.12`.
pub const BCE_CLAMP: f64 = 1e-7;
/// Perturbation used to decide whether a pixel sits at a min/max tie.
pub const SKELETON_TIE_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, lambda3: 1.0 }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = Self { lambda1, lambda2, lambda3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda3].iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(CdsaError::arg("loss weights must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { lambda1: a * self.lambda1, lambda2: a * self.lambda2, lambda3: a * self.lambda3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SoftSkeletonConfig {
    pub iterations: usize,
}

impl Default for SoftSkeletonConfig {
    /// Ten rounds, enough for vessels up to ~20 px wide.
    fn default() -> Self {
        Self { iterations: 10 }
    }
}

impl SoftSkeletonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(CdsaError::arg("soft skeleton needs at least one iteration"));
        }
        Ok(())
    }
}

pub fn soft_dice_loss(pred: &Image, gt: &Image) -> Result<f64> {
    ensure_same_shape(pred.shape(), gt.shape())?;
    let inter: f64 = pred.data().iter().zip(gt.data()).map(|(p, g)| p * g).sum();
    Ok(1.0 - (2.0 * inter + SMOOTH) / (pred.sum() + gt.sum() + SMOOTH))
}

fn soft_dice_grad(pred: &Image, gt: &Image) -> Vec<f64> {
    let inter: f64 = pred.data().iter().zip(gt.data()).map(|(p, g)| p * g).sum();
    let num = 2.0 * inter + SMOOTH;
    let den = pred.sum() + gt.sum() + SMOOTH;
    gt.data().iter().map(|&g| -(2.0 * g * den - num) / (den * den)).collect()
}

/// Pixel-mean binary cross-entropy.
pub fn bce_loss(pred: &Image, gt: &BinaryMask) -> Result<f64> {
    ensure_same_shape(pred.shape(), gt.shape())?;
    let n = pred.len().max(1) as f64;
    let total: f64 = pred
        .data()
        .iter()
        .zip(gt.bits())
        .map(|(&p, &g)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if g {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / n)
}

fn bce_grad(pred: &Image, gt: &BinaryMask) -> Vec<f64> {
    let n = pred.len().max(1) as f64;
    pred.data()
        .iter()
        .zip(gt.bits())
        .map(|(&p, &g)| {
            if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                0.0
            } else if g {
                -1.0 / (p * n)
            } else {
                1.0 / ((1.0 - p) * n)
            }
        })
        .collect()
}

struct Pool {
    out: Vec<f64>,
    /// Flat index of the selected input for each output pixel.
    arg: Vec<u32>,
}

fn pool3(x: &[f64], h: usize, w: usize, take_max: bool) -> Pool {
    let mut out = Vec::with_capacity(x.len());
    let mut arg = Vec::with_capacity(x.len());
    for y in 0..h {
        for xx in 0..w {
            let mut best = y * w + xx;
            for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in xx.saturating_sub(1)..(xx + 2).min(w) {
                    let i = ny * w + nx;
                    let better = if take_max { x[i] > x[best] } else { x[i] < x[best] };
                    if better {
                        best = i;
                    }
                }
            }
            out.push(x[best]);
            arg.push(best as u32);
        }
    }
    Pool { out, arg }
}

struct Level {
    erode: Pool,
    open: Pool,
    delta: Vec<f64>,
}

struct SkeletonTrace {
    levels: Vec<Level>,
    /// Skeleton after each level; `skels[j]` includes levels `0..=j`.
    skels: Vec<Vec<f64>>,
}

impl SkeletonTrace {
    fn skeleton(&self) -> &[f64] {
        self.skels.last().expect("at least one level")
    }

    fn selection_pattern(&self) -> Vec<u32> {
        self.levels
            .iter()
            .flat_map(|l| l.erode.arg.iter().chain(&l.open.arg).copied())
            .collect()
    }
}

fn skeleton_forward(x: &[f64], h: usize, w: usize, iterations: usize) -> SkeletonTrace {
    let mut levels: Vec<Level> = Vec::with_capacity(iterations + 1);
    let mut skels: Vec<Vec<f64>> = Vec::with_capacity(iterations + 1);
    for j in 0..=iterations {
        let e: &[f64] = if j == 0 { x } else { &levels[j - 1].erode.out };
        let erode = pool3(e, h, w, false);
        let open = pool3(&erode.out, h, w, true);
        let delta: Vec<f64> = e.iter().zip(&open.out).map(|(a, b)| (a - b).max(0.0)).collect();
        let skel = match skels.last() {
            None => delta.clone(),
            Some(prev) => prev
                .iter()
                .zip(&delta)
                .map(|(&s, &d)| s + (d - s * d).max(0.0))
                .collect(),
        };
        levels.push(Level { erode, open, delta });
        skels.push(skel);
    }
    SkeletonTrace { levels, skels }
}

/// Vector-Jacobian product of the soft skeleton.
///
/// Both relus act on arguments that are non-negative for inputs in [0, 1]
/// (openings are anti-extensive; `δ(1 - skel) >= 0`), so they pass gradients
/// through. Min/max pools route gradients to the selected input.
fn skeleton_backward(trace: &SkeletonTrace, upstream: &[f64]) -> Vec<f64> {
    let n = upstream.len();
    let k = trace.levels.len();
    let mut g_delta = vec![vec![0.0; n]; k];
    let mut g_skel = upstream.to_vec();
    for j in (1..k).rev() {
        let prev = &trace.skels[j - 1];
        let delta = &trace.levels[j].delta;
        for i in 0..n {
            g_delta[j][i] = g_skel[i] * (1.0 - prev[i]);
            g_skel[i] *= 1.0 - delta[i];
        }
    }
    g_delta[0].copy_from_slice(&g_skel);

    let mut g_next = vec![0.0; n];
    for j in (0..k).rev() {
        let level = &trace.levels[j];
        // gradient reaching erode(e_j): from e_{j+1} and from the opening
        let mut g_erode = std::mem::take(&mut g_next);
        for i in 0..n {
            g_erode[level.open.arg[i] as usize] -= g_delta[j][i];
        }
        let mut g_e = g_delta[j].clone();
        for i in 0..n {
            g_e[level.erode.arg[i] as usize] += g_erode[i];
        }
        g_next = g_e;
    }
    g_next
}

pub fn soft_skeleton(img: &Image, cfg: &SoftSkeletonConfig) -> Result<Image> {
    cfg.validate()?;
    let (h, w) = img.shape();
    let trace = skeleton_forward(img.data(), h, w, cfg.iterations);
    Ok(Image::from_raw(h, w, trace.skeleton().to_vec()))
}

/// Gradient of `Σ upstream · soft_skeleton(img)` with respect to `img`.
pub fn soft_skeleton_vjp(img: &Image, cfg: &SoftSkeletonConfig, upstream: &Image) -> Result<Image> {
    cfg.validate()?;
    ensure_same_shape(img.shape(), upstream.shape())?;
    let (h, w) = img.shape();
    let trace = skeleton_forward(img.data(), h, w, cfg.iterations);
    Ok(Image::from_raw(h, w, skeleton_backward(&trace, upstream.data())))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct ClDiceParts {
    tprec: f64,
    tsens: f64,
}

impl ClDiceParts {
    fn loss(&self) -> f64 {
        1.0 - 2.0 * self.tprec * self.tsens / (self.tprec + self.tsens)
    }
}

/// `1 - clDice` on soft maps, with topology precision measured on the
/// prediction's skeleton and sensitivity on the reference's skeleton.
pub fn soft_cldice_loss(pred: &Image, gt: &Image, cfg: &SoftSkeletonConfig) -> Result<f64> {
    ensure_same_shape(pred.shape(), gt.shape())?;
    cfg.validate()?;
    let (h, w) = pred.shape();
    let sp = skeleton_forward(pred.data(), h, w, cfg.iterations);
    let sg = skeleton_forward(gt.data(), h, w, cfg.iterations);
    Ok(cldice_parts(pred.data(), gt.data(), sp.skeleton(), sg.skeleton()).loss())
}

fn cldice_parts(pred: &[f64], gt: &[f64], skel_pred: &[f64], skel_gt: &[f64]) -> ClDiceParts {
    let tprec = (dot(skel_pred, gt) + SMOOTH) / (skel_pred.iter().sum::<f64>() + SMOOTH);
    let tsens = (dot(skel_gt, pred) + SMOOTH) / (skel_gt.iter().sum::<f64>() + SMOOTH);
    ClDiceParts { tprec, tsens }
}

fn cldice_grad(pred: &Image, gt: &Image, cfg: &SoftSkeletonConfig) -> Vec<f64> {
    let (h, w) = pred.shape();
    let sp = skeleton_forward(pred.data(), h, w, cfg.iterations);
    let sg = skeleton_forward(gt.data(), h, w, cfg.iterations);
    let (skel_p, skel_g) = (sp.skeleton(), sg.skeleton());
    let ClDiceParts { tprec, tsens } = cldice_parts(pred.data(), gt.data(), skel_p, skel_g);
    let denom = (tprec + tsens).powi(2);
    let d_tprec = -2.0 * tsens * tsens / denom;
    let d_tsens = -2.0 * tprec * tprec / denom;

    let a = dot(skel_p, gt.data()) + SMOOTH;
    let b = skel_p.iter().sum::<f64>() + SMOOTH;
    let upstream: Vec<f64> = gt.data().iter().map(|&g| d_tprec * (g * b - a) / (b * b)).collect();
    let mut grad = skeleton_backward(&sp, &upstream);

    let d = skel_g.iter().sum::<f64>() + SMOOTH;
    for (g, &s) in grad.iter_mut().zip(skel_g) {
        *g += d_tsens * s / d;
    }
    grad
}

/// Weighted objective `λ1·Dice + λ2·CE + λ3·clDice`.
///
/// `gt_soft` feeds the Dice and clDice terms; `gt_mask` feeds the cross-entropy.
pub fn total_loss(
    pred: &Image,
    gt_soft: &Image,
    gt_mask: &BinaryMask,
    w: &LossWeights,
    cfg: &SoftSkeletonConfig,
) -> Result<f64> {
    Ok(loss_components(pred, gt_soft, gt_mask, w, cfg)?.total(w))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossComponents {
    pub dice: f64,
    pub bce: f64,
    pub cldice: f64,
}

impl LossComponents {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.lambda1 * self.dice + w.lambda2 * self.bce + w.lambda3 * self.cldice
    }
}

pub fn loss_components(
    pred: &Image,
    gt_soft: &Image,
    gt_mask: &BinaryMask,
    w: &LossWeights,
    cfg: &SoftSkeletonConfig,
) -> Result<LossComponents> {
    w.validate()?;
    Ok(LossComponents {
        dice: soft_dice_loss(pred, gt_soft)?,
        bce: bce_loss(pred, gt_mask)?,
        cldice: soft_cldice_loss(pred, gt_soft, cfg)?,
    })
}

/// Analytic gradient of [`total_loss`] with respect to `pred`.
pub fn total_loss_gradient(
    pred: &Image,
    gt_soft: &Image,
    gt_mask: &BinaryMask,
    w: &LossWeights,
    cfg: &SoftSkeletonConfig,
) -> Result<Image> {
    ensure_same_shape(pred.shape(), gt_soft.shape())?;
    ensure_same_shape(pred.shape(), gt_mask.shape())?;
    w.validate()?;
    cfg.validate()?;
    let mut grad = vec![0.0; pred.len()];
    let mut add = |part: Vec<f64>, lambda: f64| {
        if lambda != 0.0 {
            grad.iter_mut().zip(part).for_each(|(g, p)| *g += lambda * p);
        }
    };
    add(soft_dice_grad(pred, gt_soft), w.lambda1);
    add(bce_grad(pred, gt_mask), w.lambda2);
    if w.lambda3 != 0.0 {
        add(cldice_grad(pred, gt_soft, cfg), w.lambda3);
    }
    let (h, wd) = pred.shape();
    Ok(Image::from_raw(h, wd, grad))
}

/// Pixels whose ±[`SKELETON_TIE_MARGIN`] perturbation changes any min/max
/// selection in the prediction's soft skeleton.
pub fn skeleton_tie_pixels(pred: &Image, cfg: &SoftSkeletonConfig) -> Vec<bool> {
    let (h, w) = pred.shape();
    let base = skeleton_forward(pred.data(), h, w, cfg.iterations).selection_pattern();
    let mut x = pred.data().to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            let tied = [SKELETON_TIE_MARGIN, -SKELETON_TIE_MARGIN].iter().any(|&d| {
                x[i] = orig + d;
                skeleton_forward(&x, h, w, cfg.iterations).selection_pattern() != base
            });
            x[i] = orig;
            tied
        })
        .collect()
}

/// Finite-difference check of [`total_loss_gradient`].
///
/// The cross-entropy target is `gt > 0.5`. When the clDice term is active,
/// pixels at soft-skeleton selection ties are skipped.
pub fn gradcheck_losses(
    pred: &Image,
    gt: &Image,
    w: &LossWeights,
    cfg: &SoftSkeletonConfig,
) -> Result<GradCheckReport> {
    let gt_mask = gt.threshold(0.5);
    let grad = total_loss_gradient(pred, gt, &gt_mask, w, cfg)?;
    let tied = if w.lambda3 != 0.0 {
        skeleton_tie_pixels(pred, cfg)
    } else {
        vec![false; pred.len()]
    };
    let (h, wd) = pred.shape();
    let mut x = pred.data().to_vec();
    let mut report = GradCheckReport::default();
    for i in 0..x.len() {
        if tied[i] {
            report.skipped += 1;
            continue;
        }
        let num = central_difference(&mut x, i, FD_STEP, |d| {
            let p = Image::from_raw(h, wd, d.to_vec());
            total_loss(&p, gt, &gt_mask, w, cfg).expect("validated inputs")
        });
        report.record(grad.data()[i], num);
    }
    Ok(report)
}

/// A random prediction in [0.05, 0.95] and a random binary target.
pub fn random_loss_instance(seed: u64, h: usize, w: usize) -> (Image, Image) {
    let mut rng = crate::rng::SeededRng::new(seed);
    let pred = Image::from_fn(h, w, |_, _| rng.next_range(0.05, 0.95));
    let gt = Image::from_fn(h, w, |_, _| if rng.next_f64() > 0.5 { 1.0 } else { 0.0 });
    (pred, gt)
}
