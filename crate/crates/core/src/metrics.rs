//! Segmentation and image-quality metrics: Dice/IoU, hard clDice, HD95,
//! PSNR, SSIM, their vessel / non-vessel restrictions, and the threshold
//! segmentation protocol.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CdsaError, Result};
use crate::image::{ensure_same_shape, BinaryMask, Image};
use crate::morphology::{hard_skeleton, squared_distance_to_sites};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const HD_PERCENTILE: f64 = 95.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Global,
    Vessel,
    NonVessel,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Global => "global",
            Self::Vessel => "vessel",
            Self::NonVessel => "non_vessel",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub region: Region,
    pub params: BTreeMap<String, String>,
    /// Set when the true value is +∞ and `value` holds a sentinel.
    pub infinite: bool,
}

impl MetricReport {
    pub fn new(name: &str, value: f64, region: Region) -> Self {
        Self { name: name.to_string(), value, region, params: BTreeMap::new(), infinite: false }
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }
}

/// `(dice, iou)`; two empty masks score 1 on both.
pub fn dice_iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<(f64, f64)> {
    ensure_same_shape(pred.shape(), gt.shape())?;
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.bits().iter().zip(gt.bits()) {
        inter += (a && b) as usize;
        p += a as usize;
        g += b as usize;
    }
    if p + g == 0 {
        return Ok((1.0, 1.0));
    }
    let union = p + g - inter;
    Ok((2.0 * inter as f64 / (p + g) as f64, inter as f64 / union as f64))
}

fn overlap_fraction(skel: &BinaryMask, mask: &BinaryMask) -> f64 {
    let n = skel.count();
    if n == 0 {
        return 0.0;
    }
    let hit = skel.bits().iter().zip(mask.bits()).filter(|(&s, &m)| s && m).count();
    hit as f64 / n as f64
}

/// Harmonic mean of topology precision and sensitivity over hard skeletons.
///
/// An empty skeleton contributes a ratio of 0, unless both skeletons are
/// empty, which scores 1.
pub fn hard_cldice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    ensure_same_shape(pred.shape(), gt.shape())?;
    let sp = hard_skeleton(pred);
    let sg = hard_skeleton(gt);
    if sp.is_empty_mask() && sg.is_empty_mask() {
        return Ok(1.0);
    }
    let tprec = overlap_fraction(&sp, gt);
    let tsens = overlap_fraction(&sg, pred);
    if tprec + tsens == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * tprec * tsens / (tprec + tsens))
}

/// Mask pixels with at least one unset 4-neighbour; the raster edge counts as unset.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.shape();
    BinaryMask::from_fn(h, w, |y, x| {
        mask.get(y, x)
            && (y == 0 || x == 0 || y + 1 == h || x + 1 == w
                || !mask.get(y - 1, x)
                || !mask.get(y + 1, x)
                || !mask.get(y, x - 1)
                || !mask.get(y, x + 1))
    })
}

/// Linear-interpolation percentile (`q` in [0, 100]) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// 95th percentile of the pooled boundary-to-boundary distances in both
/// directions, times `spacing` (mm per pixel).
pub fn hd95(pred: &BinaryMask, gt: &BinaryMask, spacing: f64) -> Result<f64> {
    ensure_same_shape(pred.shape(), gt.shape())?;
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(CdsaError::arg(format!("spacing must be > 0, got {spacing}")));
    }
    if pred.is_empty_mask() || gt.is_empty_mask() {
        return Err(CdsaError::UndefinedMetric("hd95 needs two nonempty masks".into()));
    }
    let bp = boundary(pred);
    let bg = boundary(gt);
    let dp = squared_distance_to_sites(&bp).expect("nonempty boundary");
    let dg = squared_distance_to_sites(&bg).expect("nonempty boundary");
    let mut pooled = Vec::with_capacity(bp.count() + bg.count());
    for (i, &b) in bp.bits().iter().enumerate() {
        if b {
            pooled.push(dg[i].sqrt());
        }
    }
    for (i, &b) in bg.bits().iter().enumerate() {
        if b {
            pooled.push(dp[i].sqrt());
        }
    }
    Ok(percentile(&pooled, HD_PERCENTILE).expect("nonempty") * spacing)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Psnr {
    /// Decibels, or [`PSNR_CAP_DB`] when `infinite`.
    pub db: f64,
    pub infinite: bool,
}

fn psnr_from_mse(mse: f64, data_range: f64) -> Psnr {
    if mse == 0.0 {
        Psnr { db: PSNR_CAP_DB, infinite: true }
    } else {
        Psnr { db: 10.0 * (data_range * data_range / mse).log10(), infinite: false }
    }
}

fn check_range(data_range: f64) -> Result<()> {
    if !(data_range > 0.0) || !data_range.is_finite() {
        return Err(CdsaError::arg(format!("data_range must be > 0, got {data_range}")));
    }
    Ok(())
}

pub fn psnr(a: &Image, b: &Image, data_range: f64) -> Result<Psnr> {
    ensure_same_shape(a.shape(), b.shape())?;
    check_range(data_range)?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(psnr_from_mse(mse, data_range))
}

fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let g: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let mut w: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Local SSIM for every window lying fully inside the image, indexed by
/// window centre on a `(h − 10) × (w − 10)` grid.
pub fn ssim_map(a: &Image, b: &Image, data_range: f64) -> Result<Image> {
    ensure_same_shape(a.shape(), b.shape())?;
    check_range(data_range)?;
    let (h, w) = a.shape();
    let k = SSIM_WINDOW;
    if h < k || w < k {
        return Err(CdsaError::arg(format!("ssim needs at least {k}x{k} pixels, got {h}x{w}")));
    }
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let win = ssim_window();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = vec![0.0; oh * ow];
    let (da, db) = (a.data(), b.data());
    out.par_chunks_mut(ow).enumerate().for_each(|(oy, row)| {
        for (ox, o) in row.iter_mut().enumerate() {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..k {
                let base = (oy + dy) * w + ox;
                for dx in 0..k {
                    let wt = win[dy * k + dx];
                    let (x, y) = (da[base + dx], db[base + dx]);
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            *o = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    });
    Ok(Image::from_raw(oh, ow, out))
}

/// Mean local SSIM over valid windows (11×11 Gaussian, σ = 1.5).
pub fn ssim(a: &Image, b: &Image, data_range: f64) -> Result<f64> {
    let m = ssim_map(a, b, data_range)?;
    Ok(m.sum() / m.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QualityMetric {
    Psnr,
    Ssim,
}

fn region_bits(mask: &BinaryMask, region: Region) -> Vec<bool> {
    match region {
        Region::Global => vec![true; mask.bits().len()],
        Region::Vessel => mask.bits().to_vec(),
        Region::NonVessel => mask.bits().iter().map(|b| !b).collect(),
    }
}

/// PSNR over the region's pixels, or SSIM averaged over the windows whose
/// centre lies in the region.
pub fn masked_metric(
    a: &Image,
    b: &Image,
    mask: &BinaryMask,
    which: QualityMetric,
    region: Region,
    data_range: f64,
) -> Result<MetricReport> {
    ensure_same_shape(a.shape(), b.shape())?;
    ensure_same_shape(a.shape(), mask.shape())?;
    let bits = region_bits(mask, region);
    let prefix = match region {
        Region::Global => "",
        Region::Vessel => "v",
        Region::NonVessel => "nv",
    };
    match which {
        QualityMetric::Psnr => {
            check_range(data_range)?;
            let (mut sse, mut n) = (0.0, 0usize);
            for (i, &on) in bits.iter().enumerate() {
                if on {
                    let d = a.data()[i] - b.data()[i];
                    sse += d * d;
                    n += 1;
                }
            }
            if n == 0 {
                return Err(CdsaError::UndefinedMetric(format!("{region} region is empty")));
            }
            let p = psnr_from_mse(sse / n as f64, data_range);
            let mut r = MetricReport::new(&format!("{prefix}psnr"), p.db, region).with_param("data_range", data_range);
            r.infinite = p.infinite;
            Ok(r)
        }
        QualityMetric::Ssim => {
            let map = ssim_map(a, b, data_range)?;
            let off = SSIM_WINDOW / 2;
            let w = a.width();
            let (mut sum, mut n) = (0.0, 0usize);
            for oy in 0..map.height() {
                for ox in 0..map.width() {
                    if bits[(oy + off) * w + ox + off] {
                        sum += map.get(oy, ox);
                        n += 1;
                    }
                }
            }
            if n == 0 {
                return Err(CdsaError::UndefinedMetric(format!("no ssim window centred in the {region} region")));
            }
            Ok(MetricReport::new(&format!("{prefix}ssim"), sum / n as f64, region)
                .with_param("data_range", data_range)
                .with_param("window", SSIM_WINDOW)
                .with_param("sigma", SSIM_SIGMA))
        }
    }
}

/// Dice of `subtracted > threshold` against `gt`.
pub fn threshold_segmentation_dice(subtracted: &Image, gt: &BinaryMask, threshold: f64) -> Result<f64> {
    if !threshold.is_finite() {
        return Err(CdsaError::arg(format!("threshold must be finite, got {threshold}")));
    }
    Ok(dice_iou(&subtracted.threshold(threshold), gt)?.0)
}

/// Otsu threshold over a 256-bin histogram spanning the image range.
pub fn otsu_threshold(img: &Image) -> f64 {
    let (lo, hi) = (img.min(), img.max());
    if !(hi > lo) {
        return lo;
    }
    const BINS: usize = 256;
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0usize; BINS];
    for &v in img.data() {
        hist[(((v - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    let total = img.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_bin) = (-1.0, 0);
    for (i, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_bin = i;
        }
    }
    lo + (best_bin + 1) as f64 * width
}

/// Fréchet inception distance needs a pretrained perceptual network, which
/// this toolkit does not ship.
pub fn fid(_a: &[Image], _b: &[Image]) -> Result<f64> {
    Err(CdsaError::Unsupported(
        "FID/VFID require a pretrained perceptual network and are not available".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: usize, w: usize, y0: usize, x0: usize, s: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |y, x| (y0..y0 + s).contains(&y) && (x0..x0 + s).contains(&x))
    }

    #[test]
    fn dice_examples() {
        let a = square(6, 6, 1, 1, 2);
        let b = square(6, 6, 1, 2, 2);
        let (d, i) = dice_iou(&a, &b).unwrap();
        assert!((d - 0.5).abs() < 1e-15 && (i - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice_iou(&a, &a).unwrap(), (1.0, 1.0));
        assert_eq!(dice_iou(&a, &square(6, 6, 4, 4, 2)).unwrap(), (0.0, 0.0));
        let e = BinaryMask::empty(6, 6);
        assert_eq!(dice_iou(&e, &e).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn hd95_examples() {
        let a = BinaryMask::from_fn(9, 9, |y, x| y == 2 && x == 1);
        let b = BinaryMask::from_fn(9, 9, |y, x| y == 2 && x == 6);
        assert_eq!(hd95(&a, &b, 1.0).unwrap(), 5.0);
        assert_eq!(hd95(&a, &b, 0.5).unwrap(), 2.5);
        assert_eq!(hd95(&a, &a, 1.0).unwrap(), 0.0);
        assert!(matches!(hd95(&a, &BinaryMask::empty(9, 9), 1.0), Err(CdsaError::UndefinedMetric(_))));
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, 0.3);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), Psnr { db: PSNR_CAP_DB, infinite: true });
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap().db - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_examples() {
        let a = Image::from_fn(16, 16, |y, x| ((y / 4 + x / 4) % 2) as f64);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&a, &a.map(|v| 1.0 - v), 1.0).unwrap() < 1.0);
        assert!(ssim(&Image::zeros(10, 16), &Image::zeros(10, 16), 1.0).is_err());
    }

    #[test]
    fn otsu_splits_two_levels() {
        let img = Image::from_fn(10, 10, |y, _| if y < 5 { 0.2 } else { 0.8 });
        let t = otsu_threshold(&img);
        assert!(t > 0.2 && t < 0.8);
    }

    #[test]
    fn fid_is_unsupported() {
        assert!(matches!(fid(&[], &[]), Err(CdsaError::Unsupported(_))));
    }
}
