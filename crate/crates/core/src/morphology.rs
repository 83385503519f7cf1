//! Binary morphology: Euclidean dilation, exact distance transform and
//! topology-preserving thinning.
//!
//! Distances are measured between pixel centers. The distance transform uses
//! the separable lower-envelope algorithm of Felzenszwalb and Huttenlocher,
//! which is exact on the integer grid.

use crate::error::{CdsaError, Result};
use crate::image::{BinaryMask, Image};

const FAR: f64 = 1e20;

fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let intersect = |k: usize, v: &[usize]| {
            let p = v[k] as f64;
            ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p)
        };
        // z[0] is -inf, so k never underflows
        let mut s = intersect(k, v);
        while s <= z[k] {
            k -= 1;
            s = intersect(k, v);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest site.
///
/// Returns `None` when there are no sites.
pub fn squared_distance_to_sites(sites: &BinaryMask) -> Option<Vec<f64>> {
    if sites.is_empty_mask() {
        return None;
    }
    let (h, w) = sites.shape();
    let mut grid: Vec<f64> = sites.bits().iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    let n = h.max(w);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    Some(grid)
}

/// Sets every pixel within Euclidean distance `radius` of a set pixel.
pub fn dilate(mask: &BinaryMask, radius: f64) -> Result<BinaryMask> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(CdsaError::arg(format!("dilation radius must be >= 0, got {radius}")));
    }
    let (h, w) = mask.shape();
    let Some(d2) = squared_distance_to_sites(mask) else {
        return Ok(BinaryMask::empty(h, w));
    };
    let r2 = radius * radius;
    Ok(BinaryMask::new(h, w, d2.iter().map(|&d| d <= r2).collect()).expect("shape preserved"))
}

/// Distance from each set pixel to the nearest unset pixel; zero on background.
///
/// Pixels outside the raster are not background, so an all-true mask is an error.
pub fn distance_transform(mask: &BinaryMask) -> Result<Image> {
    let (h, w) = mask.shape();
    let background = mask.not();
    let d2 = squared_distance_to_sites(&background).ok_or(CdsaError::NoBackground)?;
    Ok(Image::new(h, w, d2.into_iter().map(f64::sqrt).collect()).expect("finite distances"))
}

/// Neighbours P2..P9 clockwise from north; out-of-range pixels read as unset.
#[inline]
fn neighbours(bits: &[bool], h: usize, w: usize, y: usize, x: usize) -> [bool; 8] {
    let at = |dy: isize, dx: isize| -> bool {
        let (ny, nx) = (y as isize + dy, x as isize + dx);
        ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w && bits[ny as usize * w + nx as usize]
    };
    [
        at(-1, 0),
        at(-1, 1),
        at(0, 1),
        at(1, 1),
        at(1, 0),
        at(1, -1),
        at(0, -1),
        at(-1, -1),
    ]
}

/// Yokoi connectivity number for 8-connected foreground; 1 means the pixel is simple.
#[inline]
fn connectivity_number(p: &[bool; 8]) -> u32 {
    let c = |i: usize| !p[i % 8] as u32;
    [0usize, 2, 4, 6].iter().map(|&k| c(k) - c(k) * c(k + 1) * c(k + 2)).sum()
}

/// Zhang–Suen thinning with a sequential simple-point check.
///
/// Candidates for each sub-iteration are chosen with the classic Zhang–Suen
/// tests on a snapshot. They are then removed one at a time in raster order,
/// and only while they are still simple and not end points. Plain parallel
/// Zhang–Suen erases 2×2 blocks; the sequential check keeps the number of
/// 8-connected components.
pub fn hard_skeleton(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.shape();
    let mut bits = mask.bits().to_vec();
    let mut candidates = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            candidates.clear();
            for y in 0..h {
                for x in 0..w {
                    if !bits[y * w + x] {
                        continue;
                    }
                    let p = neighbours(&bits, h, w, y, x);
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let transitions = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    if transitions != 1 {
                        continue;
                    }
                    // p[0]=N, p[2]=E, p[4]=S, p[6]=W
                    let keep = if pass == 0 {
                        (p[0] && p[2] && p[4]) || (p[2] && p[4] && p[6])
                    } else {
                        (p[0] && p[2] && p[6]) || (p[0] && p[4] && p[6])
                    };
                    if !keep {
                        candidates.push(y * w + x);
                    }
                }
            }
            for &i in &candidates {
                let (y, x) = (i / w, i % w);
                let p = neighbours(&bits, h, w, y, x);
                let b = p.iter().filter(|&&v| v).count();
                if b >= 2 && connectivity_number(&p) == 1 {
                    bits[i] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    BinaryMask::new(h, w, bits).expect("shape preserved")
}
