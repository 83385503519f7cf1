//! Brute-force reference implementations used as test oracles.
//!
//! Everything here is written from the definitions with plain loops and
//! shares no code with the library.
#![allow(dead_code)]

use cdsa_core::{BinaryMask, Image, SeededRng, Tensor4};

/// Half-sample symmetric reflection by repeated mirroring.
pub fn mirror(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

pub fn random_image(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = SeededRng::new(seed);
    Image::from_fn(h, w, |_, _| rng.next_f64())
}

pub fn random_mask(seed: u64, h: usize, w: usize, p: f64) -> BinaryMask {
    let mut rng = SeededRng::new(seed);
    BinaryMask::from_fn(h, w, |_, _| rng.next_f64() < p)
}

/// Dense 2-D Gaussian convolution with a product kernel of radius `ceil(4σ)`.
pub fn dense_gaussian(img: &Image, sigma: f64) -> Image {
    let r = (4.0 * sigma).ceil() as i64;
    let mut weights = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push((dy, dx, (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp()));
        }
    }
    let total: f64 = weights.iter().map(|w| w.2).sum();
    let (h, w) = img.shape();
    Image::from_fn(h, w, |y, x| {
        weights
            .iter()
            .map(|&(dy, dx, wt)| wt * img.get(mirror(y as i64 + dy, h), mirror(x as i64 + dx, w)))
            .sum::<f64>()
            / total
    })
}

pub fn naive_box_mean(img: &Image, k: usize) -> Image {
    let r = (k / 2) as i64;
    let (h, w) = img.shape();
    Image::from_fn(h, w, |y, x| {
        let mut s = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                s += img.get(mirror(y as i64 + dy, h), mirror(x as i64 + dx, w));
            }
        }
        s / (k * k) as f64
    })
}

/// Mean first, then the mean squared deviation inside each window.
pub fn two_pass_variance(img: &Image, k: usize) -> Image {
    let r = (k / 2) as i64;
    let (h, w) = img.shape();
    Image::from_fn(h, w, |y, x| {
        let vals: Vec<f64> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
            .map(|(dy, dx)| img.get(mirror(y as i64 + dy, h), mirror(x as i64 + dx, w)))
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64
    })
}

pub fn brute_dilate(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let pts = mask.points();
    let (h, w) = mask.shape();
    BinaryMask::from_fn(h, w, |y, x| {
        pts.iter().any(|&(py, px)| {
            let (dy, dx) = (py as f64 - y as f64, px as f64 - x as f64);
            (dy * dy + dx * dx).sqrt() <= radius
        })
    })
}

pub fn brute_edt(mask: &BinaryMask) -> Image {
    let bg = mask.not().points();
    let (h, w) = mask.shape();
    Image::from_fn(h, w, |y, x| {
        if !mask.get(y, x) {
            return 0.0;
        }
        bg.iter()
            .map(|&(by, bx)| ((by as f64 - y as f64).powi(2) + (bx as f64 - x as f64).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    })
}

pub fn naive_max_pool(t: &Tensor4, k: usize) -> Tensor4 {
    let (n, c, h, w) = t.dims();
    Tensor4::from_fn(n, c, h / k, w / k, |b, ch, y, x| {
        let mut m = f64::NEG_INFINITY;
        for dy in 0..k {
            for dx in 0..k {
                m = m.max(t.get(b, ch, y * k + dy, x * k + dx));
            }
        }
        m
    })
}

/// `sigmoid(BN(conv1x1(maxpool(p))))` one output value at a time.
#[allow(clippy::too_many_arguments)]
pub fn scalar_gate(
    p: &Tensor4,
    weights: &[f64],
    bias: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    c_out: usize,
) -> Tensor4 {
    let (n, c_in, h, w) = p.dims();
    let pooled = naive_max_pool(p, 2);
    Tensor4::from_fn(n, c_out, h / 2, w / 2, |b, o, y, x| {
        let mut z = bias[o];
        for i in 0..c_in {
            z += weights[o * c_in + i] * pooled.get(b, i, y, x);
        }
        let bn = (z - mean[o]) / (var[o] + 1e-5).sqrt() * gamma[o] + beta[o];
        1.0 / (1.0 + (-bn).exp())
    })
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Boundary by explicit neighbour enumeration, with off-raster pixels unset.
pub fn brute_boundary(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = mask.shape();
    let on = |y: i64, x: i64| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask.get(y as usize, x as usize);
    mask.points()
        .into_iter()
        .filter(|&(y, x)| {
            let (y, x) = (y as i64, x as i64);
            [(0, 1), (1, 0), (0, -1), (-1, 0)].iter().any(|&(dy, dx)| !on(y + dy, x + dx))
        })
        .collect()
}

/// All-pairs HD95 with a linear-interpolation percentile.
pub fn brute_hd95(a: &BinaryMask, b: &BinaryMask, spacing: f64) -> f64 {
    let ba = brute_boundary(a);
    let bb = brute_boundary(b);
    let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| -> Vec<f64> {
        from.iter()
            .map(|&(y, x)| {
                to.iter()
                    .map(|&(v, u)| ((y as f64 - v as f64).powi(2) + (x as f64 - u as f64).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let mut all = directed(&ba, &bb);
    all.extend(directed(&bb, &ba));
    all.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let rank = 0.95 * (all.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let hi = if lo + 1 < all.len() { lo + 1 } else { lo };
    (all[lo] * (1.0 - frac) + all[hi] * frac) * spacing
}

pub fn scalar_psnr(a: &Image, b: &Image, range: f64, region: Option<&[bool]>) -> f64 {
    let mut sse = 0.0;
    let mut n = 0.0;
    for i in 0..a.len() {
        if region.map_or(true, |r| r[i]) {
            sse += (a.data()[i] - b.data()[i]).powi(2);
            n += 1.0;
        }
    }
    10.0 * (range * range / (sse / n)).log10()
}

/// SSIM from the textbook formula over every valid 11×11 window.
/// Returns (mean over all windows, per-window values keyed by centre).
pub fn scalar_ssim(a: &Image, b: &Image, range: f64) -> (f64, Vec<((usize, usize), f64)>) {
    let (h, w) = a.shape();
    let mut g = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);
    let mut vals = Vec::new();
    for cy in 5..h - 5 {
        for cx in 5..w - 5 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = g[i][j] / total;
                    ma += wt * a.get(cy + i - 5, cx + j - 5);
                    mb += wt * b.get(cy + i - 5, cx + j - 5);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = g[i][j] / total;
                    let da = a.get(cy + i - 5, cx + j - 5) - ma;
                    let db = b.get(cy + i - 5, cx + j - 5) - mb;
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * da * db;
                }
            }
            let s = (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            vals.push(((cy, cx), s));
        }
    }
    let mean = vals.iter().map(|v| v.1).sum::<f64>() / vals.len() as f64;
    (mean, vals)
}

/// Vertical dark tube with a Gaussian cross-section of the given radius,
/// centred on column `col`.
pub fn dark_tube(h: usize, w: usize, col: f64, radius: f64) -> Image {
    Image::from_fn(h, w, |_, x| {
        let d = x as f64 - col;
        0.8 - 0.5 * (-(d * d) / (2.0 * radius * radius)).exp()
    })
}

/// Blobby random mask: union of a few random discs.
pub fn random_blobs(seed: u64, h: usize, w: usize, count: usize, max_r: f64) -> BinaryMask {
    let mut rng = SeededRng::new(seed);
    let discs: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| (rng.next_range(0.0, h as f64), rng.next_range(0.0, w as f64), rng.next_range(1.0, max_r)))
        .collect();
    BinaryMask::from_fn(h, w, |y, x| {
        discs.iter().any(|&(cy, cx, r)| (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r)
    })
}

/// Coordinate attention from its definition: axis means, shared ReLU
/// reduction, per-axis sigmoid expansion, product with the input.
pub fn scalar_coord_att(f: &Tensor4, p: &cdsa_core::anm::CoordAttParams) -> Tensor4 {
    let (n, c, h, w) = f.dims();
    let m = p.mid;
    let mut out = f.clone();
    for b in 0..n {
        let mut pooled_h = vec![vec![0.0; h]; c];
        let mut pooled_w = vec![vec![0.0; w]; c];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    pooled_h[ch][y] += f.get(b, ch, y, x) / w as f64;
                    pooled_w[ch][x] += f.get(b, ch, y, x) / h as f64;
                }
            }
        }
        let attend = |pooled: &Vec<Vec<f64>>, len: usize, ew: &[f64], eb: &[f64]| -> Vec<Vec<f64>> {
            let mut hidden = vec![vec![0.0; len]; m];
            for k in 0..m {
                for i in 0..len {
                    let mut z = p.reduce_b[k];
                    for ch in 0..c {
                        z += p.reduce_w[k * c + ch] * pooled[ch][i];
                    }
                    hidden[k][i] = if z > 0.0 { z } else { 0.0 };
                }
            }
            let mut a = vec![vec![0.0; len]; c];
            for ch in 0..c {
                for i in 0..len {
                    let mut z = eb[ch];
                    for k in 0..m {
                        z += ew[ch * m + k] * hidden[k][i];
                    }
                    a[ch][i] = sigmoid(z);
                }
            }
            a
        };
        let a_h = attend(&pooled_h, h, &p.expand_h_w, &p.expand_h_b);
        let a_w = attend(&pooled_w, w, &p.expand_w_w, &p.expand_w_b);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.set(b, ch, y, x, f.get(b, ch, y, x) * a_h[ch][y] * a_w[ch][x]);
                }
            }
        }
    }
    out
}

/// Per-channel masked mean (with the 1e-6 guard) and masked max of the
/// elementwise product, for batch item 0.
pub fn scalar_masked_pool(a: &Tensor4, m: &BinaryMask) -> Vec<f64> {
    let (_, c, h, w) = a.dims();
    let area = m.count() as f64;
    let mut means = Vec::new();
    let mut maxes = Vec::new();
    for ch in 0..c {
        let mut s = 0.0;
        let mut mx = f64::NEG_INFINITY;
        for y in 0..h {
            for x in 0..w {
                let v = a.get(0, ch, y, x) * if m.get(y, x) { 1.0 } else { 0.0 };
                s += v;
                mx = mx.max(v);
            }
        }
        means.push(s / (area + 1e-6));
        maxes.push(mx);
    }
    means.extend(maxes);
    means
}
