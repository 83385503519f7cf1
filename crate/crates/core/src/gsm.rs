//! Gated spatial modulation.
//!
//! The vesselness prior is max-pooled to the feature resolution, passed
//! through a 1×1 convolution, inference-mode batch norm and a sigmoid to
//! give a gate `G` in (0, 1); features are then rescaled as `F · (1 + G)`.

use crate::error::{CdsaError, Result};
use crate::gradcheck::{central_difference, GradCheckReport, FD_STEP};
use crate::rng::SeededRng;
use crate::tensor::Tensor4;

pub const BN_EPS: f64 = 1e-5;
/// Pooling window used by the gate.
pub const POOL_KERNEL: usize = 2;
/// Pooling windows whose two largest entries are closer than this are
/// skipped by the gradient check (max-pool subgradient).
pub const POOL_TIE_MARGIN: f64 = 1e-3;

/// 1×1 convolution followed by inference-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1x1Params {
    pub c_in: usize,
    pub c_out: usize,
    /// Row-major `c_out × c_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub bn_mean: Vec<f64>,
    pub bn_var: Vec<f64>,
}

impl Conv1x1Params {
    pub fn new(
        c_in: usize,
        c_out: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        bn_gamma: Vec<f64>,
        bn_beta: Vec<f64>,
        bn_mean: Vec<f64>,
        bn_var: Vec<f64>,
    ) -> Result<Self> {
        let p = Self { c_in, c_out, weights, bias, bn_gamma, bn_beta, bn_mean, bn_var };
        p.validate()?;
        Ok(p)
    }

    /// Zero weights and bias with an identity batch norm.
    pub fn zeroed(c_in: usize, c_out: usize) -> Self {
        Self {
            c_in,
            c_out,
            weights: vec![0.0; c_in * c_out],
            bias: vec![0.0; c_out],
            bn_gamma: vec![1.0; c_out],
            bn_beta: vec![0.0; c_out],
            bn_mean: vec![0.0; c_out],
            bn_var: vec![1.0; c_out],
        }
    }

    pub fn random(c_in: usize, c_out: usize, rng: &mut SeededRng) -> Self {
        let mut draw = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.next_range(lo, hi)).collect() };
        Self {
            c_in,
            c_out,
            weights: draw(c_in * c_out, -1.0, 1.0),
            bias: draw(c_out, -0.5, 0.5),
            bn_gamma: draw(c_out, 0.5, 1.5),
            bn_beta: draw(c_out, -0.5, 0.5),
            bn_mean: draw(c_out, -0.2, 0.2),
            bn_var: draw(c_out, 0.5, 1.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (ci, co) = (self.c_in, self.c_out);
        if self.weights.len() != ci * co {
            return Err(CdsaError::arg(format!("weights must be {co}x{ci}")));
        }
        for (name, v) in [
            ("bias", &self.bias),
            ("bn_gamma", &self.bn_gamma),
            ("bn_beta", &self.bn_beta),
            ("bn_mean", &self.bn_mean),
            ("bn_var", &self.bn_var),
        ] {
            if v.len() != co {
                return Err(CdsaError::arg(format!("{name} must have {co} entries")));
            }
        }
        if self.bn_var.iter().any(|&v| !(v >= 0.0)) {
            return Err(CdsaError::arg("bn_var must be >= 0"));
        }
        Ok(())
    }

    #[inline]
    fn bn_scale(&self, o: usize) -> f64 {
        self.bn_gamma[o] / (self.bn_var[o] + BN_EPS).sqrt()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Non-overlapping max pooling; also returns the flat input index of each maximum.
fn max_pool_with_argmax(t: &Tensor4, kernel: usize) -> Result<(Tensor4, Vec<usize>)> {
    let (n, c, h, w) = t.dims();
    if kernel == 0 || h % kernel != 0 || w % kernel != 0 {
        return Err(CdsaError::arg(format!(
            "spatial dims {h}x{w} are not divisible by pooling kernel {kernel}"
        )));
    }
    let (oh, ow) = (h / kernel, w / kernel);
    let mut out = Tensor4::zeros(n, c, oh, ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = t.index(b, ch, oy * kernel, ox * kernel);
                    for dy in 0..kernel {
                        for dx in 0..kernel {
                            let i = t.index(b, ch, oy * kernel + dy, ox * kernel + dx);
                            if t.data()[i] > t.data()[best] {
                                best = i;
                            }
                        }
                    }
                    out.set(b, ch, oy, ox, t.data()[best]);
                    arg.push(best);
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool2(t: &Tensor4, kernel: usize) -> Result<Tensor4> {
    max_pool_with_argmax(t, kernel).map(|(out, _)| out)
}

struct GateTrace {
    pooled: Tensor4,
    argmax: Vec<usize>,
    gate: Tensor4,
}

fn gate_forward(p_geom: &Tensor4, params: &Conv1x1Params, kernel: usize) -> Result<GateTrace> {
    params.validate()?;
    let (n, c, _, _) = p_geom.dims();
    if c != params.c_in {
        return Err(CdsaError::arg(format!(
            "prior has {c} channels but the 1x1 conv expects {}",
            params.c_in
        )));
    }
    let (pooled, argmax) = max_pool_with_argmax(p_geom, kernel)?;
    let (_, _, ph, pw) = pooled.dims();
    let gate = Tensor4::from_fn(n, params.c_out, ph, pw, |b, o, y, x| {
        let mut z = params.bias[o];
        for ci in 0..params.c_in {
            z += params.weights[o * params.c_in + ci] * pooled.get(b, ci, y, x);
        }
        let bn = (z - params.bn_mean[o]) * params.bn_scale(o) + params.bn_beta[o];
        sigmoid(bn)
    });
    Ok(GateTrace { pooled, argmax, gate })
}

/// `sigmoid(BN(Conv1x1(MaxPool(p_geom, kernel))))`
pub fn spatial_gate(p_geom: &Tensor4, params: &Conv1x1Params, kernel: usize) -> Result<Tensor4> {
    gate_forward(p_geom, params, kernel).map(|t| t.gate)
}

/// Integer nearest-neighbour upsampling factors taking the gate to the feature grid.
fn upsample_factors(f: &Tensor4, gate: &Tensor4) -> Result<(usize, usize)> {
    let (fn_, fc, fh, fw) = f.dims();
    let (gn, gc, gh, gw) = gate.dims();
    let ok = fn_ == gn && fc == gc && gh > 0 && gw > 0 && fh % gh == 0 && fw % gw == 0;
    if !ok {
        return Err(CdsaError::arg(format!(
            "gate {gn}x{gc}x{gh}x{gw} is incompatible with features {fn_}x{fc}x{fh}x{fw}"
        )));
    }
    Ok((fh / gh, fw / gw))
}

/// Residual gating `F · (1 + G)`, upsampling a coarser gate by nearest neighbour.
pub fn gated_modulation(f: &Tensor4, gate: &Tensor4) -> Result<Tensor4> {
    let (sy, sx) = upsample_factors(f, gate)?;
    let (n, c, h, w) = f.dims();
    Ok(Tensor4::from_fn(n, c, h, w, |b, ch, y, x| {
        f.get(b, ch, y, x) * (1.0 + gate.get(b, ch, y / sy, x / sx))
    }))
}

fn objective(f: &Tensor4, p: &Tensor4, params: &Conv1x1Params) -> f64 {
    let gate = spatial_gate(p, params, POOL_KERNEL).expect("validated shapes");
    gated_modulation(f, &gate).expect("validated shapes").data().iter().sum()
}

/// Analytic gradients of `Σ F̂` with respect to features, prior, weights and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct GsmGradients {
    pub features: Vec<f64>,
    pub prior: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn gsm_sum_gradients(f: &Tensor4, p_geom: &Tensor4, params: &Conv1x1Params) -> Result<GsmGradients> {
    let trace = gate_forward(p_geom, params, POOL_KERNEL)?;
    let gate = &trace.gate;
    let (sy, sx) = upsample_factors(f, gate)?;
    let (n, c, h, w) = f.dims();
    let mut features = vec![0.0; f.data().len()];
    // dL/dG accumulates the features covered by each gate cell
    let mut d_gate = Tensor4::zeros(n, c, h / sy, w / sx);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let g = gate.get(b, ch, y / sy, x / sx);
                    features[f.index(b, ch, y, x)] = 1.0 + g;
                    let i = d_gate.index(b, ch, y / sy, x / sx);
                    d_gate.data_mut()[i] += f.get(b, ch, y, x);
                }
            }
        }
    }
    let (_, _, ph, pw) = gate.dims();
    let mut weights = vec![0.0; params.weights.len()];
    let mut bias = vec![0.0; params.c_out];
    let mut d_pooled = Tensor4::zeros(n, params.c_in, ph, pw);
    for b in 0..n {
        for o in 0..params.c_out {
            for y in 0..ph {
                for x in 0..pw {
                    let g = gate.get(b, o, y, x);
                    let d_conv = d_gate.get(b, o, y, x) * g * (1.0 - g) * params.bn_scale(o);
                    bias[o] += d_conv;
                    for ci in 0..params.c_in {
                        weights[o * params.c_in + ci] += d_conv * trace.pooled.get(b, ci, y, x);
                        let j = d_pooled.index(b, ci, y, x);
                        d_pooled.data_mut()[j] += d_conv * params.weights[o * params.c_in + ci];
                    }
                }
            }
        }
    }
    let mut prior = vec![0.0; p_geom.data().len()];
    for (k, &src) in trace.argmax.iter().enumerate() {
        prior[src] += d_pooled.data()[k];
    }
    Ok(GsmGradients { features, prior, weights, bias })
}

/// Flat prior indices that belong to pooling windows with a near tie.
fn tied_prior_elements(p: &Tensor4, kernel: usize) -> Vec<bool> {
    let (n, c, h, w) = p.dims();
    let mut tied = vec![false; p.data().len()];
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..h / kernel {
                for ox in 0..w / kernel {
                    let mut idx = Vec::with_capacity(kernel * kernel);
                    for dy in 0..kernel {
                        for dx in 0..kernel {
                            idx.push(p.index(b, ch, oy * kernel + dy, ox * kernel + dx));
                        }
                    }
                    let mut vals: Vec<f64> = idx.iter().map(|&i| p.data()[i]).collect();
                    vals.sort_by(|a, b| b.total_cmp(a));
                    if vals.len() > 1 && vals[0] - vals[1] < POOL_TIE_MARGIN {
                        idx.iter().for_each(|&i| tied[i] = true);
                    }
                }
            }
        }
    }
    tied
}

/// Per-input-group results of [`gradcheck_gsm`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GsmGradCheck {
    pub features: GradCheckReport,
    pub prior: GradCheckReport,
    pub weights: GradCheckReport,
    pub bias: GradCheckReport,
}

impl GsmGradCheck {
    pub fn overall(&self) -> GradCheckReport {
        let mut all = self.features.clone();
        for r in [&self.prior, &self.weights, &self.bias] {
            all.merge(r);
        }
        all
    }
}

/// Compares [`gsm_sum_gradients`] with central differences for every
/// feature, prior, weight and bias element.
///
/// Prior elements in pooling windows with a near tie are skipped.
pub fn gradcheck_gsm(f_l: &Tensor4, p_geom: &Tensor4, params: &Conv1x1Params) -> Result<GsmGradCheck> {
    let grads = gsm_sum_gradients(f_l, p_geom, params)?;
    let mut out = GsmGradCheck::default();
    let report = &mut out.features;

    let mut fd = f_l.data().to_vec();
    let dims = f_l.dims();
    for (i, &a) in grads.features.iter().enumerate() {
        let num = central_difference(&mut fd, i, FD_STEP, |d| {
            let t = Tensor4::new(dims.0, dims.1, dims.2, dims.3, d.to_vec()).unwrap();
            objective(&t, p_geom, params)
        });
        report.record(a, num);
    }

    let report = &mut out.prior;
    let tied = tied_prior_elements(p_geom, POOL_KERNEL);
    let mut pd = p_geom.data().to_vec();
    let pdims = p_geom.dims();
    for (i, &a) in grads.prior.iter().enumerate() {
        if tied[i] {
            report.skipped += 1;
            continue;
        }
        let num = central_difference(&mut pd, i, FD_STEP, |d| {
            let t = Tensor4::new(pdims.0, pdims.1, pdims.2, pdims.3, d.to_vec()).unwrap();
            objective(f_l, &t, params)
        });
        report.record(a, num);
    }

    let report = &mut out.weights;
    let mut wd = params.weights.clone();
    for (i, &a) in grads.weights.iter().enumerate() {
        let num = central_difference(&mut wd, i, FD_STEP, |d| {
            let mut p = params.clone();
            p.weights = d.to_vec();
            objective(f_l, p_geom, &p)
        });
        report.record(a, num);
    }

    let report = &mut out.bias;
    let mut bd = params.bias.clone();
    for (i, &a) in grads.bias.iter().enumerate() {
        let num = central_difference(&mut bd, i, FD_STEP, |d| {
            let mut p = params.clone();
            p.bias = d.to_vec();
            objective(f_l, p_geom, &p)
        });
        report.record(a, num);
    }
    Ok(out)
}

/// A small random gate problem: features `1×c×h/2×w/2`, a single-channel
/// `1×1×h×w` prior in [0, 1) and random conv/BN parameters.
pub fn random_gsm_instance(seed: u64, c_out: usize, h: usize, w: usize) -> (Tensor4, Tensor4, Conv1x1Params) {
    let mut rng = SeededRng::new(seed);
    let p = Tensor4::from_fn(1, 1, h, w, |_, _, _, _| rng.next_f64());
    let f = Tensor4::from_fn(1, c_out, h / POOL_KERNEL, w / POOL_KERNEL, |_, _, _, _| rng.next_range(-1.0, 1.0));
    let params = Conv1x1Params::random(1, c_out, &mut rng);
    (f, p, params)
}
