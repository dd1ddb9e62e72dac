//! Per-sample kernels and batch-norm reductions used by the model.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ops::OpCounter;
use crate::spiking::{SpikeFn, SurrogateConfig};

/// Operand kind of a matrix product's input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Operand {
    /// Entries are exactly 0 or 1: the product is a gather-accumulate.
    Spikes,
    Real,
}

impl Operand {
    pub(crate) fn from_spike_fn(f: SpikeFn) -> Self {
        if f.is_binary() {
            Operand::Spikes
        } else {
            Operand::Real
        }
    }
}

/// `out[t] = W x[t] (+ bias)` for `W` of shape `out x in`.
pub(crate) fn linear(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    bias: Option<&[f64]>,
    operand: Operand,
    counter: Option<&OpCounter>,
) -> Array2<f64> {
    let (len, fin) = x.dim();
    let (fout, win) = w.dim();
    debug_assert_eq!(fin, win);
    let mut out = Array2::zeros((len, fout));
    if let Some(b) = bias {
        for mut row in out.rows_mut() {
            row.iter_mut().zip(b).for_each(|(o, b)| *o = *b);
        }
    }
    match operand {
        Operand::Spikes => {
            let wt = w.t();
            let mut active = 0u64;
            for (t, xrow) in x.rows().into_iter().enumerate() {
                let mut orow = out.row_mut(t);
                for (j, &s) in xrow.iter().enumerate() {
                    debug_assert!(s == 0.0 || s == 1.0, "spike operand holds {s}");
                    if s != 0.0 {
                        active += 1;
                        orow.iter_mut().zip(wt.row(j)).for_each(|(o, w)| *o += *w);
                    }
                }
            }
            if let Some(c) = counter {
                c.add_accumulates(active * fout as u64);
            }
        }
        Operand::Real => {
            out += &x.dot(&w.t());
            if let Some(c) = counter {
                c.add_multiplies((len * fin * fout) as u64);
            }
        }
    }
    out
}

/// Weight gradient `Σ_t dout[t] x[t]^T`.
pub(crate) fn weight_grad(x: ArrayView2<f64>, dout: ArrayView2<f64>) -> Array2<f64> {
    dout.t().dot(&x).as_standard_layout().into_owned()
}

/// Applies the threshold nonlinearity elementwise: `f(pre - θ)`.
pub(crate) fn threshold(pre: &Array2<f64>, theta: &[f64], f: SpikeFn, sg: &SurrogateConfig) -> Array2<f64> {
    let mut out = pre.clone();
    for mut row in out.rows_mut() {
        row.iter_mut().zip(theta).for_each(|(x, th)| *x = f.apply(*x - th, sg));
    }
    out
}

/// Surrogate backward of [`threshold`]: scales `upstream` in place and
/// accumulates `-Σ` into `grad_theta`.
pub(crate) fn threshold_backward(
    pre: &Array2<f64>,
    theta: &[f64],
    upstream: &mut Array2<f64>,
    grad_theta: &mut [f64],
    sg: &SurrogateConfig,
) {
    for (mut up, prow) in upstream.rows_mut().into_iter().zip(pre.rows()) {
        for (k, (u, p)) in up.iter_mut().zip(prow).enumerate() {
            *u *= sg.grad(*p - theta[k]);
            grad_theta[k] -= *u;
        }
    }
}

/// Keep-mask for spike dropout; `None` when dropout is inactive.
pub(crate) fn dropout_mask(shape: (usize, usize), p: f64, seed: u64) -> Option<Array2<f64>> {
    if p <= 0.0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Some(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < p {
            0.0
        } else {
            1.0
        }
    }))
}

pub(crate) fn apply_mask(x: &mut Array2<f64>, mask: Option<&Array2<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

/// SplitMix64 step, used to derive independent stream seeds.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in parts {
        z = z
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(p.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Per-feature statistics over all samples and steps of a batch.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance (used for normalization).
    pub var: Vec<f64>,
    pub count: usize,
}

/// Two-pass reduction in sample order, so results do not depend on threading.
pub(crate) fn batch_stats(xs: &[Array2<f64>]) -> BatchStats {
    let f = xs[0].ncols();
    let count: usize = xs.iter().map(|x| x.nrows()).sum();
    let mut mean = vec![0.0; f];
    for x in xs {
        for (m, s) in mean.iter_mut().zip(x.sum_axis(Axis(0))) {
            *m += s;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; f];
    for x in xs {
        for row in x.rows() {
            for ((v, &xi), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (xi - m) * (xi - m);
            }
        }
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    BatchStats { mean, var, count }
}

/// Normalizes with the given statistics: returns `(x̂, γ x̂ + β)`.
pub(crate) fn bn_normalize(
    x: &Array2<f64>,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> (Array2<f64>, Array2<f64>) {
    let mut xhat = x.clone();
    for mut row in xhat.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[k]) * inv_std[k];
        }
    }
    let mut out = xhat.clone();
    for mut row in out.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = gamma[k] * *v + beta[k];
        }
    }
    (xhat, out)
}

/// Per-sample sums feeding the batch-norm backward reduction:
/// `(Σ dy, Σ dy·x̂)` over steps.
pub(crate) fn bn_backward_sums(dy: &Array2<f64>, xhat: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let f = dy.ncols();
    let mut s1 = vec![0.0; f];
    let mut s2 = vec![0.0; f];
    for (drow, xrow) in dy.rows().into_iter().zip(xhat.rows()) {
        for k in 0..f {
            s1[k] += drow[k];
            s2[k] += drow[k] * xrow[k];
        }
    }
    (s1, s2)
}

/// Input gradient of training-mode batch norm. `dy` is the gradient of the
/// output `γ x̂ + β`; `sum_dy` and `sum_dy_xhat` are its batch-wide sums
/// (which are also the `β` and `γ` gradients).
pub(crate) fn bn_backward_train(
    dy: &Array2<f64>,
    xhat: &Array2<f64>,
    gamma: &[f64],
    inv_std: &[f64],
    sum_dy: &[f64],
    sum_dy_xhat: &[f64],
    count: usize,
) -> Array2<f64> {
    let n = count as f64;
    let mut dx = dy.clone();
    for (mut drow, xrow) in dx.rows_mut().into_iter().zip(xhat.rows()) {
        for k in 0..drow.len() {
            let g = gamma[k] * inv_std[k];
            drow[k] = g * (drow[k] - sum_dy[k] / n - xrow[k] * sum_dy_xhat[k] / n);
        }
    }
    dx
}

pub(crate) fn bn_backward_eval(dy: &Array2<f64>, gamma: &[f64], inv_std: &[f64]) -> Array2<f64> {
    let mut dx = dy.clone();
    for mut row in dx.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v *= gamma[k] * inv_std[k];
        }
    }
    dx
}
