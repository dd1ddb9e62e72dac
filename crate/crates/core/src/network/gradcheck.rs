//! Fourth-order central finite-difference check of [`Model::backward`].
//!
//! Uses the smooth spike function so the loss is differentiable, and a fixed
//! random linear functional of the output as the loss.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ForwardOptions, Model, ModelOutput};
use crate::error::Result;
use crate::spiking::SpikeFn;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    /// `‖g_fd - g‖ / max(‖g_fd‖, ‖g‖, ABS_FLOOR)`.
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

fn random_like(out: &ModelOutput, rng: &mut ChaCha8Rng) -> ModelOutput {
    let mut fill = |a: &Array2<f64>| Array2::from_shape_simple_fn(a.dim(), || rng.random_range(-1.0..1.0));
    match out {
        ModelOutput::Logits(l) => ModelOutput::Logits(fill(l)),
        ModelOutput::Sequences(s) => ModelOutput::Sequences(s.iter().map(&mut fill).collect()),
    }
}

fn pair(out: &ModelOutput, weights: &ModelOutput) -> f64 {
    match (out, weights) {
        (ModelOutput::Logits(a), ModelOutput::Logits(b)) => (a * b).sum(),
        (ModelOutput::Sequences(a), ModelOutput::Sequences(b)) => a.iter().zip(b).map(|(x, w)| (x * w).sum()).sum(),
        _ => unreachable!("output kinds agree"),
    }
}

/// Denominator floor, so parameters whose true gradient is zero (for example
/// a bias followed by batch norm) are judged on absolute error.
pub const ABS_FLOOR: f64 = 1e-6;

/// Compares analytic and numeric gradients of every trainable parameter.
pub fn check_gradients(
    model: &Model,
    inputs: &[Array2<f64>],
    training: bool,
    step: f64,
    seed: u64,
) -> Result<Vec<ParamCheck>> {
    let base = if training {
        ForwardOptions::train(seed)
    } else {
        ForwardOptions::eval()
    };
    let opts = base.with_spike_fn(SpikeFn::Smooth);
    let (out, tape) = model.forward(inputs, &opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let weights = random_like(&out, &mut rng);
    let grads = model.backward(&tape, &weights)?;

    let mut probe = model.clone();
    let mut report = Vec::new();
    for (idx, p) in model.params().iter().enumerate() {
        if !p.role.trainable() {
            continue;
        }
        let analytic = grads.iter().nth(idx).expect("aligned gradients").1.to_vec();
        let mut numeric = vec![0.0; p.data.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = p.data[k];
            let id = probe.params().find(&p.name).expect("same layout");
            let mut at = |delta: f64| -> Result<f64> {
                probe.params_mut().data_mut(id)[k] = orig + delta;
                let v = pair(&probe.forward(inputs, &opts)?.0, &weights);
                probe.params_mut().data_mut(id)[k] = orig;
                Ok(v)
            };
            let (p1, m1, p2, m2) = (at(step)?, at(-step)?, at(2.0 * step)?, at(-2.0 * step)?);
            *slot = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = numeric.iter().zip(&analytic).map(|(a, b)| a - b).collect();
        let (na, nn) = (norm(&analytic), norm(&numeric));
        let denom = na.max(nn).max(ABS_FLOOR);
        report.push(ParamCheck {
            name: p.name.clone(),
            rel_error: norm(&diff) / denom,
            analytic_norm: na,
            numeric_norm: nn,
        });
    }
    Ok(report)
}
