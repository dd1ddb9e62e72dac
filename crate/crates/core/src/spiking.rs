//! Heaviside spiking with double-Gaussian surrogate gradients.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{parameter, structural, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Binary `L x F` activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTensor {
    len: usize,
    features: usize,
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn zeros(len: usize, features: usize) -> Self {
        Self {
            len,
            features,
            data: vec![0; len * features],
        }
    }

    pub fn from_fn(len: usize, features: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(len * features);
        for t in 0..len {
            for k in 0..features {
                data.push(f(t, k) as u8);
            }
        }
        Self { len, features, data }
    }

    /// Accepts a real tensor whose entries are exactly 0 or 1.
    pub fn from_dense(x: ArrayView2<f64>) -> Result<Self> {
        let (len, features) = x.dim();
        let mut data = Vec::with_capacity(len * features);
        for ((t, k), &v) in x.indexed_iter() {
            if v == 0.0 {
                data.push(0);
            } else if v == 1.0 {
                data.push(1);
            } else {
                return Err(structural(format!("non-binary value {v} at ({t}, {k})")));
            }
        }
        Ok(Self { len, features, data })
    }

    pub fn to_dense(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len, self.features), |(t, k)| {
            self.data[t * self.features + k] as f64
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn get(&self, t: usize, k: usize) -> bool {
        self.data[t * self.features + k] != 0
    }

    pub fn row(&self, t: usize) -> &[u8] {
        &self.data[t * self.features..(t + 1) * self.features]
    }

    pub fn spike_count(&self) -> u64 {
        self.data.iter().map(|&b| b as u64).sum()
    }

    /// Exact count ratio `spikes / (L F)`.
    pub fn firing_rate(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.spike_count() as f64 / self.data.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub theta: Vec<f64>,
    pub trainable: bool,
}

impl ThresholdParams {
    pub fn new(theta: Vec<f64>) -> Self {
        Self { theta, trainable: true }
    }

    pub fn constant(features: usize, value: f64) -> Self {
        Self::new(vec![value; features])
    }
}

/// Double-Gaussian surrogate `g(x) = (1+h) N(x; 0, σ²) - 2h N(x; 0, (6σ)²)`, times `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    pub sigma: f64,
    pub h: f64,
    pub scale: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            h: 0.15,
            scale: 1.0,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(parameter(format!("surrogate sigma must be > 0, got {}", self.sigma)));
        }
        if !(0.0..1.0).contains(&self.h) {
            return Err(parameter(format!("surrogate h must lie in [0, 1), got {}", self.h)));
        }
        if !self.scale.is_finite() {
            return Err(parameter("surrogate scale must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn grad(&self, x: f64) -> f64 {
        let s = self.sigma;
        let wide = 6.0 * s;
        let narrow = (1.0 + self.h) * INV_SQRT_2PI / s * (-0.5 * (x / s) * (x / s)).exp();
        let broad = 2.0 * self.h * INV_SQRT_2PI / wide * (-0.5 * (x / wide) * (x / wide)).exp();
        self.scale * (narrow - broad)
    }

    /// Antiderivative of [`grad`](Self::grad) vanishing at `-∞`; tends to
    /// `scale (1 - h)` at `+∞`.
    #[inline]
    pub fn smooth_step(&self, x: f64) -> f64 {
        let phi = |z: f64| 0.5 * (1.0 + libm::erf(z * std::f64::consts::FRAC_1_SQRT_2));
        let s = self.sigma;
        self.scale * ((1.0 + self.h) * phi(x / s) - 2.0 * self.h * phi(x / (6.0 * s)))
    }
}

/// Forward nonlinearity applied at every threshold site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpikeFn {
    /// `Θ(x) = 1[x >= 0]`; outputs are binary.
    #[default]
    Heaviside,
    /// Replaces `Θ` by the surrogate antiderivative so that forward and
    /// backward are exactly consistent (used for gradient checking).
    Smooth,
}

impl SpikeFn {
    #[inline]
    pub fn apply(self, x: f64, surrogate: &SurrogateConfig) -> f64 {
        match self {
            SpikeFn::Heaviside => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeFn::Smooth => surrogate.smooth_step(x),
        }
    }

    pub fn is_binary(self) -> bool {
        self == SpikeFn::Heaviside
    }
}

fn check_theta(features: usize, theta: &ThresholdParams) -> Result<()> {
    if theta.theta.len() != features {
        return Err(structural(format!(
            "threshold has {} entries for {features} features",
            theta.theta.len()
        )));
    }
    if theta.theta.iter().any(|t| !t.is_finite()) {
        return Err(parameter("threshold is not finite"));
    }
    Ok(())
}

/// `z = Θ(v - θ)` with `θ` broadcast over time; `v = θ` spikes. No reset.
pub fn spike_forward(v: ArrayView2<f64>, theta: &ThresholdParams) -> Result<SpikeTensor> {
    let (len, features) = v.dim();
    check_theta(features, theta)?;
    Ok(SpikeTensor::from_fn(len, features, |t, k| v[[t, k]] >= theta.theta[k]))
}

/// Stateless integrate-and-fire used after the encoder's batch norm: each
/// step is thresholded independently, identical to [`spike_forward`].
pub fn if_neuron(pre_activation: ArrayView2<f64>, theta: &ThresholdParams) -> Result<SpikeTensor> {
    spike_forward(pre_activation, theta)
}

/// Surrogate backward pass: `(upstream ⊙ g(v-θ), -Σ_t upstream ⊙ g(v-θ))`.
pub fn spike_backward(
    v: ArrayView2<f64>,
    theta: &ThresholdParams,
    upstream: ArrayView2<f64>,
    surrogate: &SurrogateConfig,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let (len, features) = v.dim();
    check_theta(features, theta)?;
    if upstream.dim() != (len, features) {
        return Err(structural(format!(
            "upstream gradient shape {:?} differs from input {:?}",
            upstream.dim(),
            (len, features)
        )));
    }
    let mut grad_theta = vec![0.0; features];
    let grad_v = Array2::from_shape_fn((len, features), |(t, k)| {
        let g = upstream[[t, k]] * surrogate.grad(v[[t, k]] - theta.theta[k]);
        grad_theta[k] -= g;
        g
    });
    Ok((grad_v, grad_theta))
}
