//! In-memory datasets, deterministic splits and the synthetic tasks.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{structural, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    /// One `L x out_dim` target sequence per sample.
    Sequences(Vec<Array2<f64>>),
}

/// Variable-length multichannel sequences with targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Array2<f64>>,
    targets: Targets,
}

impl Dataset {
    pub fn new(inputs: Vec<Array2<f64>>, targets: Targets) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        let c = inputs[0].ncols();
        for (i, x) in inputs.iter().enumerate() {
            if x.ncols() != c || x.nrows() == 0 {
                return Err(Error::Data(format!(
                    "sample {i} has shape {:?}, expected (L>0, {c})",
                    x.dim()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("sample {i} contains a non-finite value")));
            }
        }
        match &targets {
            Targets::Labels(l) if l.len() != inputs.len() => {
                return Err(structural(format!("{} labels for {} samples", l.len(), inputs.len())));
            }
            Targets::Sequences(s) => {
                if s.len() != inputs.len() {
                    return Err(structural(format!("{} targets for {} samples", s.len(), inputs.len())));
                }
                let o = s[0].ncols();
                for (i, (y, x)) in s.iter().zip(&inputs).enumerate() {
                    if y.nrows() != x.nrows() || y.ncols() != o {
                        return Err(Error::Data(format!(
                            "target {i} has shape {:?}, input has {} steps",
                            y.dim(),
                            x.nrows()
                        )));
                    }
                    if y.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Data(format!("target {i} contains a non-finite value")));
                    }
                }
            }
            _ => {}
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].ncols()
    }

    pub fn inputs(&self) -> &[Array2<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// Number of classes implied by the largest label.
    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Labels(l) => l.iter().max().map(|m| m + 1),
            Targets::Sequences(_) => None,
        }
    }

    pub fn output_dim(&self) -> Option<usize> {
        match &self.targets {
            Targets::Labels(_) => None,
            Targets::Sequences(s) => Some(s[0].ncols()),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let inputs = idx.iter().map(|&i| self.inputs[i].clone()).collect();
        let targets = match &self.targets {
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
            Targets::Sequences(s) => Targets::Sequences(idx.iter().map(|&i| s[i].clone()).collect()),
        };
        Self { inputs, targets }
    }
}

/// Train/validation/test fractions; must sum to one.
pub const DEFAULT_SPLIT: [f64; 3] = [0.70, 0.15, 0.15];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n` cut at the given fractions.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(crate::error::parameter(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(SplitIndices { train: idx, val, test })
}

/// Two-class noisy sinusoids that differ only in frequency.
///
/// Amplitude and phase are drawn from the same distributions for both
/// classes, so any statistic of the pointwise value distribution carries no
/// label information. Classes alternate, giving an exactly balanced set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencyTask {
    pub samples: usize,
    pub len: usize,
    /// Period in steps of class 0 and class 1.
    pub periods: [f64; 2],
    pub amplitude: (f64, f64),
    pub noise: f64,
    pub seed: u64,
}

impl Default for FrequencyTask {
    fn default() -> Self {
        Self {
            samples: 400,
            len: 1000,
            periods: [50.0, 25.0],
            amplitude: (0.5, 1.5),
            noise: 0.3,
            seed: 0,
        }
    }
}

impl FrequencyTask {
    pub fn generate(&self) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise).map_err(|e| crate::error::parameter(e.to_string()))?;
        let mut inputs = Vec::with_capacity(self.samples);
        let mut labels = Vec::with_capacity(self.samples);
        for i in 0..self.samples {
            let class = i % 2;
            let a = rng.random_range(self.amplitude.0..=self.amplitude.1);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let w = std::f64::consts::TAU / self.periods[class];
            let x = Array2::from_shape_fn((self.len, 1), |(t, _)| a * (w * t as f64 + phase).sin());
            let x = x.mapv(|v| v + noise.sample(&mut rng));
            inputs.push(x);
            labels.push(class);
        }
        Dataset::new(inputs, Targets::Labels(labels))
    }
}

/// Regression onto a lagged window mean: `y_t = mean(x_{t-lag-w+1..=t-lag})`.
///
/// The input is a sum of slow random-phase sinusoids plus white noise, and is
/// generated from step `-(lag + w)` so every target is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayedSumTask {
    pub samples: usize,
    pub len: usize,
    pub lag: usize,
    pub window: usize,
    /// Range of component periods in steps.
    pub periods: (f64, f64),
    pub components: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DelayedSumTask {
    fn default() -> Self {
        Self {
            samples: 120,
            len: 2000,
            lag: 500,
            window: 100,
            periods: (3000.0, 8000.0),
            components: 3,
            noise: 0.3,
            seed: 0,
        }
    }
}

impl DelayedSumTask {
    pub fn generate(&self) -> Result<Dataset> {
        if self.window == 0 || self.components == 0 {
            return Err(crate::error::parameter("window and components must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise).map_err(|e| crate::error::parameter(e.to_string()))?;
        let head = self.lag + self.window;
        let total = head + self.len;
        let mut inputs = Vec::with_capacity(self.samples);
        let mut targets = Vec::with_capacity(self.samples);
        for _ in 0..self.samples {
            let comps: Vec<(f64, f64, f64)> = (0..self.components)
                .map(|_| {
                    let period = rng.random_range(self.periods.0..=self.periods.1);
                    let amp = rng.random_range(0.5..=1.0);
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    (std::f64::consts::TAU / period, amp, phase)
                })
                .collect();
            let full: Vec<f64> = (0..total)
                .map(|t| {
                    let s: f64 = comps.iter().map(|(w, a, p)| a * (w * t as f64 + p).sin()).sum();
                    s + noise.sample(&mut rng)
                })
                .collect();
            let mut prefix = vec![0.0; total + 1];
            for (i, v) in full.iter().enumerate() {
                prefix[i + 1] = prefix[i] + v;
            }
            let x = Array2::from_shape_fn((self.len, 1), |(t, _)| full[head + t]);
            let y = Array2::from_shape_fn((self.len, 1), |(t, _)| {
                let end = head + t - self.lag + 1;
                (prefix[end] - prefix[end - self.window]) / self.window as f64
            });
            inputs.push(x);
            targets.push(y);
        }
        Dataset::new(inputs, Targets::Sequences(targets))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_partition() {
        let a = split_indices(101, DEFAULT_SPLIT, 3).unwrap();
        let b = split_indices(101, DEFAULT_SPLIT, 3).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
        assert_eq!(a.train.len(), 71);
        assert_eq!(a.val.len(), 15);
        assert_ne!(a, split_indices(101, DEFAULT_SPLIT, 4).unwrap());
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(split_indices(10, [0.5, 0.5, 0.5], 0).is_err());
    }

    #[test]
    fn frequency_task_is_balanced() {
        let d = FrequencyTask {
            samples: 10,
            len: 100,
            ..Default::default()
        }
        .generate()
        .unwrap();
        let Targets::Labels(l) = d.targets() else { panic!() };
        assert_eq!(l.iter().filter(|&&c| c == 1).count(), 5);
        assert_eq!(d.num_classes(), Some(2));
    }

    #[test]
    fn delayed_target_is_lagged_window_mean() {
        let task = DelayedSumTask {
            samples: 1,
            len: 50,
            lag: 10,
            window: 4,
            noise: 0.0,
            components: 1,
            periods: (20.0, 20.0),
            ..Default::default()
        };
        let d = task.generate().unwrap();
        let Targets::Sequences(y) = d.targets() else { panic!() };
        let x = &d.inputs()[0];
        for t in 13..50 {
            let want = (0..4).map(|k| x[[t - 10 - k, 0]]).sum::<f64>() / 4.0;
            assert!((y[0][[t, 0]] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn nan_input_is_data_error() {
        let x = Array2::from_elem((3, 1), f64::NAN);
        assert!(matches!(
            Dataset::new(vec![x], Targets::Labels(vec![0])),
            Err(Error::Data(_))
        ));
    }
}
