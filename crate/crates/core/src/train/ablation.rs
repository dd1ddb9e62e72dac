//! Heterogeneity ablation: retrain with components initialized homogeneously.

use std::fmt;
use std::str::FromStr;

use super::fit::{evaluate, fit, TrainConfig};
use crate::data::Dataset;
use crate::error::{parameter, Error, Result};
use crate::network::{Component, HeterogeneitySpec, Model, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AblationTarget {
    Component(Component),
    /// Every component homogenized.
    All,
    /// Blocks without the Linear/BN/threshold stage.
    SsmOnly,
}

impl fmt::Display for AblationTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationTarget::Component(c) => write!(f, "{c}"),
            AblationTarget::All => f.write_str("all"),
            AblationTarget::SsmOnly => f.write_str("ssm_only"),
        }
    }
}

impl FromStr for AblationTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(AblationTarget::All),
            "ssm_only" => Ok(AblationTarget::SsmOnly),
            other => other
                .parse::<Component>()
                .map(AblationTarget::Component)
                .map_err(|_| parameter(format!("unknown ablation component `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AblationSpec {
    pub targets: Vec<AblationTarget>,
}

impl AblationSpec {
    pub fn heterogeneous() -> Self {
        Self::default()
    }

    pub fn single(c: Component) -> Self {
        Self {
            targets: vec![AblationTarget::Component(c)],
        }
    }

    /// Parses a comma-separated list such as `b,c` or `all`; `heterogeneous`
    /// is the empty list.
    pub fn parse(list: &str) -> Result<Self> {
        if list.trim().eq_ignore_ascii_case("heterogeneous") {
            return Ok(Self::heterogeneous());
        }
        let mut targets: Vec<AblationTarget> = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        targets.sort();
        targets.dedup();
        Ok(Self { targets })
    }

    pub fn label(&self) -> String {
        if self.targets.is_empty() {
            return "heterogeneous".into();
        }
        self.targets
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("+")
    }

    /// The model configuration with the overrides applied.
    pub fn apply(&self, cfg: &ModelConfig) -> ModelConfig {
        let mut out = cfg.clone();
        let mut comps = Vec::new();
        for t in &self.targets {
            match t {
                AblationTarget::Component(c) => comps.push(*c),
                AblationTarget::All => comps.extend(Component::ALL),
                AblationTarget::SsmOnly => out.ssm_only = true,
            }
        }
        let mut het = HeterogeneitySpec::homogenized(comps);
        het.homogeneous
            .extend(cfg.heterogeneity.homogeneous.iter().map(|(k, v)| (*k, *v)));
        out.heterogeneity = het;
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub label: String,
    pub seeds: Vec<u64>,
    /// Test-split score per seed (accuracy for classifiers).
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (`n - 1`).
    pub std: f64,
}

impl AblationResult {
    pub fn from_scores(label: String, seeds: Vec<u64>, scores: Vec<f64>) -> Self {
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let std = if scores.len() > 1 {
            (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            label,
            seeds,
            scores,
            mean,
            std,
        }
    }
}

/// `sqrt((s_a² + s_b²) / 2)` for equal-sized groups.
pub fn pooled_std(a: &AblationResult, b: &AblationResult) -> f64 {
    ((a.std * a.std + b.std * b.std) / 2.0).sqrt()
}

/// Trains one model per seed (seed drives both the split and the
/// initialization) and scores it on the test split.
pub fn run_ablation(
    spec: &AblationSpec,
    data: &Dataset,
    model: &ModelConfig,
    train: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationResult> {
    if seeds.is_empty() {
        return Err(parameter("ablation needs at least one seed"));
    }
    let cfg = spec.apply(model);
    let mut scores = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut tc = train.clone();
        tc.seed = seed;
        let res = fit(Model::new(cfg.clone(), seed)?, data, &tc)?;
        let test = evaluate(&res.model, &data.subset(&res.split.test), tc.loss, tc.batch_size)?;
        scores.push(test.score());
    }
    Ok(AblationResult::from_scores(spec.label(), seeds.to_vec(), scores))
}

pub fn ablation_csv(rows: &[AblationResult]) -> String {
    let mut s = String::from("variant,seed,score\n");
    for r in rows {
        for (seed, score) in r.seeds.iter().zip(&r.scores) {
            s.push_str(&format!("{},{},{}\n", r.label, seed, score));
        }
    }
    s
}

pub fn ablation_summary_csv(rows: &[AblationResult]) -> String {
    let mut s = String::from("variant,mean,std\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.label, r.mean, r.std));
    }
    s
}
