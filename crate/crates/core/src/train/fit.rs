//! Mini-batch training with best-validation model selection.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{accuracy, loss_and_grad, Loss};
use super::optim::{Adam, AdamConfig};
use crate::data::{split_indices, Dataset, SplitIndices, Targets, DEFAULT_SPLIT};
use crate::error::{parameter, Error, Result};
use crate::network::{ForwardOptions, Model, ModelOutput, Task};
use crate::scan::ScanConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: Loss,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub adam: AdamConfig,
    /// Stop after this many epochs without validation improvement.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub scan: ScanConfig,
}

fn default_split() -> [f64; 3] {
    DEFAULT_SPLIT
}

impl TrainConfig {
    pub fn new(loss: Loss) -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 16,
            epochs: 50,
            seed: 0,
            loss,
            split: DEFAULT_SPLIT,
            adam: AdamConfig::default(),
            patience: None,
            scan: ScanConfig::default(),
        }
    }

    /// Cross-entropy for classifiers, MSE for regressors.
    pub fn for_task(task: &Task) -> Self {
        match task {
            Task::Classification { .. } => Self::new(Loss::CrossEntropy),
            Task::Regression { .. } => Self::new(Loss::Mse),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..f64::INFINITY).contains(&self.lr) || !(0.0..f64::INFINITY).contains(&self.weight_decay) {
            return Err(parameter("lr and weight_decay must be finite and >= 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(parameter("batch_size and epochs must be >= 1"));
        }
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.split.iter().any(|f| *f < 0.0) {
            return Err(parameter(format!(
                "split {:?} must be non-negative and sum to 1",
                self.split
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
}

impl Metrics {
    /// Higher is better: accuracy for classifiers, negative loss otherwise.
    pub fn score(&self) -> f64 {
        self.accuracy.unwrap_or(-self.loss)
    }

    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        let mut rows = vec![("loss", self.loss)];
        rows.extend(self.accuracy.map(|a| ("accuracy", a)));
        rows.extend(self.mse.map(|a| ("mse", a)));
        rows.extend(self.mae.map(|a| ("mae", a)));
        rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: &'static str,
    pub metric: &'static str,
    pub value: f64,
}

/// `epoch,split,metric,value` with shortest round-trip float formatting.
pub fn history_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("epoch,split,metric,value\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.split, r.metric, r.value);
    }
    s
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters from the epoch with the best validation score.
    pub model: Model,
    pub best_epoch: usize,
    pub best_val: Metrics,
    pub history: Vec<MetricRow>,
    pub split: SplitIndices,
}

fn collect(data: &Dataset, idx: &[usize]) -> (Vec<ndarray::Array2<f64>>, Targets) {
    let sub = data.subset(idx);
    let targets = sub.targets().clone();
    (sub.inputs().to_vec(), targets)
}

/// Evaluation-mode metrics over a whole dataset, in batches.
pub fn evaluate(model: &Model, data: &Dataset, loss: Loss, batch_size: usize) -> Result<Metrics> {
    let n = data.len();
    let mut outputs_logits = Vec::new();
    let mut total = 0.0;
    let mut weight = 0.0;
    let (mut se, mut ae, mut count) = (0.0, 0.0, 0usize);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (xs, ts) = collect(data, chunk);
        let out = model.predict(&xs)?;
        let (l, _) = loss_and_grad(loss, &out, &ts)?;
        let w = match (&out, &ts) {
            (ModelOutput::Sequences(p), Targets::Sequences(y)) => {
                for (p, y) in p.iter().zip(y) {
                    let d = p - y;
                    se += d.iter().map(|v| v * v).sum::<f64>();
                    ae += d.iter().map(|v| v.abs()).sum::<f64>();
                    count += d.len();
                }
                y.iter().map(|y| y.len()).sum::<usize>() as f64
            }
            (ModelOutput::Logits(lg), _) => {
                outputs_logits.push(lg.clone());
                chunk.len() as f64
            }
            _ => chunk.len() as f64,
        };
        total += l * w;
        weight += w;
    }
    let mut m = Metrics {
        loss: total / weight,
        accuracy: None,
        mse: None,
        mae: None,
    };
    match data.targets() {
        Targets::Labels(labels) => {
            let views: Vec<_> = outputs_logits.iter().map(|l| l.view()).collect();
            let all = ndarray::concatenate(ndarray::Axis(0), &views).expect("equal class counts");
            m.accuracy = Some(accuracy(&all, labels));
        }
        Targets::Sequences(_) => {
            m.mse = Some(se / count as f64);
            m.mae = Some(ae / count as f64);
        }
    }
    Ok(m)
}

/// Splits `data` under `cfg.seed` and trains on the training part.
pub fn fit(model: Model, data: &Dataset, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    let split = split_indices(data.len(), cfg.split, cfg.seed)?;
    let train = data.subset(&split.train);
    let val = data.subset(&split.val);
    let mut res = fit_split(model, &train, &val, cfg)?;
    res.split = split;
    Ok(res)
}

/// Trains on `train`, selecting the epoch with the best score on `val`.
pub fn fit_split(mut model: Model, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let mut adam = Adam::new(model.params(), cfg.lr, cfg.weight_decay, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut best: Option<(Model, usize, Metrics)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (xs, ts) = collect(train, chunk);
            let seed = crate::network::stream_seed(cfg.seed, &[epoch as u64, b as u64]);
            let opts = ForwardOptions::train(seed).with_scan(cfg.scan);
            let (out, tape) = model.forward(&xs, &opts)?;
            let (l, grad) = loss_and_grad(cfg.loss, &out, &ts)?;
            if !l.is_finite() {
                return Err(Error::Training(format!("loss is {l} at epoch {epoch}, batch {b}")));
            }
            let grads = model
                .backward(&tape, &grad)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {b}: {e}")))?;
            adam.step(model.params_mut(), &grads);
            model.project();
            model.update_running_stats(&tape);
            loss_sum += l * chunk.len() as f64;
            if let (ModelOutput::Logits(lg), Targets::Labels(y)) = (&out, &ts) {
                hits += accuracy(lg, y) * chunk.len() as f64;
            }
            seen += chunk.len();
        }
        let mut rows = vec![("loss", loss_sum / seen as f64)];
        if matches!(train.targets(), Targets::Labels(_)) {
            rows.push(("accuracy", hits / seen as f64));
        }
        for (metric, value) in rows {
            history.push(MetricRow {
                epoch,
                split: "train",
                metric,
                value,
            });
        }
        let vm = evaluate(&model, val, cfg.loss, cfg.batch_size)?;
        for (metric, value) in vm.rows() {
            history.push(MetricRow {
                epoch,
                split: "val",
                metric,
                value,
            });
        }
        let improved = best.as_ref().is_none_or(|(_, _, m)| vm.score() > m.score());
        if improved {
            best = Some((model.clone(), epoch, vm));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    let (model, best_epoch, best_val) = best.expect("at least one epoch");
    Ok(FitResult {
        model,
        best_epoch,
        best_val,
        history,
        split: SplitIndices {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        },
    })
}
