//! Losses with their output gradients, and evaluation metrics.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Targets;
use crate::error::{parameter, structural, Error, Result};
use crate::network::ModelOutput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    Mse,
    Mae,
}

impl Loss {
    pub fn name(self) -> &'static str {
        match self {
            Loss::CrossEntropy => "cross_entropy",
            Loss::Mse => "mse",
            Loss::Mae => "mae",
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cross_entropy" | "ce" => Ok(Loss::CrossEntropy),
            "mse" => Ok(Loss::Mse),
            "mae" => Ok(Loss::Mae),
            _ => Err(parameter(format!("unknown loss `{s}`"))),
        }
    }
}

fn log_softmax_row(row: ndarray::ArrayView1<f64>) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Batch-mean loss and its gradient with respect to the model output.
pub fn loss_and_grad(loss: Loss, output: &ModelOutput, targets: &Targets) -> Result<(f64, ModelOutput)> {
    match (loss, output, targets) {
        (Loss::CrossEntropy, ModelOutput::Logits(logits), Targets::Labels(labels)) => {
            if logits.nrows() != labels.len() {
                return Err(structural("logit rows differ from label count"));
            }
            let n = labels.len() as f64;
            let mut grad = Array2::zeros(logits.dim());
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                if y >= logits.ncols() {
                    return Err(Error::Data(format!(
                        "label {y} out of range for {} classes",
                        logits.ncols()
                    )));
                }
                let ls = log_softmax_row(logits.row(i));
                total -= ls[y];
                for (k, l) in ls.iter().enumerate() {
                    grad[[i, k]] = (l.exp() - f64::from(k == y)) / n;
                }
            }
            Ok((total / n, ModelOutput::Logits(grad)))
        }
        (Loss::Mse | Loss::Mae, ModelOutput::Sequences(pred), Targets::Sequences(want)) => {
            if pred.len() != want.len() {
                return Err(structural("prediction count differs from target count"));
            }
            let count: usize = want.iter().map(|w| w.len()).sum();
            let n = count as f64;
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(pred.len());
            for (p, w) in pred.iter().zip(want) {
                if p.dim() != w.dim() {
                    return Err(structural(format!(
                        "prediction shape {:?} vs target {:?}",
                        p.dim(),
                        w.dim()
                    )));
                }
                let diff = p - w;
                let g = match loss {
                    Loss::Mse => {
                        total += diff.iter().map(|d| d * d).sum::<f64>();
                        diff.mapv(|d| 2.0 * d / n)
                    }
                    _ => {
                        total += diff.iter().map(|d| d.abs()).sum::<f64>();
                        diff.mapv(|d| if d == 0.0 { 0.0 } else { d.signum() / n })
                    }
                };
                grads.push(g);
            }
            Ok((total / n, ModelOutput::Sequences(grads)))
        }
        _ => Err(parameter(format!("loss `{loss}` does not match the model task"))),
    }
}

/// Fraction of rows whose arg-max equals the label (first index wins ties).
pub fn accuracy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let hits = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            best == y
        })
        .count();
    hits as f64 / labels.len() as f64
}
