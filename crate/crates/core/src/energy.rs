//! Analytic operation counts and energy estimates for one sequence block.
//!
//! FLOPs are multiply-accumulate counts. A MAC costs 4.6 pJ and an
//! accumulate 0.9 pJ; a layer whose input is a spike train performs
//! `f_r × FLOPs` accumulates, every other layer is charged full MACs.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{parameter, Error, Result};
use crate::network::{ForwardOptions, Model};
use crate::spiking::SpikeTensor;

pub const E_MAC_PJ: f64 = 4.6;
pub const E_AC_PJ: f64 = 0.9;
pub const GELU_FLOPS_PER_ELEM: u64 = 14;
pub const GLU_MULTIPLIER: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Real-valued oscillatory block with GLU and GeLU.
    LinOss,
    /// Spiking block with a linear mixing layer.
    Share,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::LinOss => "linoss",
            BlockKind::Share => "share",
        })
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linoss" => Ok(BlockKind::LinOss),
            "share" => Ok(BlockKind::Share),
            _ => Err(parameter(format!("unknown block kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCount {
    pub name: &'static str,
    pub flops: u64,
    /// The layer's input is a spike train (only meaningful for spiking blocks).
    pub spike_driven: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopTable {
    pub kind: BlockKind,
    pub layers: Vec<LayerCount>,
}

impl FlopTable {
    pub fn total(&self) -> u64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.layers.iter().find(|l| l.name == name).map(|l| l.flops)
    }
}

fn ceil_log2(l: u64) -> u64 {
    if l <= 1 {
        0
    } else {
        64 - (l - 1).leading_zeros() as u64
    }
}

/// Per-layer FLOPs of one block. Batch norm is folded into the linear layer
/// unless `verbose_bn` is set, in which case it is listed at MAC cost.
pub fn count_block_flops(kind: BlockKind, l: u64, h: u64, p: u64, verbose_bn: bool) -> Result<FlopTable> {
    if l == 0 || h == 0 || p == 0 {
        return Err(parameter("L, H and P must be >= 1"));
    }
    let spiking = kind == BlockKind::Share;
    let mut layers = vec![
        LayerCount {
            name: "B",
            flops: l * p * h,
            spike_driven: spiking,
        },
        LayerCount {
            name: "C",
            flops: l * p * h,
            spike_driven: spiking,
        },
        LayerCount {
            name: "D",
            flops: l * h,
            spike_driven: spiking,
        },
        LayerCount {
            name: "scan",
            flops: p * ceil_log2(l),
            spike_driven: false,
        },
    ];
    match kind {
        BlockKind::LinOss => {
            layers.push(LayerCount {
                name: "glu",
                flops: GLU_MULTIPLIER * l * h * h,
                spike_driven: false,
            });
            layers.push(LayerCount {
                name: "gelu",
                flops: GELU_FLOPS_PER_ELEM * l * h,
                spike_driven: false,
            });
        }
        BlockKind::Share => {
            layers.push(LayerCount {
                name: "linear",
                flops: l * h * h,
                spike_driven: true,
            });
            if verbose_bn {
                layers.push(LayerCount {
                    name: "bn",
                    flops: 2 * l * h,
                    spike_driven: false,
                });
            }
        }
    }
    Ok(FlopTable { kind, layers })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerEnergy {
    pub name: &'static str,
    pub flops: u64,
    pub sops: f64,
    pub pj: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub firing_rate: f64,
    pub ann: Vec<LayerEnergy>,
    pub snn: Vec<LayerEnergy>,
    pub ann_pj: f64,
    pub snn_pj: f64,
    pub ratio: f64,
}

fn price(table: &FlopTable, f_r: f64) -> Vec<LayerEnergy> {
    table
        .layers
        .iter()
        .map(|l| {
            let (sops, pj) = if l.spike_driven {
                let sops = f_r * l.flops as f64;
                (sops, E_AC_PJ * sops)
            } else {
                (0.0, E_MAC_PJ * l.flops as f64)
            };
            LayerEnergy {
                name: l.name,
                flops: l.flops,
                sops,
                pj,
            }
        })
        .collect()
}

/// LinOSS block priced as an ANN against a spiking block at firing rate `f_r`.
pub fn estimate(l: u64, h: u64, p: u64, f_r: f64, verbose_bn: bool) -> Result<EnergyReport> {
    if !(0.0..=1.0).contains(&f_r) {
        return Err(parameter(format!("firing rate {f_r} outside [0, 1]")));
    }
    let ann = price(&count_block_flops(BlockKind::LinOss, l, h, p, false)?, f_r);
    let snn = price(&count_block_flops(BlockKind::Share, l, h, p, verbose_bn)?, f_r);
    let ann_pj = ann.iter().map(|e| e.pj).sum();
    let snn_pj: f64 = snn.iter().map(|e| e.pj).sum();
    Ok(EnergyReport {
        firing_rate: f_r,
        ann,
        snn,
        ann_pj,
        snn_pj,
        ratio: ann_pj / snn_pj,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub p: u64,
    pub h: u64,
    pub p_over_h: f64,
    pub ann_pj: f64,
    pub snn_pj: f64,
    pub ratio: f64,
}

/// Energy ratio over state sizes `P = r·H` for each ratio `r`.
pub fn sweep(l: u64, h: u64, ratios: &[f64], f_r: f64) -> Result<Vec<SweepRow>> {
    ratios
        .iter()
        .map(|&r| {
            let p = (r * h as f64).round().max(1.0) as u64;
            let e = estimate(l, h, p, f_r, false)?;
            Ok(SweepRow {
                p,
                h,
                p_over_h: p as f64 / h as f64,
                ann_pj: e.ann_pj,
                snn_pj: e.snn_pj,
                ratio: e.ratio,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("p_over_h,ann_pj,snn_pj,ratio\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.p_over_h, r.ann_pj, r.snn_pj, r.ratio);
    }
    s
}

/// Observed firing rate of every stage boundary (encoder output, then each
/// block output) in an evaluation-mode pass over `inputs`.
pub fn measure_firing_rates(model: &Model, inputs: &[Array2<f64>]) -> Result<Vec<f64>> {
    let (_, tape) = model.forward(inputs, &ForwardOptions::eval())?;
    tape.boundaries()
        .iter()
        .map(|batch| {
            let (mut spikes, mut total) = (0u64, 0u64);
            for x in batch {
                let s = SpikeTensor::from_dense(x.view())?;
                spikes += s.spike_count();
                total += (s.len() * s.features()) as u64;
            }
            Ok(spikes as f64 / total as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_b_term() {
        let t = count_block_flops(BlockKind::Share, 1, 8, 8, false).unwrap();
        assert_eq!(t.get("B"), Some(64));
        assert_eq!(t.get("scan"), Some(0));
    }

    #[test]
    fn glu_is_twice_linear() {
        let a = count_block_flops(BlockKind::LinOss, 100, 12, 3, false).unwrap();
        let b = count_block_flops(BlockKind::Share, 100, 12, 3, false).unwrap();
        assert_eq!(a.get("glu").unwrap(), 2 * b.get("linear").unwrap());
        assert_eq!(a.get("gelu").unwrap(), 14 * 100 * 12);
    }

    #[test]
    fn silent_network_spends_only_on_the_scan() {
        let e = estimate(1000, 16, 16, 0.0, false).unwrap();
        for l in &e.snn {
            if l.name != "scan" {
                assert_eq!(l.pj, 0.0);
            }
        }
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(17984), 15);
    }

    #[test]
    fn verbose_bn_is_listed() {
        let t = count_block_flops(BlockKind::Share, 10, 4, 4, true).unwrap();
        assert_eq!(t.get("bn"), Some(80));
        assert!(count_block_flops(BlockKind::Share, 10, 4, 4, false)
            .unwrap()
            .get("bn")
            .is_none());
    }
}
