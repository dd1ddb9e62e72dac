//! Encoder → N blocks → decoder, with a hand-written reverse pass.
//!
//! Linear maps that feed batch norm carry no bias: the normalization removes
//! any per-feature shift, so such a bias would never receive gradient.
//!
//! Every stage runs per sample in parallel except batch norm, whose
//! statistics are reduced across the batch in sample order. The reverse pass
//! mirrors the forward stage by stage from the recorded [`Tape`].

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{Component, InitLaw, ModelConfig, Task, THRESHOLD_FLOOR};
use super::layers::{
    apply_mask, batch_stats, bn_backward_eval, bn_backward_sums, bn_backward_train, bn_normalize, dropout_mask, linear,
    mix_seed, threshold, threshold_backward, weight_grad, BatchStats, Operand,
};
use super::params::{Gradients, ParamId, ParamStore, Role};
use crate::dynamics::{build_recurrence, pair_coefficients, pair_jacobian, OscillatorParams, PairCoefficients};
use crate::error::{parameter, structural, Error, Result};
use crate::ops::OpCounter;
use crate::par;
use crate::scan::{adjoint_scan, scan_with_stats, ScanConfig, StateSequence};
use crate::spiking::{SpikeFn, SpikeTensor};

/// Initial decay of the regression filter, `k_i ∝ α^i`.
pub const KERNEL_DECAY: f64 = 0.9;

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions<'a> {
    /// Batch statistics and dropout when true; running statistics otherwise.
    pub training: bool,
    pub spike_fn: SpikeFn,
    /// Seeds dropout masks.
    pub seed: u64,
    pub scan: ScanConfig,
    pub counter: Option<&'a OpCounter>,
}

impl<'a> ForwardOptions<'a> {
    pub fn eval() -> Self {
        Self {
            training: false,
            spike_fn: SpikeFn::Heaviside,
            seed: 0,
            scan: ScanConfig::default(),
            counter: None,
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            training: true,
            seed,
            ..Self::eval()
        }
    }

    pub fn with_spike_fn(mut self, f: SpikeFn) -> Self {
        self.spike_fn = f;
        self
    }

    pub fn with_counter(mut self, counter: &'a OpCounter) -> Self {
        self.counter = Some(counter);
        self
    }

    pub fn with_scan(mut self, scan: ScanConfig) -> Self {
        self.scan = scan;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelOutput {
    /// `batch x classes`.
    Logits(Array2<f64>),
    /// One `L x out_dim` sequence per sample.
    Sequences(Vec<Array2<f64>>),
}

impl ModelOutput {
    pub fn logits(&self) -> Option<&Array2<f64>> {
        match self {
            ModelOutput::Logits(l) => Some(l),
            ModelOutput::Sequences(_) => None,
        }
    }

    pub fn sequences(&self) -> Option<&[Array2<f64>]> {
        match self {
            ModelOutput::Logits(_) => None,
            ModelOutput::Sequences(s) => Some(s),
        }
    }
}

#[derive(Debug, Clone)]
struct NormIds {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderIds {
    weight: ParamId,
    norm: NormIds,
    theta: ParamId,
}

#[derive(Debug, Clone)]
struct MixIds {
    weight: ParamId,
    norm: NormIds,
    theta: ParamId,
}

#[derive(Debug, Clone)]
struct BlockIds {
    omega: ParamId,
    dt: ParamId,
    b: ParamId,
    c: ParamId,
    d: ParamId,
    theta_c: ParamId,
    theta_d: ParamId,
    mix: Option<MixIds>,
}

#[derive(Debug, Clone)]
enum DecoderIds {
    Classify {
        weight: ParamId,
        bias: ParamId,
    },
    Regress {
        weight: ParamId,
        bias: ParamId,
        kernel: ParamId,
    },
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Vec<Array2<f64>>,
    inv_std: Vec<f64>,
    /// Present in training mode.
    stats: Option<BatchStats>,
}

#[derive(Debug, Clone)]
pub struct EncoderTape {
    /// Batch-norm output, the argument of the encoder threshold.
    normed: Vec<Array2<f64>>,
    norm: NormCache,
}

#[derive(Debug, Clone)]
struct BlockSample {
    drive: Array2<f64>,
    states: StateSequence<f64>,
    v: Array2<f64>,
    z: Array2<f64>,
    m: Array2<f64>,
    mask_mix: Option<Array2<f64>>,
    q: Array2<f64>,
    normed: Option<Array2<f64>>,
    mask_out: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct BlockTape {
    samples: Vec<BlockSample>,
    coeffs: Vec<PairCoefficients>,
    norm: Option<NormCache>,
}

#[derive(Debug, Clone)]
pub struct DecoderTape {
    /// Per-sample projection before filtering (regression only).
    proj: Vec<Array2<f64>>,
}

/// Everything the reverse pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    /// `boundaries[0]` is the encoder output, `boundaries[n]` the output of block `n-1`.
    boundaries: Vec<Vec<Array2<f64>>>,
    encoder: EncoderTape,
    blocks: Vec<BlockTape>,
    decoder: DecoderTape,
    spike_fn: SpikeFn,
    training: bool,
    scan: ScanConfig,
}

impl Tape {
    /// Tensors exchanged between stages: encoder→block 1, …, block N→decoder.
    pub fn boundaries(&self) -> &[Vec<Array2<f64>>] {
        &self.boundaries
    }

    /// Boundary tensors as spike tensors; fails if any entry is not binary.
    pub fn boundary_spikes(&self) -> Result<Vec<Vec<SpikeTensor>>> {
        self.boundaries
            .iter()
            .map(|b| b.iter().map(|x| SpikeTensor::from_dense(x.view())).collect())
            .collect()
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.len()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    encoder: EncoderIds,
    blocks: Vec<BlockIds>,
    decoder: DecoderIds,
}

fn sample_law(law: InitLaw, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| match law {
            InitLaw::UnitOpen => 1.0 - rng.random::<f64>(),
            InitLaw::SymmetricUniform { fan } => {
                let a = 1.0 / (fan as f64).sqrt();
                rng.random_range(-a..a)
            }
            InitLaw::StandardNormal => rng.sample(StandardNormal),
            InitLaw::Constant(v) => v,
        })
        .collect()
}

impl Model {
    /// Builds a freshly initialized model; all randomness comes from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (h, p, cin) = (config.hidden, config.state, config.input_dim);
        let het = config.heterogeneity.clone();
        let law = |c: Component| het.law(c, h, p);
        let fan = |n: usize| InitLaw::SymmetricUniform { fan: n };

        let norm = |store: &mut ParamStore, prefix: &str, width: usize| NormIds {
            gamma: store.push(format!("{prefix}.bn.gamma"), vec![width], Role::Norm, vec![1.0; width]),
            beta: store.push(format!("{prefix}.bn.beta"), vec![width], Role::Norm, vec![0.0; width]),
            running_mean: store.push(
                format!("{prefix}.bn.running_mean"),
                vec![width],
                Role::Buffer,
                vec![0.0; width],
            ),
            running_var: store.push(
                format!("{prefix}.bn.running_var"),
                vec![width],
                Role::Buffer,
                vec![1.0; width],
            ),
        };

        let encoder = EncoderIds {
            weight: store.push(
                "encoder.weight",
                vec![h, cin],
                Role::Weight,
                sample_law(fan(cin), h * cin, &mut rng),
            ),
            norm: norm(&mut store, "encoder", h),
            theta: store.push(
                "encoder.theta",
                vec![h],
                Role::Threshold,
                sample_law(law(Component::ThetaEncoder), h, &mut rng),
            ),
        };

        let mut blocks = Vec::with_capacity(config.n_blocks);
        for n in 0..config.n_blocks {
            let f = config.block_input_width(n);
            let pre = format!("block{}", n + 1);
            let omega: Vec<f64> = sample_law(law(Component::Omega), p, &mut rng)
                .into_iter()
                .map(|w| w.clamp(0.0, config.omega_max))
                .collect();
            let dt: Vec<f64> = sample_law(law(Component::Dt), p, &mut rng)
                .into_iter()
                .map(|d| d.clamp(config.dt_min, 1.0))
                .collect();
            let ids = BlockIds {
                omega: store.push(format!("{pre}.omega"), vec![p], Role::Omega, omega),
                dt: store.push(format!("{pre}.dt"), vec![p], Role::Dt, dt),
                b: store.push(
                    format!("{pre}.B"),
                    vec![p, f],
                    Role::Weight,
                    sample_law(law(Component::B), p * f, &mut rng),
                ),
                c: store.push(
                    format!("{pre}.C"),
                    vec![h, p],
                    Role::Weight,
                    sample_law(law(Component::C), h * p, &mut rng),
                ),
                d: store.push(
                    format!("{pre}.D"),
                    vec![f],
                    Role::Weight,
                    sample_law(law(Component::D), f, &mut rng),
                ),
                theta_c: store.push(
                    format!("{pre}.theta_c"),
                    vec![p],
                    Role::Threshold,
                    sample_law(law(Component::ThetaC), p, &mut rng),
                ),
                theta_d: store.push(
                    format!("{pre}.theta_d"),
                    vec![h],
                    Role::Threshold,
                    sample_law(law(Component::ThetaD), h, &mut rng),
                ),
                mix: if config.ssm_only {
                    None
                } else {
                    Some(MixIds {
                        weight: store.push(
                            format!("{pre}.linear.weight"),
                            vec![h, h],
                            Role::Weight,
                            sample_law(fan(h), h * h, &mut rng),
                        ),
                        norm: norm(&mut store, &pre, h),
                        theta: store.push(
                            format!("{pre}.theta"),
                            vec![h],
                            Role::Threshold,
                            sample_law(InitLaw::UnitOpen, h, &mut rng),
                        ),
                    })
                },
            };
            blocks.push(ids);
        }

        let width = config.decoder_input_width();
        let decoder = match config.task {
            Task::Classification { num_classes } => DecoderIds::Classify {
                weight: store.push(
                    "decoder.weight",
                    vec![num_classes, width],
                    Role::Weight,
                    sample_law(fan(width), num_classes * width, &mut rng),
                ),
                bias: store.push(
                    "decoder.bias",
                    vec![num_classes],
                    Role::Bias,
                    sample_law(fan(width), num_classes, &mut rng),
                ),
            },
            Task::Regression { out_dim, kernel_size } => {
                let norm: f64 = (0..kernel_size).map(|i| KERNEL_DECAY.powi(i as i32)).sum();
                let taps: Vec<f64> = (0..out_dim)
                    .flat_map(|_| (0..kernel_size).map(|i| KERNEL_DECAY.powi(i as i32) / norm))
                    .collect();
                DecoderIds::Regress {
                    weight: store.push(
                        "decoder.weight",
                        vec![out_dim, width],
                        Role::Weight,
                        sample_law(fan(width), out_dim * width, &mut rng),
                    ),
                    bias: store.push(
                        "decoder.bias",
                        vec![out_dim],
                        Role::Bias,
                        sample_law(fan(width), out_dim, &mut rng),
                    ),
                    kernel: store.push("decoder.kernel", vec![out_dim, kernel_size], Role::Kernel, taps),
                }
            }
        };

        Ok(Self {
            config,
            params: store,
            encoder,
            blocks,
            decoder,
        })
    }

    /// Rebuilds a model from stored parameters, matching by name and shape.
    pub fn from_params(config: ModelConfig, stored: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if stored.len() != model.params.len() {
            return Err(structural(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                stored.len()
            )));
        }
        for p in model.params.iter_mut() {
            let src = stored
                .get(&p.name)
                .ok_or_else(|| structural(format!("missing parameter `{}`", p.name)))?;
            if src.shape != p.shape {
                return Err(structural(format!(
                    "`{}` has shape {:?}, expected {:?}",
                    p.name, src.shape, p.shape
                )));
            }
            p.data.copy_from_slice(&src.data);
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Restores the constraint sets after an update: `Ω ∈ [0, Ω_max]`,
    /// `Δt ∈ [dt_min, 1]`, thresholds `>= 1e-3`.
    pub fn project(&mut self) {
        let (omax, dtmin) = (self.config.omega_max, self.config.dt_min);
        for p in self.params.iter_mut() {
            match p.role {
                Role::Omega => p.data.iter_mut().for_each(|w| *w = w.clamp(0.0, omax)),
                Role::Dt => p.data.iter_mut().for_each(|d| *d = d.clamp(dtmin, 1.0)),
                Role::Threshold => p.data.iter_mut().for_each(|t| *t = t.max(THRESHOLD_FLOOR)),
                _ => {}
            }
        }
    }

    fn check_inputs(&self, inputs: &[Array2<f64>]) -> Result<()> {
        if inputs.is_empty() {
            return Err(structural("empty batch"));
        }
        for (i, x) in inputs.iter().enumerate() {
            if x.ncols() != self.config.input_dim {
                return Err(structural(format!(
                    "sample {i} has {} channels, model expects {}",
                    x.ncols(),
                    self.config.input_dim
                )));
            }
            if x.nrows() == 0 {
                return Err(structural(format!("sample {i} is empty")));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("sample {i} contains a non-finite value")));
            }
        }
        Ok(())
    }

    fn batch_norm(&self, xs: &[Array2<f64>], ids: &NormIds, opts: &ForwardOptions) -> (Vec<Array2<f64>>, NormCache) {
        let eps = self.config.bn_eps;
        let (mean, inv_std, stats) = if opts.training {
            let stats = batch_stats(xs);
            let inv: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            (stats.mean.clone(), inv, Some(stats))
        } else {
            let inv = self
                .params
                .data(ids.running_var)
                .iter()
                .map(|v| 1.0 / (v + eps).sqrt())
                .collect();
            (self.params.data(ids.running_mean).to_vec(), inv, None)
        };
        let gamma = self.params.data(ids.gamma);
        let beta = self.params.data(ids.beta);
        let pairs = par::map(xs, |_, x| {
            if let Some(c) = opts.counter {
                c.add_multiplies(2 * x.len() as u64);
            }
            bn_normalize(x, &mean, &inv_std, gamma, beta)
        });
        let (xhat, out): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        (out, NormCache { xhat, inv_std, stats })
    }

    /// Linear → batch norm → stateless IF thresholding, per step.
    pub fn encode(&self, inputs: &[Array2<f64>], opts: &ForwardOptions) -> Result<(Vec<Array2<f64>>, EncoderTape)> {
        self.check_inputs(inputs)?;
        let ids = &self.encoder;
        let w = self.params.matrix(ids.weight);
        let pre = par::map(inputs, |_, x| linear(x.view(), w, None, Operand::Real, opts.counter));
        let (normed, norm) = self.batch_norm(&pre, &ids.norm, opts);
        let theta = self.params.data(ids.theta);
        let sg = &self.config.surrogate;
        let spikes = par::map(&normed, |_, o| threshold(o, theta, opts.spike_fn, sg));
        Ok((spikes, EncoderTape { normed, norm }))
    }

    /// One block: spike drive → oscillator scan → `Θ(v-θ_C)` → `C z + D⊙x` →
    /// `Θ(·-θ_D)` → Linear → BN → `Θ(·-θ)` → concat with the input.
    pub fn block_forward(
        &self,
        n: usize,
        inputs: &[Array2<f64>],
        opts: &ForwardOptions,
    ) -> Result<(Vec<Array2<f64>>, BlockTape)> {
        let ids = self
            .blocks
            .get(n)
            .ok_or_else(|| parameter(format!("block index {n} out of range")))?;
        let cfg = &self.config;
        let (h, width) = (cfg.hidden, cfg.block_input_width(n));
        let operand = Operand::from_spike_fn(opts.spike_fn);
        for (i, x) in inputs.iter().enumerate() {
            if x.ncols() != width {
                return Err(structural(format!(
                    "block {} sample {i}: width {} but expected {width}",
                    n + 1,
                    x.ncols()
                )));
            }
            if operand == Operand::Spikes && x.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(structural(format!("block {} sample {i}: input is not binary", n + 1)));
            }
        }
        let omega = self.params.data(ids.omega);
        let dt = self.params.data(ids.dt);
        let osc = OscillatorParams::new(omega.to_vec(), dt.to_vec())?;
        let coeffs: Vec<PairCoefficients> = (0..cfg.state)
            .map(|j| pair_coefficients(cfg.scheme, omega[j], dt[j], 0.0))
            .collect();
        let bmat = self.params.matrix(ids.b);
        let cmat = self.params.matrix(ids.c);
        let dvec = self.params.data(ids.d);
        let theta_c = self.params.data(ids.theta_c);
        let theta_d = self.params.data(ids.theta_d);
        let sg = &cfg.surrogate;
        let dropout = if opts.training { cfg.dropout } else { 0.0 };

        let first = par::map(inputs, |s, x| -> Result<(BlockSample, Option<Array2<f64>>)> {
            let len = x.nrows();
            let drive = linear(x.view(), bmat, None, operand, opts.counter);
            let rec = build_recurrence(&osc, cfg.scheme, drive.as_slice().expect("standard layout"))?;
            let (states, stats) = scan_with_stats(&rec, &vec![0.0; 2 * cfg.state], opts.scan)?;
            if let Some(c) = opts.counter {
                c.add_multiplies((stats.flops + 2 * drive.len()) as u64);
            }
            let v = Array2::from_shape_fn((len, cfg.state), |(t, j)| states.v(t)[j]);
            let z = threshold(&v, theta_c, opts.spike_fn, sg);
            let mut m = linear(z.view(), cmat, None, operand, opts.counter);
            fold_gate(&mut m, x.view(), dvec, h, operand, opts.counter);
            let mask_mix = dropout_mask((len, h), dropout, mix_seed(opts.seed, &[n as u64, s as u64, 1]));
            let mut q = threshold(&m, theta_d, opts.spike_fn, sg);
            apply_mask(&mut q, mask_mix.as_ref());
            let r = ids
                .mix
                .as_ref()
                .map(|mix| linear(q.view(), self.params.matrix(mix.weight), None, operand, opts.counter));
            let sample = BlockSample {
                drive,
                states,
                v,
                z,
                m,
                mask_mix,
                q,
                normed: None,
                mask_out: None,
            };
            Ok((sample, r))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let (mut samples, rs): (Vec<BlockSample>, Vec<Option<Array2<f64>>>) = first.into_iter().unzip();
        let mut norm_cache = None;
        let ys: Vec<Array2<f64>> = match &ids.mix {
            None => samples.iter().map(|s| s.q.clone()).collect(),
            Some(mix) => {
                let rs: Vec<Array2<f64>> = rs.into_iter().map(|r| r.expect("mix stage output")).collect();
                let (normed, cache) = self.batch_norm(&rs, &mix.norm, opts);
                norm_cache = Some(cache);
                let theta = self.params.data(mix.theta);
                let outs = par::map(&normed, |s, o| {
                    let mask = dropout_mask(o.dim(), dropout, mix_seed(opts.seed, &[n as u64, s as u64, 2]));
                    let mut y = threshold(o, theta, opts.spike_fn, sg);
                    apply_mask(&mut y, mask.as_ref());
                    (y, mask)
                });
                let mut ys = Vec::with_capacity(outs.len());
                for ((sample, o), (y, mask)) in samples.iter_mut().zip(normed).zip(outs) {
                    sample.normed = Some(o);
                    sample.mask_out = mask;
                    ys.push(y);
                }
                ys
            }
        };
        let outputs = inputs
            .iter()
            .zip(&ys)
            .map(|(x, y)| ndarray::concatenate(Axis(1), &[x.view(), y.view()]).expect("equal lengths"))
            .collect();
        Ok((
            outputs,
            BlockTape {
                samples,
                coeffs,
                norm: norm_cache,
            },
        ))
    }

    /// Temporal mean pooling followed by a linear map to class logits.
    pub fn decode_classify(&self, spikes: &[Array2<f64>], opts: &ForwardOptions) -> Result<Array2<f64>> {
        let DecoderIds::Classify { weight, bias } = &self.decoder else {
            return Err(parameter("model is not a classifier"));
        };
        let w = self.params.matrix(*weight);
        let b = self.params.vector(*bias);
        let k = w.nrows();
        let mut logits = Array2::zeros((spikes.len(), k));
        for (i, x) in spikes.iter().enumerate() {
            self.check_decoder_width(x)?;
            let rate: Array1<f64> = x.mean_axis(Axis(0)).expect("non-empty sample");
            logits.row_mut(i).assign(&(w.dot(&rate) + b));
            if let Some(c) = opts.counter {
                c.add_multiplies((k * rate.len()) as u64);
            }
        }
        Ok(logits)
    }

    /// Per-step projection followed by a causal filter with one learnable
    /// `K`-tap kernel per output channel.
    pub fn decode_regress(
        &self,
        spikes: &[Array2<f64>],
        opts: &ForwardOptions,
    ) -> Result<(Vec<Array2<f64>>, DecoderTape)> {
        let DecoderIds::Regress { weight, bias, kernel } = &self.decoder else {
            return Err(parameter("model is not a regressor"));
        };
        let w = self.params.matrix(*weight);
        let b = self.params.data(*bias);
        let taps = self.params.matrix(*kernel);
        for x in spikes {
            self.check_decoder_width(x)?;
            if taps.ncols() > x.nrows() {
                return Err(parameter(format!(
                    "kernel size {} exceeds sequence length {}",
                    taps.ncols(),
                    x.nrows()
                )));
            }
        }
        let operand = Operand::from_spike_fn(opts.spike_fn);
        let proj = par::map(spikes, |_, x| linear(x.view(), w, Some(b), operand, opts.counter));
        let outs = par::map(&proj, |_, p| {
            if let Some(c) = opts.counter {
                c.add_multiplies((p.len() * taps.ncols()) as u64);
            }
            causal_filter(p, taps)
        });
        Ok((outs, DecoderTape { proj }))
    }

    fn check_decoder_width(&self, x: &Array2<f64>) -> Result<()> {
        let width = self.config.decoder_input_width();
        if x.ncols() != width {
            return Err(structural(format!(
                "decoder input width {} but expected {width}",
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &[Array2<f64>], opts: &ForwardOptions) -> Result<(ModelOutput, Tape)> {
        let (mut x, encoder) = self.encode(inputs, opts)?;
        let mut boundaries = vec![x.clone()];
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for n in 0..self.blocks.len() {
            let (next, tape) = self.block_forward(n, &x, opts)?;
            blocks.push(tape);
            boundaries.push(next.clone());
            x = next;
        }
        let (output, decoder) = match self.config.task {
            Task::Classification { .. } => (
                ModelOutput::Logits(self.decode_classify(&x, opts)?),
                DecoderTape { proj: Vec::new() },
            ),
            Task::Regression { .. } => {
                let (seqs, tape) = self.decode_regress(&x, opts)?;
                (ModelOutput::Sequences(seqs), tape)
            }
        };
        let tape = Tape {
            inputs: inputs.to_vec(),
            boundaries,
            encoder,
            blocks,
            decoder,
            spike_fn: opts.spike_fn,
            training: opts.training,
            scan: opts.scan,
        };
        Ok((output, tape))
    }

    /// Evaluation-mode forward pass without keeping the tape.
    pub fn predict(&self, inputs: &[Array2<f64>]) -> Result<ModelOutput> {
        self.forward(inputs, &ForwardOptions::eval()).map(|(o, _)| o)
    }

    /// Folds the batch statistics of a training-mode pass into the running
    /// averages (momentum `bn_momentum`, unbiased variance).
    pub fn update_running_stats(&mut self, tape: &Tape) {
        let m = self.config.bn_momentum;
        let mut updates: Vec<(NormIds, BatchStats)> = Vec::new();
        if let Some(s) = &tape.encoder.norm.stats {
            updates.push((self.encoder.norm.clone(), s.clone()));
        }
        for (ids, bt) in self.blocks.iter().zip(&tape.blocks) {
            if let (Some(mix), Some(norm)) = (&ids.mix, &bt.norm) {
                if let Some(s) = &norm.stats {
                    updates.push((mix.norm.clone(), s.clone()));
                }
            }
        }
        for (ids, stats) in updates {
            let unbias = if stats.count > 1 {
                stats.count as f64 / (stats.count - 1) as f64
            } else {
                1.0
            };
            for (r, v) in self.params.data_mut(ids.running_mean).iter_mut().zip(&stats.mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in self.params.data_mut(ids.running_var).iter_mut().zip(&stats.var) {
                *r = (1.0 - m) * *r + m * v * unbias;
            }
        }
    }

    /// Reverse pass from the gradient of the loss with respect to the output.
    pub fn backward(&self, tape: &Tape, grad_output: &ModelOutput) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(&self.params);
        let last = tape.boundaries.last().expect("decoder input recorded");
        let mut dx = self.decoder_backward(tape, last, grad_output, &mut grads)?;
        for n in (0..self.blocks.len()).rev() {
            dx = self.block_backward(n, tape, &dx, &mut grads)?;
        }
        self.encoder_backward(tape, &dx, &mut grads);
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::Training(format!("non-finite gradient in `{name}`")));
        }
        Ok(grads)
    }

    fn decoder_backward(
        &self,
        tape: &Tape,
        x: &[Array2<f64>],
        grad_output: &ModelOutput,
        grads: &mut Gradients,
    ) -> Result<Vec<Array2<f64>>> {
        match (&self.decoder, grad_output) {
            (DecoderIds::Classify { weight, bias }, ModelOutput::Logits(dl)) => {
                if dl.nrows() != x.len() {
                    return Err(structural("logit gradient batch size differs from tape"));
                }
                let w = self.params.matrix(*weight);
                let mut dw = Array2::<f64>::zeros(w.dim());
                let mut db = vec![0.0; w.nrows()];
                let mut dxs = Vec::with_capacity(x.len());
                for (xs, dls) in x.iter().zip(dl.rows()) {
                    let rate = xs.mean_axis(Axis(0)).expect("non-empty sample");
                    for (i, g) in dls.iter().enumerate() {
                        dw.row_mut(i).scaled_add(*g, &rate);
                        db[i] += g;
                    }
                    let dr = dls.dot(&w) / xs.nrows() as f64;
                    let mut dx = Array2::zeros(xs.dim());
                    for mut row in dx.rows_mut() {
                        row.assign(&dr);
                    }
                    dxs.push(dx);
                }
                grads.add_to(*weight, dw.as_slice().expect("standard layout"));
                grads.add_to(*bias, &db);
                Ok(dxs)
            }
            (DecoderIds::Regress { weight, bias, kernel }, ModelOutput::Sequences(dys)) => {
                if dys.len() != x.len() {
                    return Err(structural("sequence gradient batch size differs from tape"));
                }
                let w = self.params.matrix(*weight);
                let taps = self.params.matrix(*kernel);
                let per = par::map_range(x.len(), |s| {
                    let (p, dy) = (&tape.decoder.proj[s], &dys[s]);
                    let (len, out) = p.dim();
                    let k = taps.ncols();
                    let mut dk = Array2::<f64>::zeros((out, k));
                    let mut dp = Array2::<f64>::zeros((len, out));
                    for o in 0..out {
                        for t in 0..len {
                            let g = dy[[t, o]];
                            for i in 0..k.min(t + 1) {
                                dk[[o, i]] += g * p[[t - i, o]];
                                dp[[t - i, o]] += taps[[o, i]] * g;
                            }
                        }
                    }
                    let dw = weight_grad(x[s].view(), dp.view());
                    let db = dp.sum_axis(Axis(0));
                    let dx = dp.dot(&w);
                    (dk, dw, db, dx)
                });
                let mut dxs = Vec::with_capacity(per.len());
                for (dk, dw, db, dx) in per {
                    grads.add_to(*kernel, dk.as_slice().expect("standard layout"));
                    grads.add_to(*weight, dw.as_slice().expect("standard layout"));
                    grads.add_to(*bias, db.as_slice().expect("standard layout"));
                    dxs.push(dx);
                }
                Ok(dxs)
            }
            _ => Err(structural("output gradient does not match the model task")),
        }
    }

    fn block_backward(
        &self,
        n: usize,
        tape: &Tape,
        dout: &[Array2<f64>],
        grads: &mut Gradients,
    ) -> Result<Vec<Array2<f64>>> {
        let ids = &self.blocks[n];
        let bt = &tape.blocks[n];
        let inputs = &tape.boundaries[n];
        let cfg = &self.config;
        let (h, p, width) = (cfg.hidden, cfg.state, cfg.block_input_width(n));
        let sg = &cfg.surrogate;

        // Output threshold and batch norm.
        let dqs: Vec<Array2<f64>> = match &ids.mix {
            None => dout.iter().map(|d| d.slice(s![.., width..]).to_owned()).collect(),
            Some(mix) => {
                let norm = bt.norm.as_ref().expect("mix stage cache");
                let theta = self.params.data(mix.theta);
                let staged = par::map_range(dout.len(), |s| {
                    let sample = &bt.samples[s];
                    let mut dy = dout[s].slice(s![.., width..]).to_owned();
                    apply_mask(&mut dy, sample.mask_out.as_ref());
                    let mut dtheta = vec![0.0; h];
                    threshold_backward(sample.normed.as_ref().expect("normed"), theta, &mut dy, &mut dtheta, sg);
                    let sums = bn_backward_sums(&dy, &norm.xhat[s]);
                    (dy, dtheta, sums)
                });
                let mut sum_dy = vec![0.0; h];
                let mut sum_dy_xhat = vec![0.0; h];
                let mut dos = Vec::with_capacity(staged.len());
                for (dy, dtheta, (s1, s2)) in staged {
                    grads.add_to(mix.theta, &dtheta);
                    sum_dy.iter_mut().zip(&s1).for_each(|(a, b)| *a += b);
                    sum_dy_xhat.iter_mut().zip(&s2).for_each(|(a, b)| *a += b);
                    dos.push(dy);
                }
                grads.add_to(mix.norm.gamma, &sum_dy_xhat);
                grads.add_to(mix.norm.beta, &sum_dy);
                let gamma = self.params.data(mix.norm.gamma);
                let wmat = self.params.matrix(mix.weight);
                let per = par::map_range(dos.len(), |s| {
                    let dr = match &norm.stats {
                        Some(stats) => bn_backward_train(
                            &dos[s],
                            &norm.xhat[s],
                            gamma,
                            &norm.inv_std,
                            &sum_dy,
                            &sum_dy_xhat,
                            stats.count,
                        ),
                        None => bn_backward_eval(&dos[s], gamma, &norm.inv_std),
                    };
                    let dw = weight_grad(bt.samples[s].q.view(), dr.view());
                    let dq = dr.dot(&wmat);
                    (dw, dq)
                });
                let mut dqs = Vec::with_capacity(per.len());
                for (dw, dq) in per {
                    grads.add_to(mix.weight, dw.as_slice().expect("standard layout"));
                    dqs.push(dq);
                }
                dqs
            }
        };

        let omega = self.params.data(ids.omega);
        let dt = self.params.data(ids.dt);
        let bmat = self.params.matrix(ids.b);
        let cmat = self.params.matrix(ids.c);
        let dvec = self.params.data(ids.d);
        let theta_c = self.params.data(ids.theta_c);
        let theta_d = self.params.data(ids.theta_d);
        let blocks: Vec<_> = bt.coeffs.iter().map(|c| c.block).collect();
        let jac: Vec<[PairCoefficients; 2]> = (0..p).map(|j| pair_jacobian(cfg.scheme, omega[j], dt[j])).collect();

        let per = par::map_range(dout.len(), |s| -> Result<BlockSampleGrads> {
            let sample = &bt.samples[s];
            let x = &inputs[s];
            let len = x.nrows();
            let mut dm = dqs[s].clone();
            apply_mask(&mut dm, sample.mask_mix.as_ref());
            let mut g = BlockSampleGrads::zeros(p, h, width);
            threshold_backward(&sample.m, theta_d, &mut dm, &mut g.theta_d, sg);

            g.c = weight_grad(sample.z.view(), dm.view());
            let mut dz = dm.dot(&cmat);
            let mut dx = dout[s].slice(s![.., ..width]).to_owned();
            for t in 0..len {
                for j in 0..width {
                    let gm = dm[[t, j % h]];
                    g.d[j] += gm * x[[t, j]];
                    dx[[t, j]] += dvec[j] * gm;
                }
            }
            threshold_backward(&sample.v, theta_c, &mut dz, &mut g.theta_c, sg);

            let zeros = vec![0.0; len * p];
            let lam = adjoint_scan(&blocks, &zeros, dz.as_slice().expect("standard layout"), tape.scan)?;
            let mut ddrive = Array2::<f64>::zeros((len, p));
            for j in 0..p {
                let (mut d11, mut d12, mut d21, mut d22, mut dcu, mut dcv) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                let coeff = &bt.coeffs[j];
                for t in 0..len {
                    let (lu, lv) = (lam.u(t)[j], lam.v(t)[j]);
                    let (pu, pv) = if t == 0 {
                        (0.0, 0.0)
                    } else {
                        (sample.states.u(t - 1)[j], sample.states.v(t - 1)[j])
                    };
                    d11 += lu * pu;
                    d12 += lu * pv;
                    d21 += lv * pu;
                    d22 += lv * pv;
                    let drive = sample.drive[[t, j]];
                    dcu += lu * drive;
                    dcv += lv * drive;
                    ddrive[[t, j]] = coeff.force_u * lu + coeff.force_v * lv;
                }
                let chain = |jc: &PairCoefficients| {
                    jc.block.a11 * d11
                        + jc.block.a12 * d12
                        + jc.block.a21 * d21
                        + jc.block.a22 * d22
                        + jc.force_u * dcu
                        + jc.force_v * dcv
                };
                g.omega[j] = chain(&jac[j][0]);
                g.dt[j] = chain(&jac[j][1]);
            }
            g.b = weight_grad(x.view(), ddrive.view());
            dx += &ddrive.dot(&bmat);
            g.dx = dx;
            Ok(g)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let mut dxs = Vec::with_capacity(per.len());
        for g in per {
            grads.add_to(ids.omega, &g.omega);
            grads.add_to(ids.dt, &g.dt);
            grads.add_to(ids.b, g.b.as_slice().expect("standard layout"));
            grads.add_to(ids.c, g.c.as_slice().expect("standard layout"));
            grads.add_to(ids.d, &g.d);
            grads.add_to(ids.theta_c, &g.theta_c);
            grads.add_to(ids.theta_d, &g.theta_d);
            dxs.push(g.dx);
        }
        Ok(dxs)
    }

    fn encoder_backward(&self, tape: &Tape, ds: &[Array2<f64>], grads: &mut Gradients) {
        let ids = &self.encoder;
        let et = &tape.encoder;
        let h = self.config.hidden;
        let theta = self.params.data(ids.theta);
        let sg = &self.config.surrogate;
        let staged = par::map_range(ds.len(), |s| {
            let mut dy = ds[s].clone();
            let mut dtheta = vec![0.0; h];
            threshold_backward(&et.normed[s], theta, &mut dy, &mut dtheta, sg);
            let sums = bn_backward_sums(&dy, &et.norm.xhat[s]);
            (dy, dtheta, sums)
        });
        let mut sum_dy = vec![0.0; h];
        let mut sum_dy_xhat = vec![0.0; h];
        let mut dos = Vec::with_capacity(staged.len());
        for (dy, dtheta, (s1, s2)) in staged {
            grads.add_to(ids.theta, &dtheta);
            sum_dy.iter_mut().zip(&s1).for_each(|(a, b)| *a += b);
            sum_dy_xhat.iter_mut().zip(&s2).for_each(|(a, b)| *a += b);
            dos.push(dy);
        }
        grads.add_to(ids.norm.gamma, &sum_dy_xhat);
        grads.add_to(ids.norm.beta, &sum_dy);
        let gamma = self.params.data(ids.norm.gamma);
        let per = par::map_range(dos.len(), |s| {
            let da = match &et.norm.stats {
                Some(stats) => bn_backward_train(
                    &dos[s],
                    &et.norm.xhat[s],
                    gamma,
                    &et.norm.inv_std,
                    &sum_dy,
                    &sum_dy_xhat,
                    stats.count,
                ),
                None => bn_backward_eval(&dos[s], gamma, &et.norm.inv_std),
            };
            weight_grad(tape.inputs[s].view(), da.view())
        });
        for dw in per {
            grads.add_to(ids.weight, dw.as_slice().expect("standard layout"));
        }
    }

    /// Whether the tape was recorded with binary spikes.
    pub fn tape_is_spiking(tape: &Tape) -> bool {
        tape.spike_fn.is_binary()
    }

    /// Whether the tape was recorded in training mode.
    pub fn tape_is_training(tape: &Tape) -> bool {
        tape.training
    }
}

struct BlockSampleGrads {
    omega: Vec<f64>,
    dt: Vec<f64>,
    b: Array2<f64>,
    c: Array2<f64>,
    d: Vec<f64>,
    theta_c: Vec<f64>,
    theta_d: Vec<f64>,
    dx: Array2<f64>,
}

impl BlockSampleGrads {
    fn zeros(p: usize, h: usize, width: usize) -> Self {
        Self {
            omega: vec![0.0; p],
            dt: vec![0.0; p],
            b: Array2::zeros((p, width)),
            c: Array2::zeros((h, p)),
            d: vec![0.0; width],
            theta_c: vec![0.0; p],
            theta_d: vec![0.0; h],
            dx: Array2::zeros((0, 0)),
        }
    }
}

/// Adds `D ⊙ x` into `m`, folding input feature `j` onto output `j mod H`.
fn fold_gate(
    m: &mut Array2<f64>,
    x: ArrayView2<f64>,
    d: &[f64],
    h: usize,
    operand: Operand,
    counter: Option<&crate::ops::OpCounter>,
) {
    let mut ops = 0u64;
    for (mut mrow, xrow) in m.rows_mut().into_iter().zip(x.rows()) {
        for (j, &xv) in xrow.iter().enumerate() {
            match operand {
                Operand::Spikes => {
                    if xv != 0.0 {
                        mrow[j % h] += d[j];
                        ops += 1;
                    }
                }
                Operand::Real => {
                    mrow[j % h] += d[j] * xv;
                    ops += 1;
                }
            }
        }
    }
    if let Some(c) = counter {
        match operand {
            Operand::Spikes => c.add_accumulates(ops),
            Operand::Real => c.add_multiplies(ops),
        }
    }
}

/// `y[t, o] = Σ_{i < K, i <= t} k[o, i] p[t - i, o]`.
fn causal_filter(p: &Array2<f64>, taps: ArrayView2<f64>) -> Array2<f64> {
    let (len, out) = p.dim();
    let k = taps.ncols();
    Array2::from_shape_fn((len, out), |(t, o)| {
        (0..k.min(t + 1)).map(|i| taps[[o, i]] * p[[t - i, o]]).sum()
    })
}
