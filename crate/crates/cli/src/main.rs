//! `sharessm` command-line driver.
//!
//! Exit status: 0 on success, 1 on a runtime failure, 2 on a usage or
//! validation error. Set `SHARESSM_THREADS` to size the worker pool.

mod artifacts;
mod commands;
mod config;
mod error;
mod ingest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sharessm::dynamics::Scheme;

use crate::commands::{EnergyRun, NeuronRun, SpectraRun};
use crate::config::{RunConfig, SearchRun};
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "sharessm",
    version,
    about = "Spiking harmonic resonate-and-fire state space models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics, a checkpoint and firing rates.
    Train(RunArgs),
    /// Score a checkpoint on the configured data.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Retrain with components initialized homogeneously.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// `heterogeneous` or a comma list of components; repeatable.
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Random hyperparameter search.
    Search {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        search_seed: Option<u64>,
    },
    /// Analytic ANN versus SNN energy per block, and the state-size sweep.
    Energy(EnergyArgs),
    /// Eigenvalues of random single-pair recurrences.
    Spectra {
        #[arg(long, default_value = "im")]
        scheme: Scheme,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unit-impulse response of one neuron.
    Neuron {
        #[arg(long, default_value = "imex")]
        scheme: Scheme,
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        #[arg(long, default_value_t = 0.0)]
        damping: f64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A config file plus overrides for its most common keys.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    state: Option<usize>,
    #[arg(long)]
    n_blocks: Option<usize>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    dropout: Option<f64>,
}

impl RunArgs {
    fn load(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        let t = &mut cfg.train;
        let m = &mut cfg.model;
        set(&mut t.seed, self.seed);
        set(&mut t.epochs, self.epochs);
        set(&mut t.lr, self.lr);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.weight_decay, self.weight_decay);
        set(&mut m.hidden, self.hidden);
        set(&mut m.state, self.state);
        set(&mut m.n_blocks, self.n_blocks);
        set(&mut m.scheme, self.scheme);
        set(&mut m.dropout, self.dropout);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Args)]
struct EnergyArgs {
    #[arg(long, default_value_t = 17984)]
    seq_len: u64,
    #[arg(long, default_value_t = 64)]
    hidden: u64,
    #[arg(long, default_value_t = 64)]
    state: u64,
    #[arg(long, default_value_t = 0.32)]
    firing_rate: f64,
    /// State-to-hidden ratios of the sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2,4,8,16,32")]
    ratios: Vec<f64>,
    /// List batch norm as its own layer instead of folding it.
    #[arg(long)]
    verbose_bn: bool,
    /// Measure the firing rate of this checkpoint on the data of `--config`.
    #[arg(long, requires = "config")]
    checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => commands::train(&args.load()?, &args.out),
        Command::Eval { run, checkpoint } => commands::eval(&run.load()?, &checkpoint, &run.out),
        Command::Ablate { run, variants, seeds } => {
            let mut cfg = run.load()?;
            let mut ab = cfg.ablation.take().unwrap_or_default();
            if !variants.is_empty() {
                ab.variants = variants;
            }
            if !seeds.is_empty() {
                ab.seeds = seeds;
            }
            cfg.ablation = Some(ab);
            cfg.validate()?;
            commands::ablate(&cfg, &run.out)
        }
        Command::Search {
            run,
            budget,
            search_seed,
        } => {
            let mut cfg = run.load()?;
            if let Some(b) = budget {
                let s = cfg.search.get_or_insert_with(|| SearchRun {
                    budget: b,
                    seed: 0,
                    space: Default::default(),
                });
                s.budget = b;
            }
            if let (Some(seed), Some(s)) = (search_seed, cfg.search.as_mut()) {
                s.seed = seed;
            }
            cfg.validate()?;
            commands::search(&cfg, &run.out)
        }
        Command::Energy(a) => {
            let measured = match (a.config, a.checkpoint) {
                (Some(c), Some(k)) => Some((RunConfig::load(&c)?, k)),
                _ => None,
            };
            let run = EnergyRun {
                seq_len: a.seq_len,
                hidden: a.hidden,
                state: a.state,
                firing_rate: a.firing_rate,
                ratios: a.ratios,
                verbose_bn: a.verbose_bn,
            };
            commands::energy(run, measured, &a.out)
        }
        Command::Spectra {
            scheme,
            samples,
            seed,
            out,
        } => commands::spectra(SpectraRun { scheme, samples, seed }, &out),
        Command::Neuron {
            scheme,
            omega,
            dt,
            damping,
            steps,
            out,
        } => commands::neuron(
            NeuronRun {
                scheme,
                omega,
                dt,
                damping,
                steps,
            },
            &out,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("SHARESSM_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                sharessm::par::set_threads(n);
            }
            _ => {
                let e = CliError::Usage(format!("SHARESSM_THREADS=`{n}` is not a positive integer"));
                eprintln!("error: {e}");
                return e.exit_code();
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
