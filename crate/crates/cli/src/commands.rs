use std::path::{Path, PathBuf};

use serde::Serialize;
use sharessm::data::{split_indices, Dataset, SplitIndices};
use sharessm::dynamics::{simulate_neuron, spectral_sweep, spectrum_csv, OscillatorParams, Scheme};
use sharessm::energy::{estimate, measure_firing_rates, sweep, sweep_csv, EnergyReport};
use sharessm::network::{checkpoint, Model, ModelConfig, Task};
use sharessm::train::{
    ablation_csv, ablation_summary_csv, evaluate, fit, fit_split, history_csv, random_search, run_ablation, trials_csv,
    AblationSpec, FitResult, Metrics,
};

use crate::artifacts::{dataset_bytes, InputHashes, OutputDir};
use crate::config::{DataSpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::ingest::ingest;

pub struct LoadedData {
    pub dataset: Dataset,
    pub fixed_split: Option<SplitIndices>,
    pub hashes: InputHashes,
}

pub fn load_data(cfg: &RunConfig) -> CliResult<LoadedData> {
    let mut hashes = InputHashes::default();
    let classification = matches!(cfg.model.task, Task::Classification { .. });
    let (dataset, fixed_split) = match &cfg.data {
        DataSpec::Frequency(t) => {
            let d = t.generate()?;
            hashes.add_bytes("synthetic:frequency", &dataset_bytes(&d));
            (d, None)
        }
        DataSpec::DelayedSum(t) => {
            let d = t.generate()?;
            hashes.add_bytes("synthetic:delayed_sum", &dataset_bytes(&d));
            (d, None)
        }
        DataSpec::Csv(spec) => {
            let ing = ingest(spec, classification)?;
            for f in &ing.files {
                hashes.add_file(f)?;
            }
            (ing.dataset, ing.split)
        }
    };
    check_compatible(&cfg.model, &dataset)?;
    Ok(LoadedData {
        dataset,
        fixed_split,
        hashes,
    })
}

fn check_compatible(model: &ModelConfig, data: &Dataset) -> CliResult<()> {
    if model.input_dim != data.input_dim() {
        return Err(CliError::Usage(format!(
            "model.input_dim = {} but the data has {} channels",
            model.input_dim,
            data.input_dim()
        )));
    }
    match (model.task, data.num_classes(), data.output_dim()) {
        (Task::Classification { num_classes }, Some(k), _) if k > num_classes => Err(CliError::Usage(format!(
            "data has labels up to {} but num_classes = {num_classes}",
            k - 1
        ))),
        (Task::Regression { out_dim, .. }, _, Some(o)) if o != out_dim => Err(CliError::Usage(format!(
            "data has {o} target channels but out_dim = {out_dim}"
        ))),
        (Task::Classification { .. }, None, _) | (Task::Regression { .. }, _, None) => {
            Err(CliError::Usage("task kind does not match the data targets".into()))
        }
        _ => Ok(()),
    }
}

fn out_root(flag: &Option<PathBuf>, cfg_dir: &Option<PathBuf>, command: &str) -> PathBuf {
    flag.clone()
        .or_else(|| cfg_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(command))
}

fn metrics_csv(rows: &[(&str, &Metrics)]) -> String {
    let mut s = String::from("split,metric,value\n");
    for (split, m) in rows {
        for (metric, value) in m.rows() {
            s.push_str(&format!("{split},{metric},{value}\n"));
        }
    }
    s
}

fn firing_rates_csv(rates: &[f64]) -> String {
    let mut s = String::from("boundary,firing_rate\n");
    for (i, r) in rates.iter().enumerate() {
        let name = if i == 0 {
            "encoder".to_string()
        } else {
            format!("block{i}")
        };
        s.push_str(&format!("{name},{r}\n"));
    }
    s
}

fn load_checkpoint(path: &Path) -> CliResult<(Model, u64)> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("{}: no such checkpoint", path.display())));
    }
    Ok(checkpoint::load(path)?)
}

/// Split the data, train, and score the test part.
fn train_and_test(cfg: &RunConfig, data: &LoadedData) -> CliResult<(FitResult, SplitIndices, Metrics)> {
    let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let (res, split) = match &data.fixed_split {
        Some(split) => {
            let train = data.dataset.subset(&split.train);
            let val = data.dataset.subset(&split.val);
            (fit_split(model, &train, &val, &cfg.train)?, split.clone())
        }
        None => {
            let res = fit(model, &data.dataset, &cfg.train)?;
            let split = res.split.clone();
            (res, split)
        }
    };
    if split.test.is_empty() {
        return Err(CliError::Usage("test split is empty".into()));
    }
    let test = evaluate(
        &res.model,
        &data.dataset.subset(&split.test),
        cfg.train.loss,
        cfg.train.batch_size,
    )?;
    Ok((res, split, test))
}

pub fn train(cfg: &RunConfig, out: &Option<PathBuf>) -> CliResult<()> {
    let data = load_data(cfg)?;
    let (res, split, test) = train_and_test(cfg, &data)?;
    let dir = OutputDir::create(
        &out_root(out, &cfg.out_dir, "train"),
        &cfg.to_toml(),
        &data.hashes,
        Some(cfg.train.seed),
    )?;
    dir.write("metrics.csv", history_csv(&res.history))?;
    dir.write(
        "test_metrics.csv",
        metrics_csv(&[("val", &res.best_val), ("test", &test)]),
    )?;
    let test_inputs = data.dataset.subset(&split.test);
    dir.write(
        "firing_rates.csv",
        firing_rates_csv(&measure_firing_rates(&res.model, test_inputs.inputs())?),
    )?;
    checkpoint::save(&res.model, cfg.train.seed, &dir.path("checkpoint.bin"))?;
    println!(
        "best epoch {}: val score {}, test score {}",
        res.best_epoch,
        res.best_val.score(),
        test.score()
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig, ckpt: &Path, out: &Option<PathBuf>) -> CliResult<()> {
    let (model, seed) = load_checkpoint(ckpt)?;
    let mut cfg = cfg.clone();
    cfg.model = model.config().clone();
    let mut data = load_data(&cfg)?;
    data.hashes.add_file(ckpt)?;
    let split = match &data.fixed_split {
        Some(s) => s.clone(),
        None => split_indices(data.dataset.len(), cfg.train.split, cfg.train.seed)?,
    };
    let (loss, batch) = (cfg.train.loss, cfg.train.batch_size);
    let test = evaluate(&model, &data.dataset.subset(&split.test), loss, batch)?;
    let all = evaluate(&model, &data.dataset, loss, batch)?;
    let dir = OutputDir::create(
        &out_root(out, &cfg.out_dir, "eval"),
        &cfg.to_toml(),
        &data.hashes,
        Some(seed),
    )?;
    dir.write("eval_metrics.csv", metrics_csv(&[("test", &test), ("all", &all)]))?;
    let test_inputs = data.dataset.subset(&split.test);
    dir.write(
        "firing_rates.csv",
        firing_rates_csv(&measure_firing_rates(&model, test_inputs.inputs())?),
    )?;
    println!("test score {}", test.score());
    Ok(())
}

pub fn ablate(cfg: &RunConfig, out: &Option<PathBuf>) -> CliResult<()> {
    let run = cfg.ablation.clone().unwrap_or_default();
    let specs = run
        .variants
        .iter()
        .map(|v| AblationSpec::parse(v))
        .collect::<Result<Vec<_>, _>>()?;
    let data = load_data(cfg)?;
    let mut rows = Vec::with_capacity(specs.len());
    for spec in &specs {
        let r = run_ablation(spec, &data.dataset, &cfg.model, &cfg.train, &run.seeds)?;
        println!("{:<16} {:.4} ± {:.4}", r.label, r.mean, r.std);
        rows.push(r);
    }
    let mut echo = cfg.clone();
    echo.ablation = Some(run.clone());
    let seed = run.seeds.first().copied();
    let dir = OutputDir::create(
        &out_root(out, &cfg.out_dir, "ablate"),
        &echo.to_toml(),
        &data.hashes,
        seed,
    )?;
    dir.write("ablation.csv", ablation_csv(&rows))?;
    dir.write("ablation_summary.csv", ablation_summary_csv(&rows))?;
    Ok(())
}

pub fn search(cfg: &RunConfig, out: &Option<PathBuf>) -> CliResult<()> {
    let run = cfg
        .search
        .clone()
        .ok_or_else(|| CliError::Usage("search needs a [search] table or --budget".into()))?;
    let data = load_data(cfg)?;
    let trials = random_search(&run.space, run.budget, run.seed, &cfg.model, &cfg.train, &data.dataset)?;
    let dir = OutputDir::create(
        &out_root(out, &cfg.out_dir, "search"),
        &cfg.to_toml(),
        &data.hashes,
        Some(run.seed),
    )?;
    dir.write("trials.csv", trials_csv(&trials))?;
    let best = &trials[0];
    let (model, train) = best.params.apply(&cfg.model, &cfg.train);
    let best_cfg = RunConfig {
        model,
        train,
        search: None,
        ..cfg.clone()
    };
    dir.write("best.toml", best_cfg.to_toml())?;
    println!("best trial {}: val score {}", best.index, best.val.score());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyRun {
    pub seq_len: u64,
    pub hidden: u64,
    pub state: u64,
    pub firing_rate: f64,
    pub ratios: Vec<f64>,
    pub verbose_bn: bool,
}

fn layers_csv(report: &EnergyReport) -> String {
    let mut s = String::from("model,layer,flops,sops,pj\n");
    for (model, layers) in [("ann", &report.ann), ("snn", &report.snn)] {
        for l in layers {
            s.push_str(&format!("{model},{},{},{},{}\n", l.name, l.flops, l.sops, l.pj));
        }
    }
    s.push_str(&format!(
        "ann,total,,,{}\nsnn,total,,,{}\n",
        report.ann_pj, report.snn_pj
    ));
    s
}

pub fn energy(mut run: EnergyRun, measured: Option<(RunConfig, PathBuf)>, out: &Option<PathBuf>) -> CliResult<()> {
    let mut hashes = InputHashes::default();
    if let Some((cfg, ckpt)) = &measured {
        let (model, _) = load_checkpoint(ckpt)?;
        let mut cfg = cfg.clone();
        cfg.model = model.config().clone();
        let data = load_data(&cfg)?;
        hashes = data.hashes;
        hashes.add_file(ckpt)?;
        let rates = measure_firing_rates(&model, data.dataset.inputs())?;
        run.firing_rate = rates.iter().sum::<f64>() / rates.len() as f64;
        run.hidden = model.config().hidden as u64;
        run.state = model.config().state as u64;
    }
    let report = estimate(run.seq_len, run.hidden, run.state, run.firing_rate, run.verbose_bn)?;
    let rows = sweep(run.seq_len, run.hidden, &run.ratios, run.firing_rate)?;
    let echo = toml::to_string(&run).expect("energy config serializes");
    let dir = OutputDir::create(&out_root(out, &None, "energy"), &echo, &hashes, None)?;
    dir.write("energy_layers.csv", layers_csv(&report))?;
    dir.write("energy_sweep.csv", sweep_csv(&rows))?;
    println!(
        "f_r {}: ANN {} pJ, SNN {} pJ, ratio {}",
        run.firing_rate, report.ann_pj, report.snn_pj, report.ratio
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectraRun {
    pub scheme: Scheme,
    pub samples: usize,
    pub seed: u64,
}

pub fn spectra(run: SpectraRun, out: &Option<PathBuf>) -> CliResult<()> {
    let rows = spectral_sweep(run.scheme, run.samples, run.seed)?;
    let echo = toml::to_string(&run).expect("spectra config serializes");
    let dir = OutputDir::create(
        &out_root(out, &None, "spectra"),
        &echo,
        &InputHashes::default(),
        Some(run.seed),
    )?;
    dir.write("spectrum.csv", spectrum_csv(&rows))?;
    let max = rows.iter().map(|r| r.eigenvalue.norm()).fold(0.0, f64::max);
    println!("{} eigenvalues, max |lambda| = {max}", rows.len());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct NeuronRun {
    pub scheme: Scheme,
    pub omega: f64,
    pub dt: f64,
    pub damping: f64,
    pub steps: usize,
}

pub fn neuron(run: NeuronRun, out: &Option<PathBuf>) -> CliResult<()> {
    let params = OscillatorParams::with_damping(vec![run.omega], vec![run.dt], vec![run.damping])?;
    let trace = simulate_neuron(&params, run.scheme, run.steps)?;
    let echo = toml::to_string(&run).expect("neuron config serializes");
    let dir = OutputDir::create(&out_root(out, &None, "neuron"), &echo, &InputHashes::default(), None)?;
    dir.write("neuron.csv", trace.to_csv())?;
    Ok(())
}
