//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Run with `cargo test --release -p sharessm-cli --test acceptance`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::Matrix2;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharessm::data::{split_indices, DelayedSumTask, FrequencyTask, Targets};
use sharessm::dynamics::{
    eigenvalue_moment, eigenvalues_closed_form, pair_coefficients, simulate_neuron, OscillatorParams, Scheme,
};
use sharessm::energy::{count_block_flops, sweep, BlockKind};
use sharessm::network::{ForwardOptions, Model, ModelConfig, ModelOutput, Task};
use sharessm::ops::OpCounter;
use sharessm::scan::{scan, Block2, BlockDiagRecurrence, ScanConfig};
use sharessm::spiking::SpikeFn;
use sharessm::train::{evaluate, fit, pooled_std, run_ablation, AblationSpec, Loss, TrainConfig};

type Outcome = Result<String, String>;
type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn spectral_radius(b: &Block2<f64>) -> f64 {
    let half = 0.5 * (b.a11 + b.a22);
    let det = b.a11 * b.a22 - b.a12 * b.a21;
    let disc = half * half - det;
    if disc >= 0.0 {
        (half.abs() + disc.sqrt()).abs().max((half - disc.sqrt()).abs())
    } else {
        det.sqrt()
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let p = rng.random_range(1..=32usize);
        let l = rng.random_range(1..=4096usize);
        let blocks: Vec<Block2<f64>> = (0..p)
            .map(|_| {
                if rng.random_bool(0.5) {
                    let scheme = [Scheme::Im, Scheme::Imex][rng.random_range(0..2)];
                    let (w, h) = (1.0 - rng.random::<f64>(), 1.0 - rng.random::<f64>());
                    pair_coefficients(scheme, w, h, 0.0).block
                } else {
                    let b = Block2::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    let s = rng.random_range(0.3..=1.0) / spectral_radius(&b).max(1e-12);
                    Block2::new(b.a11 * s, b.a12 * s, b.a21 * s, b.a22 * s)
                }
            })
            .collect();
        let fu: Vec<f64> = (0..l * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fv: Vec<f64> = (0..l * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s0: Vec<f64> = (0..2 * p).map(|_| rng.random_range(-1.0..1.0)).collect();

        // Plain loop over s_n = M s_{n-1} + F_n.
        let (mut u, mut v) = (s0[..p].to_vec(), s0[p..].to_vec());
        let mut want = Vec::with_capacity(2 * p * l);
        for n in 0..l {
            for j in 0..p {
                let b = &blocks[j];
                let (un, vn) = (b.a11 * u[j] + b.a12 * v[j], b.a21 * u[j] + b.a22 * v[j]);
                u[j] = un + fu[n * p + j];
                v[j] = vn + fv[n * p + j];
            }
            want.extend_from_slice(&u);
            want.extend_from_slice(&v);
        }
        let rec = BlockDiagRecurrence::new(blocks, fu, fv).map_err(|e| e.to_string())?;
        let got = scan(&rec, &s0, ScanConfig::parallel_always()).map_err(|e| e.to_string())?;
        let flat: Vec<f64> = (0..l).flat_map(|n| got.state(n).to_vec()).collect();
        worst = worst.max(rel_l2(&flat, &want));
    }
    let elapsed = start.elapsed();
    ensure(
        worst <= 1e-9 && elapsed < Duration::from_secs(10),
        format!(
            "max rel err {worst:.2e} (<= 1e-9), {:.2} s (< 10 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn numeric_eigs(b: &Block2<f64>) -> [(f64, f64); 2] {
    let m = Matrix2::new(b.a11, b.a12, b.a21, b.a22);
    let e = m.complex_eigenvalues();
    let mut out = [(e[0].re, e[0].im), (e[1].re, e[1].im)];
    out.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.total_cmp(&y.0)));
    out
}

fn closed_eigs(scheme: Scheme, w: f64, h: f64) -> Result<[(f64, f64); 2], String> {
    let p = OscillatorParams::single(w, h).map_err(|e| e.to_string())?;
    let (a, b) = eigenvalues_closed_form(&p, scheme).map_err(|e| e.to_string())?[0];
    let mut out = [(a.re, a.im), (b.re, b.im)];
    out.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.total_cmp(&y.0)));
    Ok(out)
}

fn run_cli(args: &[&str], threads: Option<&str>) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sharessm"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("SHARESSM_THREADS", t),
        None => cmd.env_remove("SHARESSM_THREADS"),
    };
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`sharessm {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(())
}

fn read_csv(path: &Path) -> Result<Vec<Vec<f64>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .map(|f| f.parse::<f64>().map_err(|e| format!("{f}: {e}")))
                .collect()
        })
        .collect()
}

fn criterion_2(tmp: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut max_diff, mut max_abs) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (w, h) = (1.0 - rng.random::<f64>(), 1.0 - rng.random::<f64>());
        let block = pair_coefficients(Scheme::Im, w, h, 0.0).block;
        let num = numeric_eigs(&block);
        let cf = closed_eigs(Scheme::Im, w, h)?;
        for k in 0..2 {
            max_diff = max_diff.max((num[k].0 - cf[k].0).abs().max((num[k].1 - cf[k].1).abs()));
            max_abs = max_abs.max(cf[k].0.hypot(cf[k].1)).max(num[k].0.hypot(num[k].1));
        }
    }
    let dir = tmp.join("spectra");
    run_cli(
        &[
            "spectra",
            "--scheme",
            "im",
            "--samples",
            "1000",
            "--out",
            dir.to_str().unwrap(),
        ],
        None,
    )?;
    let rows = read_csv(&dir.join("spectrum.csv"))?;
    let csv_max = rows.iter().map(|r| r[4]).fold(0.0, f64::max);
    ensure(
        max_diff <= 1e-10 && max_abs <= 1.0 + 1e-12 && rows.len() == 2000 && csv_max <= 1.0 + 1e-12,
        format!("max |closed - numeric| {max_diff:.2e} (<= 1e-10), max |lambda| {max_abs:.12} (<= 1 + 1e-12), CLI spectrum max {csv_max:.12}"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut draws = 0;
    for i in 0..2000 {
        // First half the unit sweep, second half reaching up to dt^2 omega = 4.
        let w = if i < 1000 {
            1.0 - rng.random::<f64>()
        } else {
            4.0 * (1.0 - rng.random::<f64>())
        };
        let h = 1.0 - rng.random::<f64>();
        if h * h * w > 4.0 {
            continue;
        }
        draws += 1;
        let num = numeric_eigs(&pair_coefficients(Scheme::Imex, w, h, 0.0).block);
        let cf = closed_eigs(Scheme::Imex, w, h)?;
        for k in 0..2 {
            worst = worst
                .max((cf[k].0.hypot(cf[k].1) - 1.0).abs())
                .max((num[k].0.hypot(num[k].1) - 1.0).abs());
        }
    }
    let edge = closed_eigs(Scheme::Imex, 4.0, 1.0)?;
    let edge_err = edge
        .iter()
        .map(|(re, im)| (re + 1.0).abs().max(im.abs()))
        .fold(0.0, f64::max);
    let b = pair_coefficients(Scheme::Imex, 4.0, 1.0, 0.0).block;
    // Characteristic polynomial (x + 1)^2: trace -2, determinant 1.
    let poly_err = (b.a11 + b.a22 + 2.0)
        .abs()
        .max((b.a11 * b.a22 - b.a12 * b.a21 - 1.0).abs());
    ensure(
        worst <= 1e-10 && edge_err <= 1e-12 && poly_err <= 1e-12,
        format!("{draws} draws, max ||lambda| - 1| {worst:.2e} (<= 1e-10); boundary double root -1 err {edge_err:.1e}, char poly err {poly_err:.1e} (<= 1e-12)"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws = 1_000_000;
    // |lambda|^2 = det M for a complex-conjugate pair.
    let mags: Vec<f64> = (0..draws)
        .map(|_| {
            let w: f64 = rng.random::<f64>();
            let b = pair_coefficients(Scheme::Im, w, 1.0, 0.0).block;
            (b.a11 * b.a22 - b.a12 * b.a21).sqrt()
        })
        .collect();
    let mut parts = Vec::new();
    let mut ok = true;
    for n in 1..=4 {
        let vals: Vec<f64> = mags.iter().map(|m| m.powi(n)).collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (draws as f64 - 1.0);
        let se = (var / draws as f64).sqrt();
        let cf = eigenvalue_moment(n as f64, 1.0, 1.0).map_err(|e| e.to_string())?;
        let z = (cf - mean).abs() / se;
        ok &= z <= 4.0;
        parts.push(format!("N={n} z={z:.2}"));
    }
    let ln2 = (eigenvalue_moment(2.0, 1.0, 1.0).map_err(|e| e.to_string())? - std::f64::consts::LN_2).abs();
    ok &= ln2 <= 1e-12;
    ensure(
        ok,
        format!("{} (<= 4 SE); N=2 vs ln 2 err {ln2:.1e} (<= 1e-12)", parts.join(", ")),
    )
}

fn criterion_5(tmp: &Path) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for scheme in Scheme::ALL {
        let dir = tmp.join(format!("neuron_{scheme}"));
        run_cli(
            &[
                "neuron",
                "--scheme",
                scheme.name(),
                "--omega",
                "1",
                "--dt",
                "0.1",
                "--steps",
                "1000",
                "--out",
                dir.to_str().unwrap(),
            ],
            None,
        )?;
        let rows = read_csv(&dir.join("neuron.csv"))?;
        // Library trace must agree with the emitted CSV.
        let trace =
            simulate_neuron(&OscillatorParams::single(1.0, 0.1).unwrap(), scheme, 1000).map_err(|e| e.to_string())?;
        let same = rows.len() == 1000 && rows.iter().zip(&trace.rows).all(|(r, t)| r[1] == t.u && r[2] == t.v);
        ok &= same;
        let amp: Vec<f64> = rows.iter().map(|r| (r[1] * r[1] + r[2] * r[2]).sqrt()).collect();
        match scheme {
            Scheme::ExplicitEuler => {
                let inc = amp.windows(2).all(|w| w[1] > w[0]);
                ok &= inc;
                parts.push(format!(
                    "euler envelope increasing={inc} ({:.3} -> {:.3})",
                    amp[0], amp[999]
                ));
            }
            Scheme::Im => {
                let dec = amp.windows(2).all(|w| w[1] < w[0]);
                ok &= dec;
                parts.push(format!("im decreasing={dec} ({:.3e} -> {:.3e})", amp[0], amp[999]));
            }
            Scheme::Imex => {
                let e0 = rows[0][3];
                let drift = rows.iter().map(|r| ((r[3] - e0) / e0).abs()).fold(0.0, f64::max);
                ok &= drift <= 1e-8;
                parts.push(format!("imex energy drift {drift:.1e} (<= 1e-8)"));
            }
        }
    }
    ensure(ok, format!("{}; CSVs emitted", parts.join(", ")))
}

fn criterion_6() -> Outcome {
    let (l, h, f_r) = (17984u64, 64u64, 0.32);
    let ratios: Vec<f64> = (-6..=6).map(|k| 2f64.powi(k)).collect();
    let rows = sweep(l, h, &ratios, f_r).map_err(|e| e.to_string())?;
    let lo = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    // Efficiency falls as P/H grows.
    let monotone = rows.windows(2).all(|w| w[1].ratio < w[0].ratio);
    let ann = count_block_flops(BlockKind::LinOss, l, h, 64, false).map_err(|e| e.to_string())?;
    let snn = count_block_flops(BlockKind::Share, l, h, 64, false).map_err(|e| e.to_string())?;
    let glu = ann.get("glu") == Some(2 * snn.get("linear").unwrap_or(0));
    let gelu = ann.get("gelu") == Some(14 * l * h);
    let span = lo <= 20.0 && hi >= 120.0;
    ensure(
        span && monotone && glu && gelu,
        format!(
            "P/H in [1/64, 64]: ratio spans [{lo:.2}, {hi:.2}] (need to cover [20, 120]), decreasing in P/H={monotone}, GLU = 2 x linear={glu}, GeLU = 14LH={gelu}"
        ),
    )
}

fn fd_check(model: &Model, xs: &[Array2<f64>], training: bool, seed: u64) -> Result<f64, String> {
    let base = if training {
        ForwardOptions::train(seed)
    } else {
        ForwardOptions::eval()
    };
    let opts = base.with_spike_fn(SpikeFn::Smooth);
    let (out, tape) = model.forward(xs, &opts).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let mut w = |a: &Array2<f64>| Array2::from_shape_simple_fn(a.dim(), || rng.random_range(-1.0..1.0));
    let weights = match &out {
        ModelOutput::Logits(l) => ModelOutput::Logits(w(l)),
        ModelOutput::Sequences(s) => ModelOutput::Sequences(s.iter().map(&mut w).collect()),
    };
    let objective = |m: &Model| -> Result<f64, String> {
        let (o, _) = m.forward(xs, &opts).map_err(|e| e.to_string())?;
        Ok(match (&o, &weights) {
            (ModelOutput::Logits(a), ModelOutput::Logits(b)) => (a * b).sum(),
            (ModelOutput::Sequences(a), ModelOutput::Sequences(b)) => a.iter().zip(b).map(|(x, y)| (x * y).sum()).sum(),
            _ => unreachable!(),
        })
    };
    let grads = model.backward(&tape, &weights).map_err(|e| e.to_string())?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let step = 1e-3;
    for p in model.params().iter().filter(|p| p.role.trainable()) {
        let id = probe.params().find(&p.name).unwrap();
        let analytic = grads.get(&p.name).unwrap().to_vec();
        let mut numeric = Vec::with_capacity(p.data.len());
        for k in 0..p.data.len() {
            let mut at = |d: f64| -> Result<f64, String> {
                probe.params_mut().data_mut(id)[k] = p.data[k] + d;
                let v = objective(&probe);
                probe.params_mut().data_mut(id)[k] = p.data[k];
                v
            };
            let (a, b, c, e) = (at(step)?, at(-step)?, at(2.0 * step)?, at(-2.0 * step)?);
            numeric.push((8.0 * (a - b) - (c - e)) / (12.0 * step));
        }
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = numeric.iter().zip(&analytic).map(|(a, b)| a - b).collect();
        worst = worst.max(n(&diff) / n(&numeric).max(n(&analytic)).max(1e-6));
    }
    Ok(worst)
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xs: Vec<Array2<f64>> = (0..3)
        .map(|_| Array2::from_shape_simple_fn((8, 2), || rng.random_range(-1.5..1.5)))
        .collect();
    let mut cls = ModelConfig::classification(2, 2, 2, 2, 2);
    cls.dropout = 0.25;
    let mut reg = ModelConfig::regression(2, 2, 2, 2, 1);
    reg.task = Task::Regression {
        out_dim: 1,
        kernel_size: 4,
    };
    let mut worst = 0.0f64;
    for cfg in [cls, reg] {
        for scheme in Scheme::ALL {
            let mut c = cfg.clone();
            c.scheme = scheme;
            let model = Model::new(c, 5).map_err(|e| e.to_string())?;
            for training in [false, true] {
                worst = worst.max(fd_check(&model, &xs, training, 11)?);
            }
        }
    }
    ensure(
        worst <= 1e-5,
        format!("P=2, H=2, L=8, 3 schemes x train/eval x classifier/regressor: max rel err {worst:.2e} (<= 1e-5)"),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let data = FrequencyTask::default().generate().map_err(|e| e.to_string())?;
    let mut tc = TrainConfig::new(Loss::CrossEntropy);
    tc.lr = 1e-2;
    tc.epochs = 50;
    tc.patience = Some(5);
    let model = Model::new(ModelConfig::classification(1, 16, 16, 2, 2), 0).map_err(|e| e.to_string())?;
    let res = fit(model, &data, &tc).map_err(|e| e.to_string())?;
    let acc = res.best_val.accuracy.unwrap_or(0.0);
    let cls_time = start.elapsed();

    let data = DelayedSumTask::default().generate().map_err(|e| e.to_string())?;
    let mut cfg = ModelConfig::regression(1, 16, 16, 2, 1);
    cfg.task = Task::Regression {
        out_dim: 1,
        kernel_size: 64,
    };
    let mut tc = TrainConfig::new(Loss::Mse);
    tc.lr = 1e-2;
    tc.epochs = 15;
    tc.batch_size = 8;
    let res_r = fit(Model::new(cfg, 0).map_err(|e| e.to_string())?, &data, &tc).map_err(|e| e.to_string())?;
    let test = data.subset(&res_r.split.test);
    let mse = evaluate(&res_r.model, &test, Loss::Mse, 8)
        .map_err(|e| e.to_string())?
        .loss;
    let (Targets::Sequences(train_y), Targets::Sequences(test_y)) = (
        data.subset(&res_r.split.train).targets().clone(),
        test.targets().clone(),
    ) else {
        return Err("regression targets expected".into());
    };
    let count: usize = train_y.iter().map(|y| y.len()).sum();
    let mean = train_y.iter().map(|y| y.sum()).sum::<f64>() / count as f64;
    let n_test: usize = test_y.iter().map(|y| y.len()).sum();
    let base = test_y
        .iter()
        .map(|y| y.mapv(|v| (v - mean) * (v - mean)).sum())
        .sum::<f64>()
        / n_test as f64;
    let factor = base / mse;
    ensure(
        acc >= 0.95 && res.best_epoch <= 50 && cls_time < Duration::from_secs(600) && factor >= 2.0,
        format!(
            "frequency task val acc {acc:.3} (>= 0.95) at epoch {} in {:.0} s (< 600 s); delayed sum test MSE {mse:.4} vs mean predictor {base:.4}: {factor:.2}x (>= 2x)",
            res.best_epoch,
            cls_time.as_secs_f64()
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs: Vec<Array2<f64>> = (0..4)
        .map(|_| Array2::from_shape_simple_fn((64, 3), || rng.random_range(-2.0..2.0)))
        .collect();
    let mut configs = Vec::new();
    for scheme in Scheme::ALL {
        let mut c = ModelConfig::classification(3, 6, 5, 3, 3);
        c.scheme = scheme;
        c.dropout = 0.2;
        configs.push(c.clone());
        c.ssm_only = true;
        configs.push(c);
        let mut r = ModelConfig::regression(3, 6, 5, 2, 2);
        r.scheme = scheme;
        r.task = Task::Regression {
            out_dim: 2,
            kernel_size: 8,
        };
        configs.push(r);
    }
    let (mut passes, mut tensors, mut acc, mut spike_mul) = (0, 0, 0u64, 0u64);
    for (i, cfg) in configs.into_iter().enumerate() {
        let model = Model::new(cfg, i as u64).map_err(|e| e.to_string())?;
        for opts in [ForwardOptions::eval(), ForwardOptions::train(i as u64)] {
            let counter = OpCounter::new();
            let (_, tape) = model
                .forward(&xs, &opts.with_counter(&counter))
                .map_err(|e| e.to_string())?;
            let spikes = tape
                .boundary_spikes()
                .map_err(|e| format!("non-binary boundary: {e}"))?;
            tensors += spikes.iter().map(Vec::len).sum::<usize>();
            let t = counter.tally();
            acc += t.accumulates;
            spike_mul += t.spike_multiplies;
            passes += 1;
        }
    }
    ensure(
        spike_mul == 0 && acc > 0,
        format!("{passes} forward passes, {tensors} inter-block tensors all binary; spike-operand multiplies {spike_mul}, accumulates {acc}"),
    )
}

fn criterion_10() -> Outcome {
    let data = FrequencyTask {
        samples: 200,
        len: 200,
        periods: [20.0, 10.0],
        ..Default::default()
    }
    .generate()
    .map_err(|e| e.to_string())?;
    let cfg = ModelConfig::classification(1, 8, 8, 2, 2);
    let mut tc = TrainConfig::new(Loss::CrossEntropy);
    tc.lr = 1e-2;
    tc.epochs = 15;
    let seeds = [0, 1, 2, 3, 4];
    let run = |spec: &AblationSpec| run_ablation(spec, &data, &cfg, &tc, &seeds).map_err(|e| e.to_string());
    let het = run(&AblationSpec::heterogeneous())?;
    let dead_spec = AblationSpec::parse("b,c").map_err(|e| e.to_string())?;
    let dead = run(&dead_spec)?;
    let n_test = split_indices(data.len(), tc.split, 0)
        .map_err(|e| e.to_string())?
        .test
        .len()
        * seeds.len();
    let half_width = 1.96 * (0.25 / n_test as f64).sqrt();
    let chance = (dead.mean - 0.5).abs() <= half_width;

    // B and C stay exactly zero through training.
    let mut one = tc.clone();
    one.seed = 0;
    let trained = fit(
        Model::new(dead_spec.apply(&cfg), 0).map_err(|e| e.to_string())?,
        &data,
        &one,
    )
    .map_err(|e| e.to_string())?;
    let zero = trained
        .model
        .params()
        .iter()
        .filter(|p| p.name.ends_with(".B") || p.name.ends_with(".C"))
        .all(|p| p.data.iter().all(|&v| v == 0.0));

    let mut worst_margin = f64::INFINITY;
    let mut lines = Vec::new();
    for c in sharessm::network::Component::ALL {
        let r = run(&AblationSpec::single(c))?;
        let margin = het.mean - (r.mean - 2.0 * pooled_std(&het, &r));
        worst_margin = worst_margin.min(margin);
        lines.push(format!("{}={:.3}", r.label, r.mean));
    }
    ensure(
        chance && zero && worst_margin >= 0.0,
        format!(
            "B=C=0: {:.3} ± {:.3} vs chance 0.5 ± {half_width:.3} (n={n_test}), B and C stay 0={zero}; heterogeneous {:.3} ± {:.3}, singles [{}], worst margin {worst_margin:.3} (>= 0)",
            dead.mean,
            dead.std,
            het.mean,
            het.std,
            lines.join(", ")
        ),
    )
}

const RUN_CONFIG: &str = r#"
[data]
kind = "frequency"
samples = 48
len = 120
periods = [20.0, 10.0]

[model]
input_dim = 1
hidden = 6
state = 6
n_blocks = 2
scheme = "imex"
dropout = 0.1
task = { kind = "classification", num_classes = 2 }

[train]
lr = 0.01
batch_size = 8
epochs = 3
seed = 3
loss = "cross_entropy"
"#;

fn criterion_11(tmp: &Path) -> Outcome {
    let cfg = tmp.join("run.toml");
    std::fs::write(&cfg, RUN_CONFIG).map_err(|e| e.to_string())?;
    let cfg = cfg.to_str().unwrap();
    let runs: Vec<(Vec<&str>, Vec<&str>)> = vec![
        (
            vec!["train", "--config", cfg],
            vec![
                "metrics.csv",
                "test_metrics.csv",
                "firing_rates.csv",
                "checkpoint.bin",
                "config.toml",
                "inputs.sha256",
                "seed",
            ],
        ),
        (
            vec![
                "ablate",
                "--config",
                cfg,
                "--variant",
                "heterogeneous",
                "--variant",
                "b,c",
                "--seeds",
                "0,1",
            ],
            vec!["ablation.csv", "ablation_summary.csv"],
        ),
        (
            vec!["search", "--config", cfg, "--budget", "2"],
            vec!["trials.csv", "best.toml"],
        ),
        (
            vec!["spectra", "--scheme", "imex", "--samples", "50", "--seed", "4"],
            vec!["spectrum.csv"],
        ),
        (
            vec!["energy", "--seq-len", "1000"],
            vec!["energy_layers.csv", "energy_sweep.csv"],
        ),
    ];
    let mut compared = 0;
    for (i, (args, files)) in runs.iter().enumerate() {
        let dirs: Vec<String> = ["a", "b", "c"]
            .iter()
            .map(|s| tmp.join(format!("det{i}{s}")).display().to_string())
            .collect();
        for (dir, threads) in dirs.iter().zip([None, None, Some("1")]) {
            let mut a = args.clone();
            a.extend(["--out", dir.as_str()]);
            run_cli(&a, threads)?;
        }
        for f in files {
            let first = std::fs::read(Path::new(&dirs[0]).join(f)).map_err(|e| format!("{f}: {e}"))?;
            for d in &dirs[1..] {
                let other = std::fs::read(Path::new(d).join(f)).map_err(|e| format!("{f}: {e}"))?;
                if first != other {
                    return Err(format!("{} differs between repeated `{}` runs", f, args[0]));
                }
            }
            compared += 1;
        }
    }
    // Evaluation of the saved checkpoint is repeatable too.
    let ckpt = tmp.join("det0a").join("checkpoint.bin");
    let mut evals = Vec::new();
    for s in ["x", "y"] {
        let dir = tmp.join(format!("eval{s}"));
        run_cli(
            &[
                "eval",
                "--config",
                cfg,
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--out",
                dir.to_str().unwrap(),
            ],
            None,
        )?;
        evals.push(std::fs::read(dir.join("eval_metrics.csv")).map_err(|e| e.to_string())?);
    }
    ensure(
        evals[0] == evals[1],
        format!(
            "{compared} artifact files bit-identical across 3 runs each (default pool and 1 thread), eval repeatable"
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<Check> = vec![
        ("scan equivalence", Box::new(criterion_1)),
        ("IM eigenvalues", Box::new(|| criterion_2(tmp.path()))),
        ("IMEX eigenvalues", Box::new(criterion_3)),
        ("eigenvalue moments", Box::new(criterion_4)),
        ("single-neuron response", Box::new(|| criterion_5(tmp.path()))),
        ("energy model", Box::new(criterion_6)),
        ("gradient correctness", Box::new(criterion_7)),
        ("trainability", Box::new(criterion_8)),
        ("spike purity", Box::new(criterion_9)),
        ("ablation directionality", Box::new(criterion_10)),
        ("determinism", Box::new(|| criterion_11(tmp.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} {:>2} {name}: {detail} [{:.1} s]",
            i + 1,
            t.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
