use ndarray::Array2;
use sharessm::data::{DelayedSumTask, FrequencyTask};
use sharessm::network::{checkpoint, ForwardOptions, Model, ModelConfig, ModelOutput, Task, THRESHOLD_FLOOR};
use sharessm::scan::ScanConfig;
use sharessm::train::{fit, random_search, sample_trials, Loss, SearchSpace, TrainConfig, TrialParams};

fn small_task() -> sharessm::data::Dataset {
    FrequencyTask {
        samples: 40,
        len: 80,
        periods: [20.0, 10.0],
        ..Default::default()
    }
    .generate()
    .unwrap()
}

fn small_train() -> TrainConfig {
    let mut tc = TrainConfig::new(Loss::CrossEntropy);
    tc.lr = 1e-2;
    tc.epochs = 3;
    tc.batch_size = 8;
    tc
}

#[test]
fn fit_is_deterministic() {
    let data = small_task();
    let mut cfg = ModelConfig::classification(1, 6, 6, 2, 2);
    cfg.dropout = 0.2;
    let a = fit(Model::new(cfg.clone(), 1).unwrap(), &data, &small_train()).unwrap();
    let b = fit(Model::new(cfg, 1).unwrap(), &data, &small_train()).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.params(), b.model.params());
}

#[test]
fn every_trainable_parameter_gets_gradient() {
    for task in ["classify", "regress"] {
        let (cfg, xs) = match task {
            "classify" => (ModelConfig::classification(2, 5, 4, 2, 3), 2),
            _ => {
                let mut c = ModelConfig::regression(2, 5, 4, 2, 2);
                c.task = Task::Regression {
                    out_dim: 2,
                    kernel_size: 8,
                };
                (c, 2)
            }
        };
        // Seed chosen so no spike stage is silent on this batch; a silent
        // stage legitimately zeroes the weights that read from it.
        let model = Model::new(cfg, 1).unwrap();
        let inputs: Vec<Array2<f64>> = (0..4)
            .map(|s| Array2::from_shape_fn((40, xs), |(t, c)| 1.5 * ((t as f64) * 0.3 + (c + s) as f64).sin()))
            .collect();
        let (out, tape) = model.forward(&inputs, &ForwardOptions::train(2)).unwrap();
        let grad = match out {
            ModelOutput::Logits(l) => ModelOutput::Logits(l.mapv(|v| v.cos())),
            ModelOutput::Sequences(s) => ModelOutput::Sequences(s.into_iter().map(|y| y.mapv(|v| v.cos())).collect()),
        };
        let grads = model.backward(&tape, &grad).unwrap();
        for p in model.params().iter().filter(|p| p.role.trainable()) {
            let g = grads.get(&p.name).unwrap();
            assert!(
                g.iter().any(|v| *v != 0.0),
                "{task}: {} has an all-zero gradient",
                p.name
            );
        }
    }
}

#[test]
fn projection_holds_after_training() {
    let data = small_task();
    let cfg = ModelConfig::classification(1, 6, 6, 2, 2);
    let mut tc = small_train();
    tc.lr = 0.5;
    let res = fit(Model::new(cfg.clone(), 0).unwrap(), &data, &tc).unwrap();
    for p in res.model.params().iter() {
        if p.name.ends_with(".omega") {
            assert!(p.data.iter().all(|&w| (0.0..=cfg.omega_max).contains(&w)), "{}", p.name);
        } else if p.name.ends_with(".dt") {
            assert!(p.data.iter().all(|&h| (cfg.dt_min..=1.0).contains(&h)), "{}", p.name);
        } else if p.name.contains("theta") {
            assert!(p.data.iter().all(|&t| t >= THRESHOLD_FLOOR), "{}", p.name);
        }
    }
}

#[test]
fn scan_modes_agree_on_long_inputs() {
    let model = Model::new(ModelConfig::classification(1, 4, 4, 2, 2), 8).unwrap();
    let xs: Vec<Array2<f64>> = (0..2)
        .map(|s| Array2::from_shape_fn((3000, 1), |(t, _)| ((t + s) as f64 * 0.05).sin()))
        .collect();
    let seq = ForwardOptions::eval().with_scan(ScanConfig::sequential());
    let par = ForwardOptions::eval().with_scan(ScanConfig::parallel_always());
    let (a, ta) = model.forward(&xs, &seq).unwrap();
    let (b, tb) = model.forward(&xs, &par).unwrap();
    let diff = (a.logits().unwrap() - b.logits().unwrap())
        .mapv(f64::abs)
        .fold(0.0f64, |m, v| m.max(*v));
    assert!(diff < 1e-9, "{diff}");
    // Spikes can only flip where a membrane value sits within roundoff of threshold.
    let flips: f64 = ta
        .boundaries()
        .iter()
        .flatten()
        .zip(tb.boundaries().iter().flatten())
        .map(|(x, y)| (x - y).mapv(f64::abs).sum())
        .sum();
    assert_eq!(flips, 0.0);
}

#[test]
fn search_respects_budget_and_keeps_default_first() {
    let data = small_task();
    let cfg = ModelConfig::classification(1, 4, 4, 1, 2);
    let space = SearchSpace {
        lr: vec![1e-2, 1e-3],
        hidden: vec![3, 4],
        n_blocks: vec![1],
        state: vec![2, 4],
    };
    let tc = small_train();
    let base = TrialParams::from_configs(&cfg, &tc);
    let sampled = sample_trials(&space, 4, 9, base).unwrap();
    assert_eq!(sampled.len(), 4);
    assert_eq!(sampled[0], base);
    let trials = random_search(&space, 4, 9, &cfg, &tc, &data).unwrap();
    assert_eq!(trials.len(), 4);
    let default = trials.iter().find(|t| t.index == 0).unwrap();
    assert!(trials[0].val.score() >= default.val.score());
    assert!(trials.windows(2).all(|w| w[0].val.score() >= w[1].val.score()));
}

#[test]
fn trained_regressor_survives_checkpoint() {
    let data = DelayedSumTask {
        samples: 12,
        len: 60,
        lag: 10,
        window: 5,
        periods: (30.0, 80.0),
        ..Default::default()
    }
    .generate()
    .unwrap();
    let mut cfg = ModelConfig::regression(1, 4, 4, 1, 1);
    cfg.task = Task::Regression {
        out_dim: 1,
        kernel_size: 8,
    };
    let mut tc = TrainConfig::new(Loss::Mae);
    tc.epochs = 2;
    tc.batch_size = 4;
    let res = fit(Model::new(cfg, 5).unwrap(), &data, &tc).unwrap();
    let (back, seed) = checkpoint::from_bytes(&checkpoint::to_bytes(&res.model, 5)).unwrap();
    assert_eq!(seed, 5);
    let a = res.model.predict(data.inputs()).unwrap();
    let b = back.predict(data.inputs()).unwrap();
    assert_eq!(a, b);
}
