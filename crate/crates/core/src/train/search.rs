//! Seeded random search over the model/training grid.

use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fit::{evaluate, fit, Metrics, TrainConfig};
use crate::data::Dataset;
use crate::error::{parameter, Result};
use crate::network::{Model, ModelConfig};

/// Candidate values per hyperparameter; each trial draws one value from each
/// list independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub lr: Vec<f64>,
    pub hidden: Vec<usize>,
    pub n_blocks: Vec<usize>,
    pub state: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lr: vec![1e-3, 1e-4, 1e-5],
            hidden: vec![16, 64, 128],
            n_blocks: vec![2, 4, 6],
            state: vec![16, 64, 256],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_empty() || self.hidden.is_empty() || self.n_blocks.is_empty() || self.state.is_empty() {
            return Err(parameter("search space has an empty dimension"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub lr: f64,
    pub hidden: usize,
    pub n_blocks: usize,
    pub state: usize,
}

impl TrialParams {
    pub fn from_configs(model: &ModelConfig, train: &TrainConfig) -> Self {
        Self {
            lr: train.lr,
            hidden: model.hidden,
            n_blocks: model.n_blocks,
            state: model.state,
        }
    }

    pub fn apply(&self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let mut m = model.clone();
        m.hidden = self.hidden;
        m.n_blocks = self.n_blocks;
        m.state = self.state;
        let mut t = train.clone();
        t.lr = self.lr;
        (m, t)
    }
}

/// `budget` trials; the first is `base`, the rest are uniform draws.
pub fn sample_trials(space: &SearchSpace, budget: usize, seed: u64, base: TrialParams) -> Result<Vec<TrialParams>> {
    space.validate()?;
    if budget == 0 {
        return Err(parameter("search budget must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = vec![base];
    while trials.len() < budget {
        trials.push(TrialParams {
            lr: *space.lr.choose(&mut rng).expect("non-empty"),
            hidden: *space.hidden.choose(&mut rng).expect("non-empty"),
            n_blocks: *space.n_blocks.choose(&mut rng).expect("non-empty"),
            state: *space.state.choose(&mut rng).expect("non-empty"),
        });
    }
    Ok(trials)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub params: TrialParams,
    pub best_epoch: usize,
    pub val: Metrics,
    pub test: Metrics,
}

/// Trains every sampled trial on the same split and returns them ranked by
/// validation score (ties keep sampling order).
pub fn random_search(
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    model: &ModelConfig,
    train: &TrainConfig,
    data: &Dataset,
) -> Result<Vec<Trial>> {
    let params = sample_trials(space, budget, seed, TrialParams::from_configs(model, train))?;
    let mut trials = Vec::with_capacity(params.len());
    for (index, p) in params.into_iter().enumerate() {
        let (mc, tc) = p.apply(model, train);
        let res = fit(Model::new(mc, tc.seed)?, data, &tc)?;
        let test = evaluate(&res.model, &data.subset(&res.split.test), tc.loss, tc.batch_size)?;
        trials.push(Trial {
            index,
            params: p,
            best_epoch: res.best_epoch,
            val: res.best_val,
            test,
        });
    }
    trials.sort_by(|a, b| b.val.score().total_cmp(&a.val.score()).then(a.index.cmp(&b.index)));
    Ok(trials)
}

pub fn trials_csv(trials: &[Trial]) -> String {
    let mut s =
        String::from("rank,trial,lr,hidden,n_blocks,state,best_epoch,val_score,val_loss,test_score,test_loss\n");
    for (rank, t) in trials.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            rank + 1,
            t.index,
            t.params.lr,
            t.params.hidden,
            t.params.n_blocks,
            t.params.state,
            t.best_epoch,
            t.val.score(),
            t.val.loss,
            t.test.score(),
            t.test.loss
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> TrialParams {
        TrialParams {
            lr: 1e-3,
            hidden: 16,
            n_blocks: 2,
            state: 16,
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_trials(&SearchSpace::default(), 15, 4, base()).unwrap();
        assert_eq!(a, sample_trials(&SearchSpace::default(), 15, 4, base()).unwrap());
        assert_eq!(a.len(), 15);
        assert_eq!(a[0], base());
        assert_ne!(a, sample_trials(&SearchSpace::default(), 15, 5, base()).unwrap());
    }

    #[test]
    fn budget_one_is_the_base_point() {
        assert_eq!(
            sample_trials(&SearchSpace::default(), 1, 9, base()).unwrap(),
            vec![base()]
        );
    }

    #[test]
    fn empty_space_and_budget_rejected() {
        let mut s = SearchSpace::default();
        assert!(sample_trials(&s, 0, 0, base()).is_err());
        s.state.clear();
        assert!(sample_trials(&s, 3, 0, base()).is_err());
    }
}
