//! Optimizer, losses, the training loop, search and ablations.

mod ablation;
mod fit;
mod loss;
mod optim;
mod search;

pub use ablation::{
    ablation_csv, ablation_summary_csv, pooled_std, run_ablation, AblationResult, AblationSpec, AblationTarget,
};
pub use fit::{evaluate, fit, fit_split, history_csv, FitResult, MetricRow, Metrics, TrainConfig};
pub use loss::{accuracy, loss_and_grad, Loss};
pub use optim::{Adam, AdamConfig};
pub use search::{random_search, sample_trials, trials_csv, SearchSpace, Trial, TrialParams};
