//! Hyperparameter search: TPE sampling, median pruning and a two-phase
//! coarse-to-fine schedule.

mod gbt;
mod space;
mod study;
mod tpe;

pub use gbt::{apply_params, default_gbt_space, gbt_objective, DEFAULT_PATIENCE, REPORT_EVERY};
pub use space::{Distribution, Params, SearchSpace, Value};
pub use study::{
    best_of, coarse_to_fine, median_prune, should_prune, CoarseToFine, Objective, Reporter, Study, StudyConfig,
    Trial, TrialState, MIN_PRUNE_TRIALS,
};
pub use tpe::{tpe_suggest, TpeConfig};
