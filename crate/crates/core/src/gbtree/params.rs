use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification { num_classes: usize },
}

impl Task {
    /// Trees grown per boosting round.
    pub fn outputs(&self) -> usize {
        match self {
            Task::Regression => 1,
            Task::Classification { num_classes } => *num_classes,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Classification { .. } => "classification",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Histogram,
    /// Every distinct value is a candidate threshold. Slow; for cross-checks.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub num_rounds: usize,
    pub learning_rate: f64,
    /// 0 grows single-leaf trees.
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub subsample: f64,
    pub colsample: f64,
    pub num_bins: usize,
    pub seed: u64,
    pub early_stopping_rounds: Option<usize>,
    pub task: Task,
    pub split_mode: SplitMode,
    /// Replaces the mean / log-prior starting margin.
    pub base_score: Option<f64>,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            num_rounds: 300,
            learning_rate: 0.1,
            max_depth: 6,
            min_child_weight: 1.0,
            lambda: 1.0,
            gamma: 0.0,
            subsample: 0.8,
            colsample: 0.8,
            num_bins: 64,
            seed: 0,
            early_stopping_rounds: None,
            task: Task::Regression,
            split_mode: SplitMode::Histogram,
            base_score: None,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(self.lambda >= 0.0 && self.gamma >= 0.0 && self.min_child_weight >= 0.0) {
            return bad("lambda, gamma and min_child_weight must be non-negative");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0 && self.colsample > 0.0 && self.colsample <= 1.0) {
            return bad("subsample and colsample must lie in (0, 1]");
        }
        if !(2..=256).contains(&self.num_bins) {
            return bad("num_bins must lie in [2, 256]");
        }
        if let Task::Classification { num_classes } = self.task {
            if num_classes < 2 {
                return bad("classification needs at least two classes");
            }
        }
        if self.base_score.is_some_and(|b| !b.is_finite()) {
            return bad("base_score must be finite");
        }
        Ok(())
    }
}
