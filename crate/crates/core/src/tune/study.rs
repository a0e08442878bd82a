use std::fmt::Write as _;
use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::space::{Params, SearchSpace};
use super::tpe::{tpe_suggest, TpeConfig};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialState {
    Running,
    Pruned,
    Complete,
    Failed,
}

impl TrialState {
    pub fn name(&self) -> &'static str {
        match self {
            TrialState::Running => "running",
            TrialState::Pruned => "pruned",
            TrialState::Complete => "complete",
            TrialState::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub params: Params,
    /// `(step, metric)` in report order.
    pub intermediate: Vec<(usize, f64)>,
    /// Present iff the trial completed.
    pub value: Option<f64>,
    pub state: TrialState,
    pub error: Option<String>,
}

impl Trial {
    pub fn is_complete(&self) -> bool {
        self.state == TrialState::Complete && self.value.is_some()
    }

    pub fn at_step(&self, step: usize) -> Option<f64> {
        self.intermediate.iter().rev().find(|(s, _)| *s == step).map(|(_, v)| *v)
    }
}

pub const MIN_PRUNE_TRIALS: usize = 5;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Whether `value` reported at `step` is strictly worse (higher) than the
/// median of completed trials at that step, given at least `min_trials`
/// of them reported there.
pub fn should_prune(value: f64, history: &[Trial], step: usize, min_trials: usize) -> bool {
    let mut peers: Vec<f64> = history
        .iter()
        .filter(|t| t.is_complete())
        .filter_map(|t| t.at_step(step))
        .collect();
    if peers.len() < min_trials.max(1) {
        return false;
    }
    value > median(&mut peers)
}

/// Median pruning rule applied to `trial`'s report at `step`.
pub fn median_prune(trial: &Trial, history: &[Trial], step: usize) -> bool {
    trial
        .at_step(step)
        .is_some_and(|v| should_prune(v, history, step, MIN_PRUNE_TRIALS))
}

/// Handed to the objective for intermediate reports.
pub struct Reporter<'a> {
    history: &'a [Trial],
    pruning: bool,
    intermediate: Vec<(usize, f64)>,
    pruned: bool,
}

impl Reporter<'_> {
    /// Records a metric; `Break` asks the objective to stop early.
    pub fn report(&mut self, step: usize, value: f64) -> ControlFlow<()> {
        self.intermediate.push((step, value));
        if self.pruning && should_prune(value, self.history, step, MIN_PRUNE_TRIALS) {
            self.pruned = true;
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    }

    pub fn is_pruned(&self) -> bool {
        self.pruned
    }
}

pub type Objective<'a> = dyn Fn(&Params, &mut Reporter) -> Result<f64> + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub tpe: TpeConfig,
    pub pruning: bool,
    /// Trials evaluated concurrently; each batch is suggested from the same
    /// snapshot so results do not depend on scheduling.
    pub workers: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            tpe: TpeConfig::default(),
            pruning: true,
            workers: 1,
        }
    }
}

pub struct Study {
    pub space: SearchSpace,
    pub config: StudyConfig,
    /// Trials from earlier searches used as TPE and pruning history only.
    pub prior: Vec<Trial>,
    pub trials: Vec<Trial>,
    next_id: usize,
    rng: Xoshiro256PlusPlus,
}

fn run_trial(id: usize, params: Params, objective: &Objective, history: &[Trial], pruning: bool) -> Trial {
    let mut reporter = Reporter {
        history,
        pruning,
        intermediate: Vec::new(),
        pruned: false,
    };
    let outcome = objective(&params, &mut reporter);
    let (state, value, error) = match outcome {
        _ if reporter.pruned => (TrialState::Pruned, None, None),
        Ok(v) if v.is_finite() => (TrialState::Complete, Some(v), None),
        Ok(v) => (
            TrialState::Failed,
            None,
            Some(Error::ObjectiveFailure { trial: id, reason: format!("non-finite objective {v}") }.to_string()),
        ),
        Err(e) => (
            TrialState::Failed,
            None,
            Some(Error::ObjectiveFailure { trial: id, reason: e.to_string() }.to_string()),
        ),
    };
    Trial {
        id,
        params,
        intermediate: reporter.intermediate,
        value,
        state,
        error,
    }
}

impl Study {
    pub fn new(space: SearchSpace, config: StudyConfig, seed: u64) -> Result<Self> {
        if space.is_empty() {
            return Err(Error::EmptySpace);
        }
        Ok(Self {
            space,
            config,
            prior: Vec::new(),
            trials: Vec::new(),
            next_id: 0,
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        })
    }

    /// Continues trial numbering from `first_id`.
    pub fn starting_at(mut self, first_id: usize) -> Self {
        self.next_id = first_id;
        self
    }

    /// Runs `n` more trials. Objective errors mark the trial failed and the
    /// search continues.
    pub fn optimize(&mut self, objective: &Objective, n: usize) -> Result<()> {
        let workers = self.config.workers.max(1);
        let mut remaining = n;
        while remaining > 0 {
            let batch = remaining.min(workers);
            let history: Vec<Trial> = self.prior.iter().chain(&self.trials).cloned().collect();
            let mut suggestions = Vec::with_capacity(batch);
            for _ in 0..batch {
                suggestions.push((
                    self.next_id,
                    tpe_suggest(&history, &self.space, &self.config.tpe, &mut self.rng)?,
                ));
                self.next_id += 1;
            }
            let pruning = self.config.pruning;
            let done: Vec<Trial> = if batch == 1 {
                suggestions
                    .into_iter()
                    .map(|(id, p)| run_trial(id, p, objective, &history, pruning))
                    .collect()
            } else {
                suggestions
                    .into_par_iter()
                    .map(|(id, p)| run_trial(id, p, objective, &history, pruning))
                    .collect()
            };
            self.trials.extend(done);
            remaining -= batch;
        }
        Ok(())
    }

    /// Lowest completed objective (earliest on ties).
    pub fn best(&self) -> Option<&Trial> {
        best_of(&self.trials)
    }
}

pub fn best_of(trials: &[Trial]) -> Option<&Trial> {
    trials
        .iter()
        .filter(|t| t.is_complete())
        .fold(None, |acc: Option<&Trial>, t| match acc {
            Some(b) if b.value.unwrap_or(f64::INFINITY) <= t.value.unwrap_or(f64::INFINITY) => Some(b),
            _ => Some(t),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoarseToFine {
    pub best: Trial,
    pub phase1_best: Trial,
    pub phase2_best: Option<Trial>,
    pub phase1_space: SearchSpace,
    pub phase2_space: SearchSpace,
    pub trials: Vec<Trial>,
    pub budget: (usize, usize),
    pub narrow: f64,
    pub seed: u64,
    pub config: StudyConfig,
}

/// Broad TPE search over `space`, then a second search over the space
/// narrowed around the phase-1 best. Phase-1 trials that fall inside the
/// narrowed space seed the second phase's history.
pub fn coarse_to_fine(
    space: &SearchSpace,
    objective: &Objective,
    budget: (usize, usize),
    narrow: f64,
    seed: u64,
    config: StudyConfig,
) -> Result<CoarseToFine> {
    let (n1, n2) = budget;
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidConfig(format!("phase budgets must be at least 1, got ({n1}, {n2})")));
    }
    let mut phase1 = Study::new(space.clone(), config, derive_seed(seed, "tune/phase1"))?;
    phase1.optimize(objective, n1)?;
    let phase1_best = phase1.best().cloned().ok_or(Error::NoCompletedTrials)?;
    let narrowed = space.narrowed(&phase1_best.params, narrow)?;
    let mut phase2 = Study::new(narrowed.clone(), config, derive_seed(seed, "tune/phase2"))?.starting_at(n1);
    phase2.prior = phase1.trials.clone();
    phase2.optimize(objective, n2)?;
    let phase2_best = phase2.best().cloned();
    let mut trials = phase1.trials;
    trials.extend(phase2.trials);
    let best = best_of(&trials).cloned().expect("phase 1 completed");
    Ok(CoarseToFine {
        best,
        phase1_best,
        phase2_best,
        phase1_space: space.clone(),
        phase2_space: narrowed,
        trials,
        budget,
        narrow,
        seed,
        config,
    })
}

impl CoarseToFine {
    /// Study log: `#` settings lines, then
    /// `trial,state,metric,step_metrics,params_json_blob`.
    pub fn log_csv(&self) -> Result<Vec<u8>> {
        let mut out = String::new();
        let t = &self.config.tpe;
        let _ = writeln!(
            out,
            "# n1={} n2={} narrow={} seed={} gamma={} n_candidates={} n_startup={} pruning={}",
            self.budget.0, self.budget.1, self.narrow, self.seed, t.gamma, t.n_candidates, t.n_startup, self.config.pruning
        );
        let _ = writeln!(out, "# phase2_space={}", serde_json::to_string(&self.phase2_space)?);
        let mut bytes = out.into_bytes();
        let mut w = csv::Writer::from_writer(&mut bytes);
        w.write_record(["trial", "state", "metric", "step_metrics", "params_json_blob"])?;
        for trial in &self.trials {
            let steps: Vec<String> = trial.intermediate.iter().map(|(s, v)| format!("{s}:{v}")).collect();
            w.write_record([
                trial.id.to_string(),
                trial.state.name().to_string(),
                trial.value.map(|v| v.to_string()).unwrap_or_default(),
                steps.join(";"),
                serde_json::to_string(&trial.params)?,
            ])?;
        }
        w.flush().map_err(|e| Error::io("<study log>", e))?;
        drop(w);
        Ok(bytes)
    }

    /// The best parameters as a `[train]` TOML fragment.
    pub fn best_toml(&self) -> String {
        format!(
            "# best objective {}\n[train]\n{}",
            self.best.value.unwrap_or(f64::NAN),
            SearchSpace::params_toml(&self.best.params)
        )
    }
}
