use std::ops::ControlFlow;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binning::BinnedMatrix;
use super::params::{Task, TrainParams};
use super::tree::{Grower, Node, Tree};
use crate::error::{Error, Result};
use crate::labeling::Labeler;
use crate::postprocess::Scaler;

pub const FORMAT_VERSION: u16 = 1;

const HESS_FLOOR: f64 = 1e-16;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Regression(&'a [f64]),
    Classes(&'a [u8]),
}

/// A borrowed row-major training or validation set.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub data: &'a [f64],
    pub n_rows: usize,
    pub n_features: usize,
    pub targets: Targets<'a>,
}

impl<'a> Dataset<'a> {
    pub fn new(data: &'a [f64], n_features: usize, targets: Targets<'a>) -> Self {
        Self {
            data,
            n_rows: data.len().checked_div(n_features).unwrap_or(0),
            n_features,
            targets,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    fn validate(&self, task: Task) -> Result<()> {
        if self.n_rows == 0 || self.n_features == 0 {
            return Err(Error::EmptyMatrix);
        }
        let n = match self.targets {
            Targets::Regression(y) => y.len(),
            Targets::Classes(y) => y.len(),
        };
        if n != self.n_rows || self.data.len() != self.n_rows * self.n_features {
            return Err(Error::LengthMismatch(n, self.n_rows));
        }
        match (task, self.targets) {
            (Task::Regression, Targets::Regression(y)) => {
                if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteTarget { row: i });
                }
            }
            (Task::Classification { num_classes }, Targets::Classes(y)) => {
                if let Some(&label) = y.iter().find(|&&c| c as usize >= num_classes) {
                    return Err(Error::LabelOutOfRange { label: label as usize, classes: num_classes });
                }
            }
            (task, _) => {
                return Err(Error::WrongTask {
                    expected: task.name(),
                })
            }
        }
        if let Some(k) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature {
                row: k / self.n_features,
                feature: k % self.n_features,
            });
        }
        Ok(())
    }
}

/// Per-round training log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train_loss: Vec<f64>,
    pub valid_metric: Vec<f64>,
    pub best_round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub version: u16,
    pub task: Task,
    pub base_score: Vec<f64>,
    /// Round-major; classification has one tree per class per round.
    pub trees: Vec<Tree>,
    pub feature_names: Vec<String>,
    pub scaler: Option<Scaler>,
    pub labeler: Option<Labeler>,
    pub horizon: Option<usize>,
    pub params: TrainParams,
    pub config_hash: Option<String>,
}

/// Mean squared error or multiclass log-loss of margins against targets.
fn loss(task: Task, margins: &[f64], targets: Targets) -> f64 {
    match (task, targets) {
        (Task::Regression, Targets::Regression(y)) => {
            y.iter().zip(margins).map(|(y, m)| (m - y) * (m - y)).sum::<f64>() / y.len() as f64
        }
        (Task::Classification { num_classes: c }, Targets::Classes(y)) => {
            let mut p = vec![0.0; c];
            y.iter()
                .enumerate()
                .map(|(i, &k)| {
                    softmax_into(&margins[i * c..(i + 1) * c], &mut p);
                    -p[k as usize].max(PROB_FLOOR).ln()
                })
                .sum::<f64>()
                / y.len() as f64
        }
        _ => f64::NAN,
    }
}

pub(crate) fn softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

fn base_scores(params: &TrainParams, targets: Targets) -> Vec<f64> {
    match (params.task, targets) {
        (Task::Regression, Targets::Regression(y)) => {
            vec![params.base_score.unwrap_or_else(|| y.iter().sum::<f64>() / y.len() as f64)]
        }
        (Task::Classification { num_classes }, Targets::Classes(y)) => match params.base_score {
            Some(b) => vec![b; num_classes],
            None => {
                let mut counts = vec![0usize; num_classes];
                y.iter().for_each(|&k| counts[k as usize] += 1);
                counts
                    .iter()
                    .map(|&c| (c as f64 / y.len() as f64).max(PROB_FLOOR).ln())
                    .collect()
            }
        },
        _ => unreachable!("validated"),
    }
}

/// Validation metric used for early stopping: RMSE or log-loss.
fn valid_metric(task: Task, margins: &[f64], targets: Targets) -> f64 {
    match task {
        Task::Regression => loss(task, margins, targets).sqrt(),
        Task::Classification { .. } => loss(task, margins, targets),
    }
}

impl Ensemble {
    pub fn fit(train: &Dataset, params: &TrainParams, valid: Option<&Dataset>) -> Result<(Ensemble, TrainLog)> {
        Self::fit_with_monitor(train, params, valid, &mut |_, _| ControlFlow::Continue(()))
    }

    /// Like [`Ensemble::fit`], calling `monitor(round, valid_metric)` after
    /// every round when a validation set is given. `Break` stops training
    /// and keeps the trees grown so far.
    pub fn fit_with_monitor(
        train: &Dataset,
        params: &TrainParams,
        valid: Option<&Dataset>,
        monitor: &mut dyn FnMut(usize, f64) -> ControlFlow<()>,
    ) -> Result<(Ensemble, TrainLog)> {
        params.validate()?;
        train.validate(params.task)?;
        if let Some(v) = valid {
            v.validate(params.task)?;
            if v.n_features != train.n_features {
                return Err(Error::FeatureMismatch("validation set has a different width".into()));
            }
        }
        let task = params.task;
        let k = task.outputs();
        let n = train.n_rows;
        let m = train.n_features;
        let base = base_scores(params, train.targets);
        let binned = BinnedMatrix::build(train.data, n, m, params.num_bins);

        let mut margins: Vec<f64> = (0..n).flat_map(|_| base.iter().copied()).collect();
        let mut valid_margins: Vec<f64> = valid.map_or(Vec::new(), |v| (0..v.n_rows).flat_map(|_| base.iter().copied()).collect());
        let mut grad = vec![vec![0.0; n]; k];
        let mut hess = vec![vec![0.0; n]; k];
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(params.seed);
        let mut trees: Vec<Tree> = Vec::with_capacity(params.num_rounds * k);
        let mut log = TrainLog::default();
        let mut best: Option<(usize, f64)> = None;

        for round in 0..params.num_rounds {
            compute_gradients(task, &margins, train.targets, &mut grad, &mut hess);
            let mut rows: Vec<u32> = if params.subsample < 1.0 {
                (0..n as u32).filter(|_| rng.random::<f64>() < params.subsample).collect()
            } else {
                (0..n as u32).collect()
            };
            if rows.is_empty() {
                rows.push(rng.random_range(0..n as u32));
            }
            for class in 0..k {
                let features: Vec<usize> = if params.colsample < 1.0 {
                    let take = ((m as f64 * params.colsample).round() as usize).clamp(1, m);
                    let mut f = sample(&mut rng, m, take).into_vec();
                    f.sort_unstable();
                    f
                } else {
                    (0..m).collect()
                };
                let mut tree_rows = rows.clone();
                let tree = Grower {
                    binned: &binned,
                    raw: train.data,
                    n_features: m,
                    params,
                    grad: &grad[class],
                    hess: &hess[class],
                    features: &features,
                    nodes: Vec::new(),
                }
                .grow(&mut tree_rows);
                margins.par_chunks_mut(k).enumerate().for_each(|(i, mg)| mg[class] += tree.predict(train.row(i)));
                if let Some(v) = valid {
                    valid_margins
                        .par_chunks_mut(k)
                        .enumerate()
                        .for_each(|(i, mg)| mg[class] += tree.predict(v.row(i)));
                }
                trees.push(tree);
            }
            log.train_loss.push(loss(task, &margins, train.targets));
            if let Some(v) = valid {
                let metric = valid_metric(task, &valid_margins, v.targets);
                log.valid_metric.push(metric);
                if best.is_none_or(|(_, b)| metric < b) {
                    best = Some((round, metric));
                }
                if monitor(round, metric).is_break() {
                    break;
                }
                if let (Some(patience), Some((best_round, _))) = (params.early_stopping_rounds, best) {
                    if round - best_round >= patience {
                        break;
                    }
                }
            }
        }
        if let (Some(_), Some((best_round, _))) = (params.early_stopping_rounds, best) {
            trees.truncate((best_round + 1) * k);
            log.best_round = Some(best_round);
        }
        Ok((
            Ensemble {
                version: FORMAT_VERSION,
                task,
                base_score: base,
                trees,
                feature_names: (0..m).map(|j| format!("f{j}")).collect(),
                scaler: None,
                labeler: None,
                horizon: None,
                params: params.clone(),
                config_hash: None,
            },
            log,
        ))
    }

    pub fn rounds(&self) -> usize {
        self.trees.len() / self.task.outputs()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn check_features(&self, names: &[String]) -> Result<()> {
        if names != self.feature_names.as_slice() {
            return Err(Error::FeatureMismatch(format!(
                "model expects [{}], got [{}]",
                self.feature_names.join(","),
                names.join(",")
            )));
        }
        Ok(())
    }

    /// Raw class margins (or the regression value) for one raw row.
    pub fn margins_row(&self, row: &[f64], out: &mut [f64]) {
        let k = self.task.outputs();
        out[..k].copy_from_slice(&self.base_score);
        let scaled;
        let x = match &self.scaler {
            Some(s) => {
                let mut r = row.to_vec();
                s.transform_row(&mut r);
                scaled = r;
                scaled.as_slice()
            }
            None => row,
        };
        for (t, tree) in self.trees.iter().enumerate() {
            out[t % k] += tree.predict(x);
        }
    }

    fn width(&self, data: &[f64]) -> Result<usize> {
        let m = self.feature_names.len();
        if m == 0 || !data.len().is_multiple_of(m) {
            return Err(Error::FeatureMismatch(format!("row data of length {} is not a multiple of {m}", data.len())));
        }
        Ok(m)
    }

    /// Regression values, or argmax class indices as `f64`, for raw
    /// row-major rows.
    pub fn predict(&self, data: &[f64]) -> Result<Vec<f64>> {
        let m = self.width(data)?;
        let k = self.task.outputs();
        Ok(data
            .par_chunks(m)
            .map(|row| {
                let mut z = vec![0.0; k];
                self.margins_row(row, &mut z);
                match self.task {
                    Task::Regression => z[0],
                    Task::Classification { .. } => argmax(&z) as f64,
                }
            })
            .collect())
    }

    /// Single-row prediction without any thread pool involvement.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let k = self.task.outputs();
        let mut z = [0.0f64; 16];
        if k <= z.len() {
            self.margins_row(row, &mut z[..k]);
            match self.task {
                Task::Regression => z[0],
                Task::Classification { .. } => argmax(&z[..k]) as f64,
            }
        } else {
            let mut z = vec![0.0; k];
            self.margins_row(row, &mut z);
            argmax(&z) as f64
        }
    }

    pub fn predict_classes(&self, data: &[f64]) -> Result<Vec<u8>> {
        if !matches!(self.task, Task::Classification { .. }) {
            return Err(Error::WrongTask {
                expected: "classification",
            });
        }
        Ok(self.predict(data)?.into_iter().map(|v| v as u8).collect())
    }

    /// Softmax class probabilities, one row of `num_classes` per input row.
    pub fn predict_proba(&self, data: &[f64]) -> Result<Vec<Vec<f64>>> {
        let Task::Classification { num_classes } = self.task else {
            return Err(Error::WrongTask {
                expected: "classification",
            });
        };
        let m = self.width(data)?;
        Ok(data
            .par_chunks(m)
            .map(|row| {
                let mut z = vec![0.0; num_classes];
                self.margins_row(row, &mut z);
                let mut p = vec![0.0; num_classes];
                softmax_into(&z, &mut p);
                p
            })
            .collect())
    }

    /// Total split gain per feature index.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut gains = vec![0.0; self.feature_names.len()];
        for node in self.trees.iter().flat_map(|t| &t.nodes) {
            if let Node::Split { feature, gain, .. } = node {
                gains[*feature as usize] += gain;
            }
        }
        gains
    }

    pub fn node_count(&self) -> usize {
        self.trees.iter().map(|t| t.nodes.len()).sum()
    }
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

fn compute_gradients(task: Task, margins: &[f64], targets: Targets, grad: &mut [Vec<f64>], hess: &mut [Vec<f64>]) {
    match (task, targets) {
        (Task::Regression, Targets::Regression(y)) => {
            grad[0].par_iter_mut().zip(margins.par_iter().zip(y)).for_each(|(g, (m, y))| *g = m - y);
            hess[0].iter_mut().for_each(|h| *h = 1.0);
        }
        (Task::Classification { num_classes: c }, Targets::Classes(y)) => {
            let per_row: Vec<Vec<(f64, f64)>> = margins
                .par_chunks(c)
                .zip(y.par_iter())
                .map(|(z, &label)| {
                    let mut p = vec![0.0; c];
                    softmax_into(z, &mut p);
                    p.iter()
                        .enumerate()
                        .map(|(k, &pk)| {
                            let target = if k == label as usize { 1.0 } else { 0.0 };
                            (pk - target, (pk * (1.0 - pk)).max(HESS_FLOOR))
                        })
                        .collect()
                })
                .collect();
            for (i, gh) in per_row.into_iter().enumerate() {
                for (k, (g, h)) in gh.into_iter().enumerate() {
                    grad[k][i] = g;
                    hess[k][i] = h;
                }
            }
        }
        _ => unreachable!("validated"),
    }
}
