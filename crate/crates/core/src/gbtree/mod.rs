//! Second-order gradient-boosted decision trees: squared-error regression
//! and softmax multiclass classification.

mod binning;
mod ensemble;
mod io;
mod params;
mod tree;

use std::ops::ControlFlow;

pub use ensemble::{Dataset, Ensemble, Targets, TrainLog, FORMAT_VERSION};
pub use params::{SplitMode, Task, TrainParams};
pub use tree::{leaf_weight, split_gain, Node, Tree};

use crate::error::Result;
use crate::features::FeatureMatrix;
use crate::postprocess::{fit_scaler, ScaleMode};
use crate::series::Partition;

/// Fits a scaler on the matrix's training rows, trains on the scaled
/// training rows (validation rows drive early stopping and `monitor`), and
/// returns a model that predicts directly on raw matrix rows.
pub fn train_on_matrix(
    matrix: &FeatureMatrix,
    horizon: usize,
    params: &TrainParams,
    scale: Option<ScaleMode>,
    monitor: &mut dyn FnMut(usize, f64) -> ControlFlow<()>,
) -> Result<(Ensemble, TrainLog)> {
    let target = matrix.target(horizon)?;
    let scaler = scale.map(|mode| fit_scaler(matrix, mode)).transpose()?;
    let scaled = match &scaler {
        Some(s) if !matrix.meta.scaled => s.transform(matrix)?,
        _ => matrix.clone(),
    };
    let m = matrix.n_features();
    let split_rows = |p: Partition| -> (Vec<f64>, Vec<f64>, Vec<u8>) {
        let idx = scaled.indices_of(p);
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in &idx {
            data.extend_from_slice(scaled.row(i));
        }
        (
            data,
            idx.iter().map(|&i| target.values[i]).collect(),
            idx.iter().map(|&i| target.classes[i]).collect(),
        )
    };
    let (tx, ty, tc) = split_rows(Partition::Train);
    let (vx, vy, vc) = split_rows(Partition::Valid);
    let (train, valid) = match params.task {
        Task::Regression => (
            Dataset::new(&tx, m, Targets::Regression(&ty)),
            Dataset::new(&vx, m, Targets::Regression(&vy)),
        ),
        Task::Classification { .. } => (
            Dataset::new(&tx, m, Targets::Classes(&tc)),
            Dataset::new(&vx, m, Targets::Classes(&vc)),
        ),
    };
    let valid = (valid.n_rows > 0).then_some(&valid);
    let (mut model, log) = Ensemble::fit_with_monitor(&train, params, valid, monitor)?;
    model.feature_names = matrix.names.clone();
    model.scaler = scaler;
    model.labeler = Some(matrix.meta.labeler.clone());
    model.horizon = Some(horizon);
    Ok((model, log))
}

/// [`train_on_matrix`] without a monitor, using min-max scaling.
pub fn train_default(matrix: &FeatureMatrix, horizon: usize, params: &TrainParams) -> Result<Ensemble> {
    Ok(train_on_matrix(matrix, horizon, params, Some(ScaleMode::Minmax), &mut |_, _| ControlFlow::Continue(()))?.0)
}
