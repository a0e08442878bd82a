//! Tuning objective for the boosted trees on a feature matrix.

use std::ops::ControlFlow;

use super::space::{Params, SearchSpace, Value};
use super::study::Reporter;
use crate::error::{Error, Result};
use crate::evaluate::{macro_f1, rmse};
use crate::features::FeatureMatrix;
use crate::gbtree::{train_on_matrix, Task, TrainParams};
use crate::labeling::DemandLevel;
use crate::postprocess::ScaleMode;
use crate::series::Partition;

/// Boosting rounds between intermediate reports.
pub const REPORT_EVERY: usize = 25;
/// Patience used when the base parameters set none.
pub const DEFAULT_PATIENCE: usize = 50;

pub fn default_gbt_space() -> SearchSpace {
    SearchSpace::new()
        .log_uniform("learning_rate", 0.01, 0.3)
        .and_then(|s| s.int_uniform("max_depth", 3, 10))
        .and_then(|s| s.log_uniform("lambda", 0.1, 10.0))
        .and_then(|s| s.uniform("gamma", 0.0, 5.0))
        .and_then(|s| s.uniform("subsample", 0.5, 1.0))
        .and_then(|s| s.uniform("colsample", 0.5, 1.0))
        .expect("static space is valid")
}

/// Overlays sampled values onto `base`.
pub fn apply_params(base: &TrainParams, params: &Params) -> Result<TrainParams> {
    let mut out = base.clone();
    for (name, value) in params {
        let num = || {
            value
                .as_f64()
                .ok_or_else(|| Error::InvalidParams(format!("{name} must be numeric")))
        };
        match name.as_str() {
            "learning_rate" => out.learning_rate = num()?,
            "max_depth" => match value {
                Value::Int(d) if *d >= 0 => out.max_depth = *d as usize,
                _ => return Err(Error::InvalidParams("max_depth must be a non-negative integer".into())),
            },
            "num_rounds" => match value {
                Value::Int(r) if *r >= 0 => out.num_rounds = *r as usize,
                _ => return Err(Error::InvalidParams("num_rounds must be a non-negative integer".into())),
            },
            "min_child_weight" => out.min_child_weight = num()?,
            "lambda" => out.lambda = num()?,
            "gamma" => out.gamma = num()?,
            "subsample" => out.subsample = num()?,
            "colsample" => out.colsample = num()?,
            other => return Err(Error::InvalidParams(format!("unknown tunable parameter {other:?}"))),
        }
    }
    out.validate()?;
    Ok(out)
}

/// Validation RMSE (regression) or 1 − macro-F1 (classification) of a model
/// trained with the sampled parameters. The validation metric tracked by
/// boosting (RMSE or log-loss) is reported every [`REPORT_EVERY`] rounds.
pub fn gbt_objective<'a>(
    matrix: &'a FeatureMatrix,
    horizon: usize,
    base: TrainParams,
) -> impl Fn(&Params, &mut Reporter) -> Result<f64> + Sync + 'a {
    move |params: &Params, reporter: &mut Reporter| {
        let mut p = apply_params(&base, params)?;
        p.early_stopping_rounds = p.early_stopping_rounds.or(Some(DEFAULT_PATIENCE));
        let valid = matrix.indices_of(Partition::Valid);
        if valid.is_empty() {
            return Err(Error::InvalidConfig("tuning needs validation rows".into()));
        }
        let mut monitor = |round: usize, metric: f64| {
            if (round + 1).is_multiple_of(REPORT_EVERY) {
                reporter.report(round + 1, metric)
            } else {
                ControlFlow::Continue(())
            }
        };
        let (model, _) = train_on_matrix(matrix, horizon, &p, Some(ScaleMode::Minmax), &mut monitor)?;
        let sub = matrix.subset(&valid);
        let target = sub.target(horizon)?;
        match p.task {
            Task::Regression => rmse(&target.values, &model.predict(&sub.data)?),
            Task::Classification { .. } => {
                Ok(1.0 - macro_f1(&target.classes, &model.predict_classes(&sub.data)?, DemandLevel::COUNT)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_space_maps_onto_train_params() {
        use rand::SeedableRng;
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(0);
        let space = default_gbt_space();
        for _ in 0..50 {
            let p = apply_params(&TrainParams::default(), &space.sample(&mut rng)).unwrap();
            assert!((3..=10).contains(&p.max_depth));
            assert!((0.01..=0.3).contains(&p.learning_rate));
        }
        let bad = Params::from([("depth".to_string(), Value::Int(3))]);
        assert!(apply_params(&TrainParams::default(), &bad).is_err());
    }
}
