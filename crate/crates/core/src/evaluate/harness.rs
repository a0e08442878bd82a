use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, macro_f1, mae, rmse};
use super::stats::{paired_t_test, wilcoxon_signed_rank, TestMethod, TestResult};
use crate::baselines::{BaselineKind, FittedBaseline};
use crate::codec::write_atomic;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gbtree::{train_default, Ensemble, Task, TrainParams};
use crate::labeling::DemandLevel;
use crate::series::{DemandPanel, Partition, SplitIndices};

pub const POOLED: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Regression,
    Classification,
}

impl EvalTask {
    pub fn name(&self) -> &'static str {
        match self {
            EvalTask::Regression => "regression",
            EvalTask::Classification => "classification",
        }
    }
}

/// A forecaster under evaluation.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    /// One trained ensemble per horizon. Regression ensembles are also
    /// accepted for classification; their forecasts are labelled.
    Gbt {
        name: String,
        models: BTreeMap<usize, Ensemble>,
    },
    Baseline { name: String, kind: BaselineKind },
}

impl ModelSpec {
    pub fn baseline(kind: BaselineKind) -> Self {
        let name = match kind {
            BaselineKind::HistoricalAverage { global_mean: true } => "ha_global".to_string(),
            k => k.name().to_string(),
        };
        ModelSpec::Baseline { name, kind }
    }

    pub fn name(&self) -> &str {
        match self {
            ModelSpec::Gbt { name, .. } | ModelSpec::Baseline { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Model pairs (by name) to compare with paired tests.
    pub compare: Vec<(String, String)>,
    pub config_hash: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub entity: String,
    pub horizon: usize,
    pub model: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceRow {
    pub model_a: String,
    pub model_b: String,
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMeta {
    pub task: EvalTask,
    pub split: SplitIndices,
    pub config_hash: Option<String>,
    pub seed: u64,
    pub test_rows: usize,
    /// Human-readable baseline settings, including any fitted constants.
    pub baselines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub metrics: Vec<MetricRow>,
    pub tests: Vec<SignificanceRow>,
}

enum Forecasts {
    Values(Vec<f64>),
    Classes(Vec<u8>),
}

fn fit_baselines(panel: &DemandPanel, kind: BaselineKind, train_end: usize) -> Result<Vec<FittedBaseline>> {
    panel
        .series()
        .par_iter()
        .map(|s| FittedBaseline::fit(kind, &s.values, panel.grid(), train_end))
        .collect()
}

fn describe_baseline(name: &str, kind: BaselineKind, fitted: &[FittedBaseline], panel: &DemandPanel) -> String {
    let mut out = format!("{name}: {kind}");
    if let BaselineKind::Ses { alpha: None } = kind {
        out.push_str(" selected");
        for (f, s) in fitted.iter().zip(panel.series()) {
            if let FittedBaseline::Flat { alpha, .. } = f {
                let _ = write!(out, " {}={alpha}", s.entity.name);
            }
        }
    }
    out
}

/// Per-entity and pooled test metrics for every model and horizon, plus
/// paired tests on absolute errors for the designated model pairs.
///
/// Only test-partition targets are read.
pub fn run_evaluation(
    panel: &DemandPanel,
    matrix: &FeatureMatrix,
    models: &[ModelSpec],
    horizons: &[usize],
    task: EvalTask,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let test = matrix.indices_of(Partition::Test);
    if test.is_empty() {
        return Err(Error::NoTestRows);
    }
    let split = matrix.meta.split;
    let labeler = &matrix.meta.labeler;
    let m = matrix.n_features();
    let mut test_data = Vec::with_capacity(test.len() * m);
    for &i in &test {
        test_data.extend_from_slice(matrix.row(i));
    }
    let entity_codes: Vec<u32> = test.iter().map(|&i| matrix.entity[i]).collect();

    let mut baseline_notes = Vec::new();
    let mut fitted: Vec<Option<Vec<FittedBaseline>>> = Vec::with_capacity(models.len());
    for spec in models {
        match spec {
            ModelSpec::Baseline { name, kind } => {
                let f = fit_baselines(panel, *kind, split.train_end)?;
                baseline_notes.push(describe_baseline(name, *kind, &f, panel));
                fitted.push(Some(f));
            }
            ModelSpec::Gbt { models: per_h, .. } => {
                for e in per_h.values() {
                    e.check_features(&matrix.names)?;
                }
                fitted.push(None);
            }
        }
    }

    let cells: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|mi| horizons.iter().map(move |&h| (mi, h)))
        .collect();
    let forecasts: Vec<Forecasts> = cells
        .iter()
        .map(|&(mi, h)| -> Result<Forecasts> {
            let as_classes = |values: Vec<f64>| {
                values
                    .iter()
                    .zip(&entity_codes)
                    .map(|(v, &e)| labeler.label(e, *v) as u8)
                    .collect()
            };
            match (&models[mi], &fitted[mi]) {
                (ModelSpec::Gbt { name, models: per_h }, _) => {
                    let model = per_h
                        .get(&h)
                        .ok_or_else(|| Error::InvalidConfig(format!("model {name} has no ensemble for horizon {h}")))?;
                    match (model.task, task) {
                        (Task::Regression, EvalTask::Regression) => Ok(Forecasts::Values(model.predict(&test_data)?)),
                        (Task::Regression, EvalTask::Classification) => {
                            Ok(Forecasts::Classes(as_classes(model.predict(&test_data)?)))
                        }
                        (Task::Classification { .. }, EvalTask::Classification) => {
                            Ok(Forecasts::Classes(model.predict_classes(&test_data)?))
                        }
                        (Task::Classification { .. }, EvalTask::Regression) => {
                            Err(Error::WrongTask { expected: "regression" })
                        }
                    }
                }
                (ModelSpec::Baseline { .. }, Some(f)) => {
                    let values = test
                        .par_iter()
                        .map(|&i| f[matrix.entity[i] as usize].forecast(matrix.step[i], h))
                        .collect::<Result<Vec<f64>>>()?;
                    Ok(match task {
                        EvalTask::Regression => Forecasts::Values(values),
                        EvalTask::Classification => Forecasts::Classes(as_classes(values)),
                    })
                }
                (ModelSpec::Baseline { .. }, None) => unreachable!("baselines are always fitted"),
            }
        })
        .collect::<Result<_>>()?;

    let mut truth: BTreeMap<usize, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for &h in horizons {
        let t = matrix.target(h)?;
        truth.insert(
            h,
            (
                test.iter().map(|&i| t.values[i]).collect(),
                test.iter().map(|&i| t.classes[i]).collect(),
            ),
        );
    }

    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for code in entity_codes.iter().copied().collect::<std::collections::BTreeSet<_>>() {
        let rows = (0..test.len()).filter(|&r| entity_codes[r] == code).collect();
        groups.push((matrix.meta.entities[code as usize].clone(), rows));
    }
    groups.push((POOLED.to_string(), (0..test.len()).collect()));

    let metrics: Vec<MetricRow> = cells
        .par_iter()
        .zip(forecasts.par_iter())
        .map(|(&(mi, h), fc)| -> Result<Vec<MetricRow>> {
            let (y, c) = &truth[&h];
            let mut rows = Vec::new();
            for (entity, idx) in &groups {
                let mut push = |metric: &str, value: f64| {
                    rows.push(MetricRow {
                        entity: entity.clone(),
                        horizon: h,
                        model: models[mi].name().to_string(),
                        metric: metric.to_string(),
                        value,
                    })
                };
                match fc {
                    Forecasts::Values(p) => {
                        let yy: Vec<f64> = idx.iter().map(|&r| y[r]).collect();
                        let pp: Vec<f64> = idx.iter().map(|&r| p[r]).collect();
                        push("rmse", rmse(&yy, &pp)?);
                        push("mae", mae(&yy, &pp)?);
                    }
                    Forecasts::Classes(p) => {
                        let yy: Vec<u8> = idx.iter().map(|&r| c[r]).collect();
                        let pp: Vec<u8> = idx.iter().map(|&r| p[r]).collect();
                        push("accuracy", accuracy(&yy, &pp)?);
                        push("macro_f1", macro_f1(&yy, &pp, DemandLevel::COUNT)?);
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let abs_errors = |mi: usize| -> Vec<f64> {
        let mut out = Vec::new();
        for (k, &h) in horizons.iter().enumerate() {
            let (y, c) = &truth[&h];
            match &forecasts[mi * horizons.len() + k] {
                Forecasts::Values(p) => out.extend(y.iter().zip(p).map(|(a, b)| (a - b).abs())),
                Forecasts::Classes(p) => out.extend(c.iter().zip(p).map(|(a, b)| f64::from(u8::from(a != b)))),
            }
        }
        out
    };
    let mut tests = Vec::new();
    for (a, b) in &options.compare {
        let find = |name: &str| {
            models
                .iter()
                .position(|m| m.name() == name)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown model {name:?} in comparison")))
        };
        let (ea, eb) = (abs_errors(find(a)?), abs_errors(find(b)?));
        let mut push = |r: TestResult| {
            tests.push(SignificanceRow {
                model_a: a.clone(),
                model_b: b.clone(),
                method: r.method.name().to_string(),
                statistic: r.statistic,
                p_value: r.p_value,
                n: r.n,
            })
        };
        push(paired_t_test(&ea, &eb)?);
        push(match wilcoxon_signed_rank(&ea, &eb) {
            Err(Error::AllZeroDifferences) => TestResult {
                statistic: 0.0,
                p_value: 1.0,
                n: 0,
                method: TestMethod::Wilcoxon,
            },
            r => r?,
        });
    }

    Ok(EvalReport {
        meta: ReportMeta {
            task,
            split,
            config_hash: options.config_hash.clone(),
            seed: options.seed,
            test_rows: test.len(),
            baselines: baseline_notes,
        },
        metrics,
        tests,
    })
}

fn csv_bytes<S: Serialize>(header: &str, rows: &[S]) -> Result<Vec<u8>> {
    let mut out = header.as_bytes().to_vec();
    let mut w = csv::Writer::from_writer(&mut out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<report>", e))?;
    drop(w);
    Ok(out)
}

impl EvalReport {
    fn header(&self) -> String {
        let m = &self.meta;
        let mut h = String::new();
        let _ = writeln!(h, "# task={}", m.task.name());
        let _ = writeln!(h, "# config_hash={}", m.config_hash.as_deref().unwrap_or("none"));
        let _ = writeln!(h, "# seed={}", m.seed);
        let _ = writeln!(
            h,
            "# split train_end={} valid_end={} len={} test_rows={}",
            m.split.train_end, m.split.valid_end, m.split.len, m.test_rows
        );
        for b in &m.baselines {
            let _ = writeln!(h, "# baseline {b}");
        }
        h
    }

    /// `entity,horizon,model,metric,value` preceded by `#` metadata lines.
    pub fn metrics_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(&self.header(), &self.metrics)
    }

    /// `model_a,model_b,method,statistic,p_value,n`.
    pub fn significance_csv(&self) -> Result<Vec<u8>> {
        if self.tests.is_empty() {
            return Ok(format!("{}model_a,model_b,method,statistic,p_value,n\n", self.header()).into_bytes());
        }
        csv_bytes(&self.header(), &self.tests)
    }

    /// Writes `metrics.csv` and `significance.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("metrics.csv"), &self.metrics_csv()?)?;
        write_atomic(&dir.join("significance.csv"), &self.significance_csv()?)
    }

    pub fn value(&self, entity: &str, horizon: usize, model: &str, metric: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|r| r.entity == entity && r.horizon == horizon && r.model == model && r.metric == metric)
            .map(|r| r.value)
    }
}

/// Heatmap-ready daily totals: `entity,date,total`.
pub fn day_totals_csv(panel: &DemandPanel) -> Result<Vec<u8>> {
    #[derive(Serialize)]
    struct Row<'a> {
        entity: &'a str,
        date: String,
        total: f64,
    }
    let mut rows = Vec::new();
    for s in panel.series() {
        let mut totals: BTreeMap<chrono::NaiveDate, f64> = BTreeMap::new();
        for (i, v) in s.values.iter().enumerate() {
            *totals.entry(panel.grid().time_at(i).date()).or_default() += v;
        }
        for (date, total) in totals {
            rows.push(Row {
                entity: &s.entity.name,
                date: date.to_string(),
                total,
            });
        }
    }
    csv_bytes("", &rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Pooled,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeRow {
    pub entity: String,
    pub horizon: usize,
    pub regime: Regime,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalLocalReport {
    pub rows: Vec<RegimeRow>,
    pub pooled_models: usize,
    pub local_models: usize,
    pub pooled_seconds: f64,
    pub local_seconds: f64,
    pub pooled_bytes: usize,
    pub local_bytes: usize,
}

impl GlobalLocalReport {
    pub fn get(&self, entity: &str, horizon: usize, regime: Regime) -> Option<&RegimeRow> {
        self.rows
            .iter()
            .find(|r| r.entity == entity && r.horizon == horizon && r.regime == regime)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let header = format!(
            "# pooled_models={} local_models={} pooled_seconds={:.3} local_seconds={:.3} pooled_bytes={} local_bytes={}\n",
            self.pooled_models,
            self.local_models,
            self.pooled_seconds,
            self.local_seconds,
            self.pooled_bytes,
            self.local_bytes
        );
        csv_bytes(&header, &self.rows)
    }
}

fn test_errors(model: &Ensemble, m: &FeatureMatrix, horizon: usize) -> Result<(f64, f64)> {
    let idx = m.indices_of(Partition::Test);
    if idx.is_empty() {
        return Err(Error::NoTestRows);
    }
    let sub = m.subset(&idx);
    let pred = model.predict(&sub.data)?;
    let y = &sub.target(horizon)?.values;
    Ok((mae(y, &pred)?, rmse(y, &pred)?))
}

/// Trains one pooled regression model and one model per entity with the
/// same parameters, and compares their test errors, training time and
/// serialized size.
pub fn global_vs_local(matrix: &FeatureMatrix, params: &TrainParams, horizons: &[usize]) -> Result<GlobalLocalReport> {
    if matrix.meta.entities.len() < 2 {
        return Err(Error::SingleEntity);
    }
    if params.task != Task::Regression {
        return Err(Error::WrongTask { expected: "regression" });
    }
    let codes: Vec<u32> = (0..matrix.meta.entities.len() as u32).collect();
    let locals: Vec<FeatureMatrix> = codes.iter().map(|&c| matrix.select_entity(c)).collect();
    let mut report = GlobalLocalReport {
        rows: Vec::new(),
        pooled_models: 0,
        local_models: 0,
        pooled_seconds: 0.0,
        local_seconds: 0.0,
        pooled_bytes: 0,
        local_bytes: 0,
    };
    for &h in horizons {
        let start = Instant::now();
        let pooled = train_default(matrix, h, params)?;
        report.pooled_seconds += start.elapsed().as_secs_f64();
        report.pooled_models += 1;
        report.pooled_bytes += pooled.to_bytes()?.len();
        for (&code, local_matrix) in codes.iter().zip(&locals) {
            let start = Instant::now();
            let local = train_default(local_matrix, h, params)?;
            report.local_seconds += start.elapsed().as_secs_f64();
            report.local_models += 1;
            report.local_bytes += local.to_bytes()?.len();
            let entity = &matrix.meta.entities[code as usize];
            for (regime, model) in [(Regime::Pooled, &pooled), (Regime::Local, &local)] {
                let (mae, rmse) = test_errors(model, local_matrix, h)?;
                report.rows.push(RegimeRow {
                    entity: entity.clone(),
                    horizon: h,
                    regime,
                    mae,
                    rmse,
                });
            }
        }
    }
    Ok(report)
}
