//! End-to-end run: preprocess → postprocess → (tune) → train → evaluate,
//! with a manifest of artifact hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::codec::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::evaluate::{run_evaluation, EvalOptions, EvalTask, ModelSpec};
use crate::features::{assemble_matrix, FeatureConfig, FeatureMatrix};
use crate::gbtree::{train_on_matrix, Ensemble, Task, TrainParams};
use crate::ingest::{load_holidays, HolidayCalendar};
use crate::labeling::{DemandLevel, LabelConfig};
use crate::postprocess::{fit_scaler, ScaleMode};
use crate::seed::{derive_seed, sha256_hex};
use crate::series::{chronological_split, DemandPanel};
use crate::tune::{coarse_to_fine, default_gbt_space, gbt_objective, StudyConfig};

pub const DEFAULT_HORIZONS: [usize; 4] = [5, 15, 30, 60];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Demand panel CSV (`entity,timestamp,value`).
    pub input: Option<PathBuf>,
    pub holidays: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    /// Directory receiving models, reports and the manifest.
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            input: None,
            holidays: None,
            regions: None,
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub enabled: bool,
    pub n1: usize,
    pub n2: usize,
    pub narrow: f64,
    /// Horizon whose validation score drives the search (first horizon when unset).
    pub horizon: Option<usize>,
    pub study: StudyConfig,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            enabled: false,
            n1: 30,
            n2: 30,
            narrow: 0.5,
            horizon: None,
            study: StudyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub horizons: Vec<usize>,
    pub tasks: Vec<EvalTask>,
    pub baselines: Vec<String>,
    pub split: [f64; 3],
    pub scale: ScaleMode,
    pub features: FeatureConfig,
    pub labeling: LabelConfig,
    pub train: TrainParams,
    pub tune: TuneSection,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            horizons: DEFAULT_HORIZONS.to_vec(),
            tasks: vec![EvalTask::Regression, EvalTask::Classification],
            baselines: ["ha", "snaive", "ses", "croston"].map(String::from).to_vec(),
            split: [0.7, 0.2, 0.1],
            scale: ScaleMode::Minmax,
            features: FeatureConfig::default(),
            labeling: LabelConfig::default(),
            train: TrainParams::default(),
            tune: TuneSection::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        Self::from_toml(&String::from_utf8_lossy(&bytes))
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::InvalidConfig("horizons must be non-empty and positive".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::InvalidConfig("at least one task is required".into()));
        }
        self.baseline_kinds()?;
        self.features.validate()?;
        self.labeling.validate()?;
        self.train.validate()
    }

    pub fn baseline_kinds(&self) -> Result<Vec<BaselineKind>> {
        self.baselines.iter().map(|b| b.parse()).collect()
    }

    /// SHA-256 of the canonical JSON of every setting except paths, so
    /// the same settings hash identically wherever they are written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        sha256_hex(&serde_json::to_vec(&c).expect("config serialises"))
    }

    /// Every input path must exist before any stage runs.
    pub fn check_paths(&self) -> Result<()> {
        let input = self
            .paths
            .input
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("paths.input is required".into()))?;
        for p in std::iter::once(input).chain(&self.paths.holidays).chain(&self.paths.regions) {
            if !p.is_file() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found")));
            }
        }
        Ok(())
    }

    /// Training parameters for one model, with the seed derived from the
    /// run seed.
    pub fn train_params(&self, horizon: usize, task: EvalTask) -> TrainParams {
        let mut p = self.train.clone();
        p.task = match task {
            EvalTask::Regression => Task::Regression,
            EvalTask::Classification => Task::Classification {
                num_classes: DemandLevel::COUNT,
            },
        };
        p.seed = derive_seed(self.seed, &format!("train/{}/h{horizon}", task.name()));
        p
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn get(&self, path: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

struct Writer<'a> {
    root: &'a Path,
    artifacts: BTreeMap<String, Artifact>,
}

impl Writer<'_> {
    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_atomic(&path, bytes)?;
        self.artifacts.insert(
            rel.to_string(),
            Artifact {
                path: rel.to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len(),
            },
        );
        Ok(())
    }
}

pub fn model_file_name(task: EvalTask, horizon: usize) -> String {
    format!("models/{}_h{horizon}.mbgb", task.name())
}

/// Builds the feature matrix for a panel under `config`.
pub fn featurize(panel: &DemandPanel, config: &RunConfig, holidays: &HolidayCalendar) -> Result<FeatureMatrix> {
    let [a, b, c] = config.split;
    let split = chronological_split(panel.len(), (a, b, c))?;
    assemble_matrix(panel, &config.features, holidays, &config.horizons, config.labeling, &split)
}

pub fn load_calendar(path: Option<&Path>) -> Result<HolidayCalendar> {
    match path {
        Some(p) => load_holidays(read_file(p)?.as_slice()),
        None => Ok(HolidayCalendar::default()),
    }
}

/// Runs every stage and writes artifacts under `paths.output`:
/// `matrix.bin`, `scaler.json`, one model per (task, horizon), evaluation
/// reports per task, optional tuning logs, and `manifest.json`.
pub fn run_pipeline(config: &RunConfig) -> Result<Manifest> {
    config.validate()?;
    config.check_paths()?;
    let hash = config.hash();
    let root = config.paths.output.as_path();
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut out = Writer {
        root,
        artifacts: BTreeMap::new(),
    };

    let (panel, matrix) = (|| -> Result<_> {
        let input = config.paths.input.as_deref().expect("checked");
        let panel = DemandPanel::read_csv(read_file(input)?.as_slice())?;
        let calendar = load_calendar(config.paths.holidays.as_deref())?;
        let matrix = featurize(&panel, config, &calendar)?;
        Ok((panel, matrix))
    })()
    .map_err(|e| e.in_stage("preprocess"))?;
    out.put("matrix.bin", &matrix.to_bytes()?)?;

    let scaler = fit_scaler(&matrix, config.scale).map_err(|e| e.in_stage("postprocess"))?;
    out.put("scaler.json", &scaler.to_bytes())?;

    let mut train = config.clone();
    if config.tune.enabled {
        let t = &config.tune;
        let horizon = t.horizon.unwrap_or(config.horizons[0]);
        let base = config.train_params(horizon, EvalTask::Regression);
        let objective = gbt_objective(&matrix, horizon, base);
        let result = coarse_to_fine(
            &default_gbt_space(),
            &objective,
            (t.n1, t.n2),
            t.narrow,
            derive_seed(config.seed, "tune"),
            t.study,
        )
        .map_err(|e| e.in_stage("tune"))?;
        train.train = crate::tune::apply_params(&config.train, &result.best.params)?;
        out.put("tune/study_log.csv", &result.log_csv()?)?;
        out.put("tune/best_params.toml", result.best_toml().as_bytes())?;
    }

    let mut models: BTreeMap<(EvalTask, usize), Ensemble> = BTreeMap::new();
    for &task in &config.tasks {
        for &h in &config.horizons {
            let params = train.train_params(h, task);
            let (mut model, _) = train_on_matrix(&matrix, h, &params, Some(config.scale), &mut |_, _| {
                std::ops::ControlFlow::Continue(())
            })
            .map_err(|e| e.in_stage("train"))?;
            model.config_hash = Some(hash.clone());
            out.put(&model_file_name(task, h), &model.to_bytes()?)?;
            models.insert((task, h), model);
        }
    }

    let baselines: Vec<ModelSpec> = config.baseline_kinds()?.into_iter().map(ModelSpec::baseline).collect();
    for &task in &config.tasks {
        let gbt = ModelSpec::Gbt {
            name: "gbt".into(),
            models: models
                .iter()
                .filter(|((t, _), _)| *t == task)
                .map(|((_, h), m)| (*h, m.clone()))
                .collect(),
        };
        let mut specs = vec![gbt];
        specs.extend(baselines.iter().cloned());
        let options = EvalOptions {
            compare: baselines.iter().map(|b| ("gbt".to_string(), b.name().to_string())).collect(),
            config_hash: Some(hash.clone()),
            seed: config.seed,
        };
        let report = run_evaluation(&panel, &matrix, &specs, &config.horizons, task, &options)
            .map_err(|e| e.in_stage("evaluate"))?;
        out.put(&format!("reports/{}_metrics.csv", task.name()), &report.metrics_csv()?)?;
        out.put(&format!("reports/{}_significance.csv", task.name()), &report.significance_csv()?)?;
    }
    out.put("reports/day_totals.csv", &crate::evaluate::day_totals_csv(&panel)?)?;

    let manifest = Manifest {
        config_hash: hash,
        seed: config.seed,
        artifacts: out.artifacts.into_values().collect(),
    };
    write_atomic(&root.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}
