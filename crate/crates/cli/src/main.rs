use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

use modeboost::baselines::BaselineKind;
use modeboost::bench::{bench_suite, reports_csv, BenchConfig};
use modeboost::evaluate::{day_totals_csv, run_evaluation, EvalOptions, EvalTask, ModelSpec};
use modeboost::features::FeatureMatrix;
use modeboost::gbtree::{train_on_matrix, Ensemble, Task};
use modeboost::ingest::{
    assign_regions, clean_trips, generate_synthetic, parse_snapshots, parse_trips, trips_to_panel, CleaningRules,
    RegionSet, SynthSpec,
};
use modeboost::pipeline::{featurize, load_calendar, run_pipeline, RunConfig};
use modeboost::series::{DemandPanel, GapPolicy, Partition};
use modeboost::tune::{coarse_to_fine, default_gbt_space, gbt_objective};
use modeboost::{read_file, write_atomic};

#[derive(Parser)]
#[command(name = "modeboost", version, about = "Micro-mobility demand forecasting with boosted trees")]
struct Cli {
    /// Worker threads for parallel stages (falls back to MODEBOOST_JOBS).
    #[arg(long, global = true, env = "MODEBOOST_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic demand panel.
    Synth(SynthArgs),
    /// Turn raw snapshot or trip files into a demand panel.
    #[command(subcommand)]
    Ingest(IngestCommand),
    /// Build the feature matrix from a demand panel.
    Featurize(FeaturizeArgs),
    /// Train one boosted-tree model for one horizon and task.
    Train(TrainArgs),
    /// Predict with a trained model on a feature matrix.
    Predict(PredictArgs),
    /// Score models and baselines on the test partition.
    Evaluate(EvaluateArgs),
    /// Coarse-to-fine hyperparameter search.
    Tune(TuneArgs),
    /// Measure inference latency and model footprint.
    Bench(BenchArgs),
    /// Run the whole pipeline from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    entities: usize,
    #[arg(long, default_value_t = 28)]
    days: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 0 gives the noiseless intensity, 1 pure Poisson counts.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.6)]
    weekly_factor: f64,
    #[arg(long, default_value = "2021-01-04")]
    start: NaiveDate,
    #[arg(long = "holiday")]
    holidays: Vec<NaiveDate>,
    #[arg(long, default_value_t = 0.4)]
    holiday_factor: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum IngestCommand {
    /// Vehicle snapshots (`timestamp,lat,lon,vehicle_type,operator[,entity]`).
    Snapshots {
        #[arg(long)]
        input: PathBuf,
        /// GeoJSON region polygons.
        #[arg(long)]
        regions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        forward_fill: bool,
    },
    /// Trip archive (`ride_id,start_time,end_time,start_station,end_station`).
    Trips {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cleaning report CSV (`rule,count`).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 24.0)]
        max_duration_hours: f64,
        #[arg(long, default_value_t = 120)]
        min_round_trip_secs: i64,
        #[arg(long, default_value_t = 3.0)]
        min_daily_starts: f64,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// Run config TOML; its [features], [labeling] and [train] sections apply.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => Ok(RunConfig::load(p)?),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    panel: PathBuf,
    /// `.csv` writes the CSV form, anything else the binary form.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    holidays: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Regression,
    Classification,
}

impl From<TaskArg> for EvalTask {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Regression => EvalTask::Regression,
            TaskArg::Classification => EvalTask::Classification,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    horizon: usize,
    #[arg(long, value_enum, default_value = "regression")]
    task: TaskArg,
    #[arg(long)]
    seed: Option<u64>,
    /// `.json` writes the JSON form, anything else the binary form.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionArg {
    All,
    Train,
    Valid,
    Test,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    partition: PartitionArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    matrix: PathBuf,
    /// Trained model files; all must share one task.
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "ha,snaive,ses,croston")]
    baselines: Vec<String>,
    #[arg(long, value_enum, default_value = "regression")]
    task: TaskArg,
    /// Model pair to test, as `a:b` (repeatable).
    #[arg(long = "compare")]
    compare: Vec<String>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write `day_totals.csv` (entity × day totals).
    #[arg(long)]
    plot_data: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    horizon: usize,
    #[arg(long, value_enum, default_value = "regression")]
    task: TaskArg,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long)]
    narrow: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Feature matrix whose rows are fed to the models.
    #[arg(long)]
    rows: PathBuf,
    #[arg(long, default_value_t = 3500)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Also measure concurrent single-row throughput.
    #[arg(long)]
    threads: Option<usize>,
    /// Demand panel for timing featurization alongside prediction.
    #[arg(long)]
    panel: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_panel(panel: &DemandPanel, out: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    panel.write_csv(&mut bytes)?;
    write_atomic(out, &bytes)?;
    Ok(())
}

fn load_panel(path: &Path) -> Result<DemandPanel> {
    DemandPanel::read_csv(read_file(path)?.as_slice()).with_context(|| format!("reading {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        entities: a.entities,
        days: a.days,
        start: a.start,
        weekly_factor: a.weekly_factor,
        holiday_dates: a.holidays,
        holiday_factor: a.holiday_factor,
        noise: a.noise,
        seed: a.seed,
        ..Default::default()
    };
    write_panel(&generate_synthetic(&spec)?, &a.out)
}

fn ingest(cmd: IngestCommand) -> Result<()> {
    match cmd {
        IngestCommand::Snapshots {
            input,
            regions,
            out,
            forward_fill,
        } => {
            let (records, report) = parse_snapshots(read_file(&input)?.as_slice())?;
            let regions = match regions {
                Some(p) => RegionSet::from_geojson(&String::from_utf8_lossy(&read_file(&p)?))?,
                None => RegionSet::default(),
            };
            let (obs, dropped) = assign_regions(&records, &regions)?;
            let gaps = if forward_fill { GapPolicy::ForwardFill } else { GapPolicy::Zero };
            let panel = DemandPanel::aggregate(&obs, gaps)?;
            eprintln!(
                "rows={} kept={} skipped={} outside_regions={} entities={}",
                report.rows,
                report.kept,
                report.skipped,
                dropped,
                panel.entity_count()
            );
            write_panel(&panel, &out)
        }
        IngestCommand::Trips {
            input,
            out,
            report,
            max_duration_hours,
            min_round_trip_secs,
            min_daily_starts,
        } => {
            let trips = parse_trips(read_file(&input)?.as_slice())?;
            let rules = CleaningRules {
                max_duration_secs: (max_duration_hours * 3600.0).round() as i64,
                min_round_trip_secs,
                min_daily_starts,
            };
            let (kept, summary) = clean_trips(trips, &rules);
            if let Some(path) = report {
                let mut bytes = Vec::new();
                summary.write_csv(&mut bytes)?;
                write_atomic(&path, &bytes)?;
            }
            eprintln!("input={} kept={}", summary.input, summary.kept);
            write_panel(&trips_to_panel(&kept)?, &out)
        }
    }
}

fn featurize_cmd(a: FeaturizeArgs) -> Result<()> {
    let mut config = a.config.load()?;
    if let Some(h) = a.horizons {
        config.horizons = h;
    }
    config.validate()?;
    let panel = load_panel(&a.panel)?;
    let calendar = load_calendar(a.holidays.as_deref().or(config.paths.holidays.as_deref()))?;
    let matrix = featurize(&panel, &config, &calendar)?;
    matrix.save(&a.out)?;
    eprintln!("rows={} features={}", matrix.n_rows(), matrix.n_features());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut config = a.config.load()?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let matrix = FeatureMatrix::load(&a.matrix)?;
    let params = config.train_params(a.horizon, a.task.into());
    let (mut model, log) = train_on_matrix(&matrix, a.horizon, &params, Some(config.scale), &mut |_, _| {
        std::ops::ControlFlow::Continue(())
    })?;
    model.config_hash = Some(config.hash());
    model.save(&a.out)?;
    eprintln!(
        "rounds={} final_train_loss={}",
        model.rounds(),
        log.train_loss.last().map_or("n/a".into(), |l| format!("{l:.6}"))
    );
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = Ensemble::load(&a.model)?;
    let matrix = FeatureMatrix::load(&a.matrix)?;
    model.check_features(&matrix.names)?;
    let idx: Vec<usize> = match a.partition {
        PartitionArg::All => (0..matrix.n_rows()).collect(),
        PartitionArg::Train => matrix.indices_of(Partition::Train),
        PartitionArg::Valid => matrix.indices_of(Partition::Valid),
        PartitionArg::Test => matrix.indices_of(Partition::Test),
    };
    let sub = matrix.subset(&idx);
    let preds = model.predict(&sub.data)?;
    let proba = match model.task {
        Task::Classification { .. } => Some(model.predict_proba(&sub.data)?),
        Task::Regression => None,
    };
    let mut bytes = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut bytes);
        let mut header = vec!["entity".to_string(), "step".into(), "partition".into(), "prediction".into()];
        if let Some(p) = &proba {
            header.extend((0..p.first().map_or(0, Vec::len)).map(|k| format!("p{k}")));
        }
        w.write_record(&header)?;
        for (r, pred) in preds.iter().enumerate() {
            let mut rec = vec![
                matrix.meta.entities[sub.entity[r] as usize].clone(),
                sub.step[r].to_string(),
                format!("{:?}", sub.partition[r]).to_lowercase(),
                pred.to_string(),
            ];
            if let Some(p) = &proba {
                rec.extend(p[r].iter().map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    write_atomic(&a.out, &bytes)?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let config = a.config.load()?;
    let panel = load_panel(&a.panel)?;
    let matrix = FeatureMatrix::load(&a.matrix)?;
    let task: EvalTask = a.task.into();
    let mut per_h = BTreeMap::new();
    for path in &a.models {
        let model = Ensemble::load(path)?;
        model
            .check_features(&matrix.names)
            .with_context(|| format!("model {} does not match the matrix", path.display()))?;
        let h = model
            .horizon
            .with_context(|| format!("model {} records no horizon", path.display()))?;
        if per_h.insert(h, model).is_some() {
            bail!("two models for horizon {h}");
        }
    }
    let horizons: Vec<usize> = if per_h.is_empty() {
        matrix.meta.horizons.clone()
    } else {
        per_h.keys().copied().collect()
    };
    let mut specs = Vec::new();
    if !per_h.is_empty() {
        specs.push(ModelSpec::Gbt {
            name: "gbt".into(),
            models: per_h,
        });
    }
    for b in a.baselines.iter().filter(|b| !b.is_empty()) {
        specs.push(ModelSpec::baseline(b.parse::<BaselineKind>()?));
    }
    if specs.is_empty() {
        bail!("nothing to evaluate: pass --model or --baselines");
    }
    let compare = a
        .compare
        .iter()
        .map(|c| {
            c.split_once(':')
                .map(|(x, y)| (x.to_string(), y.to_string()))
                .with_context(|| format!("--compare expects a:b, got {c:?}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let options = EvalOptions {
        compare,
        config_hash: Some(config.hash()),
        seed: a.seed,
    };
    let report = run_evaluation(&panel, &matrix, &specs, &horizons, task, &options)?;
    report.write(&a.out_dir)?;
    if a.plot_data {
        write_atomic(&a.out_dir.join("day_totals.csv"), &day_totals_csv(&panel)?)?;
    }
    Ok(())
}

fn tune(a: TuneArgs) -> Result<()> {
    let config = a.config.load()?;
    let matrix = FeatureMatrix::load(&a.matrix)?;
    let t = &config.tune;
    let mut base = config.train_params(a.horizon, a.task.into());
    base.seed = modeboost::seed::derive_seed(a.seed, "tune/train");
    let objective = gbt_objective(&matrix, a.horizon, base);
    let result = coarse_to_fine(
        &default_gbt_space(),
        &objective,
        (a.n1.unwrap_or(t.n1), a.n2.unwrap_or(t.n2)),
        a.narrow.unwrap_or(t.narrow),
        a.seed,
        t.study,
    )?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    write_atomic(&a.out_dir.join("study_log.csv"), &result.log_csv()?)?;
    let fragment = result.best_toml();
    write_atomic(&a.out_dir.join("best_params.toml"), fragment.as_bytes())?;
    print!("{fragment}");
    std::io::stdout().flush()?;
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let models = a.models.iter().map(|p| Ensemble::load(p)).collect::<modeboost::Result<Vec<_>>>()?;
    let rows = FeatureMatrix::load(&a.rows)?;
    for m in &models {
        m.check_features(&rows.names)?;
    }
    let config = BenchConfig {
        batch_size: a.batch,
        warmup: a.warmup,
        repeats: a.repeats,
        threads: a.threads,
    };
    let mut notes = Vec::new();
    if let Some(panel_path) = &a.panel {
        let run = a.config.load()?;
        let panel = load_panel(panel_path)?;
        let calendar = load_calendar(run.paths.holidays.as_deref())?;
        let start = Instant::now();
        let matrix = featurize(&panel, &run, &calendar)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        notes.push(format!("featurize_ms_per_record={:.6}", ms / matrix.n_rows().max(1) as f64));
    }
    let refs: Vec<&Ensemble> = models.iter().collect();
    let reports = bench_suite(&refs, &rows.data, &config)?;
    write_atomic(&a.out, &reports_csv(&reports, &config, &notes)?)?;
    for r in &reports {
        eprintln!(
            "{} h={}: batch {:.3} ms, per-record mean {:.5} ms (p99 {:.5}), {} bytes",
            r.task,
            r.horizon.map_or("-".into(), |h| h.to_string()),
            r.total_ms,
            r.per_record_mean_ms,
            r.p99,
            r.model_bytes
        );
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut config = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(o) = a.out {
        config.paths.output = o;
    }
    // relative input paths resolve against the config file's directory
    let base = a.config.parent().unwrap_or(Path::new("."));
    for p in [&mut config.paths.input, &mut config.paths.holidays, &mut config.paths.regions]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    let manifest = run_pipeline(&config)?;
    eprintln!("{} artifacts, config hash {}", manifest.artifacts.len(), manifest.config_hash);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(c) => ingest(c),
        Command::Featurize(a) => featurize_cmd(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Tune(a) => tune(a),
        Command::Bench(a) => bench(a),
        Command::Run(a) => run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.jobs.filter(|n| *n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
