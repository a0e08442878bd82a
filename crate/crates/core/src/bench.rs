//! Inference latency, throughput and model footprint measurement.

use std::fmt::Write as _;
use std::mem::size_of;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbtree::{Ensemble, Node, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub batch_size: usize,
    pub warmup: usize,
    pub repeats: usize,
    /// When set, also measures single-row throughput with this many threads.
    pub threads: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_size: 3500,
            warmup: 3,
            repeats: 10,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Footprint {
    /// Exact length of the binary model file.
    pub serialized: usize,
    /// Analytic in-memory size of the loaded model.
    pub resident: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub horizon: Option<usize>,
    pub task: String,
    pub batch_size: usize,
    /// One vectorised batch call per repeat, in milliseconds.
    pub batch_samples_ms: Vec<f64>,
    /// Mean batch wall time.
    pub total_ms: f64,
    /// Wall time of each single-row loop, in milliseconds.
    pub loop_wall_ms: Vec<f64>,
    /// Sum of the individual single-row call times per loop.
    pub loop_sum_ms: Vec<f64>,
    pub per_record_mean_ms: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub records_per_s: f64,
    pub threaded_records_per_s: Option<f64>,
    pub model_bytes: usize,
    pub resident_bytes: usize,
    pub peak_rss_bytes: Option<u64>,
    pub host: String,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn check_clock() -> Result<()> {
    let start = Instant::now();
    for _ in 0..1_000_000 {
        if start.elapsed() > Duration::ZERO {
            return Ok(());
        }
    }
    Err(Error::ClockUnavailable)
}

/// Peak resident set size from `/proc/self/status` where available.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

pub fn host_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name") || l.starts_with("Model"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    format!("{}-{} cpus={cpus} {model}", std::env::consts::OS, std::env::consts::ARCH)
}

/// Serialized size and an analytic resident estimate:
/// `size_of::<Ensemble>()` plus, per tree, `size_of::<Tree>()` and
/// `nodes · size_of::<Node>()`, plus feature-name strings, base scores,
/// scaler vectors and labeler tables.
pub fn model_footprint(model: &Ensemble) -> Result<Footprint> {
    let serialized = model.to_bytes()?.len();
    let strings = |v: &[String]| v.iter().map(|s| size_of::<String>() + s.len()).sum::<usize>();
    let mut resident = size_of::<Ensemble>()
        + model.base_score.len() * size_of::<f64>()
        + strings(&model.feature_names)
        + model
            .trees
            .iter()
            .map(|t| size_of::<Tree>() + t.nodes.len() * size_of::<Node>())
            .sum::<usize>();
    if let Some(s) = &model.scaler {
        resident += strings(&s.names) + s.kinds.len() + (s.center.len() + s.spread.len()) * size_of::<f64>();
    }
    if let Some(l) = &model.labeler {
        resident += l.peaks.len() * size_of::<f64>() + l.tertiles.len() * 2 * size_of::<f64>();
    }
    Ok(Footprint { serialized, resident })
}

/// Row-major batch of `batch_size` rows, cycling through `rows` if short.
fn batch_from(rows: &[f64], m: usize, batch_size: usize) -> Result<Vec<f64>> {
    if m == 0 || rows.is_empty() || !rows.len().is_multiple_of(m) {
        return Err(Error::FeatureMismatch(format!("row data of length {} is not a multiple of {m}", rows.len())));
    }
    let n = rows.len() / m;
    let mut out = Vec::with_capacity(batch_size * m);
    for i in 0..batch_size {
        let r = i % n;
        out.extend_from_slice(&rows[r * m..(r + 1) * m]);
    }
    Ok(out)
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Times `repeats` batch predictions and `repeats` single-row loops after
/// `warmup` untimed rounds. Every repeat must reproduce the first
/// predictions bit for bit.
pub fn bench_inference(model: &Ensemble, rows: &[f64], config: &BenchConfig) -> Result<BenchReport> {
    check_clock()?;
    if config.batch_size == 0 || config.repeats == 0 {
        return Err(Error::InvalidConfig("batch_size and repeats must be at least 1".into()));
    }
    let m = model.num_features();
    let batch = batch_from(rows, m, config.batch_size)?;
    let single_loop = |samples: &mut Vec<f64>| -> Vec<f64> {
        batch
            .chunks_exact(m)
            .map(|row| {
                let start = Instant::now();
                let y = model.predict_row(row);
                samples.push(ms(start.elapsed()));
                y
            })
            .collect()
    };
    let mut reference = None;
    let mut scratch = Vec::new();
    for _ in 0..config.warmup {
        let y = model.predict(&batch)?;
        single_loop(&mut scratch);
        reference.get_or_insert(y);
    }

    let mut batch_samples_ms = Vec::with_capacity(config.repeats);
    let mut loop_wall_ms = Vec::with_capacity(config.repeats);
    let mut loop_sum_ms = Vec::with_capacity(config.repeats);
    let mut per_call = Vec::with_capacity(config.repeats * config.batch_size);
    for _ in 0..config.repeats {
        let start = Instant::now();
        let y = model.predict(&batch)?;
        batch_samples_ms.push(ms(start.elapsed()));
        let reference = reference.get_or_insert_with(|| y.clone());
        if !same_bits(reference, &y) {
            return Err(Error::NondeterministicPrediction);
        }
        let mark = per_call.len();
        let start = Instant::now();
        let single = single_loop(&mut per_call);
        loop_wall_ms.push(ms(start.elapsed()));
        loop_sum_ms.push(per_call[mark..].iter().sum());
        if !same_bits(reference, &single) {
            return Err(Error::NondeterministicPrediction);
        }
    }

    let threaded_records_per_s = match config.threads {
        Some(t) if t > 0 => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let start = Instant::now();
            let y: Vec<f64> = pool.install(|| batch.par_chunks(m).map(|row| model.predict_row(row)).collect());
            let secs = start.elapsed().as_secs_f64();
            if !same_bits(reference.as_deref().unwrap_or(&[]), &y) {
                return Err(Error::NondeterministicPrediction);
            }
            Some(config.batch_size as f64 / secs.max(1e-12))
        }
        _ => None,
    };

    let mut sorted = per_call.clone();
    sorted.sort_by(f64::total_cmp);
    let per_record_mean_ms = per_call.iter().sum::<f64>() / per_call.len() as f64;
    let total_ms = batch_samples_ms.iter().sum::<f64>() / batch_samples_ms.len() as f64;
    let footprint = model_footprint(model)?;
    Ok(BenchReport {
        horizon: model.horizon,
        task: model.task.name().to_string(),
        batch_size: config.batch_size,
        batch_samples_ms,
        total_ms,
        loop_wall_ms,
        loop_sum_ms,
        per_record_mean_ms,
        p50: percentile(&sorted, 50.0),
        p95: percentile(&sorted, 95.0),
        p99: percentile(&sorted, 99.0),
        records_per_s: config.batch_size as f64 / (total_ms / 1e3).max(1e-12),
        threaded_records_per_s,
        model_bytes: footprint.serialized,
        resident_bytes: footprint.resident,
        peak_rss_bytes: peak_rss_bytes(),
        host: host_descriptor(),
    })
}

/// One report per model, in input order.
pub fn bench_suite(models: &[&Ensemble], rows: &[f64], config: &BenchConfig) -> Result<Vec<BenchReport>> {
    models.iter().map(|m| bench_inference(m, rows, config)).collect()
}

/// `horizon,task,batch_size,total_ms,per_record_mean_ms,p50,p95,p99,records_per_s,model_bytes`
/// preceded by `#` lines with the host and run settings.
pub fn reports_csv(reports: &[BenchReport], config: &BenchConfig, notes: &[String]) -> Result<Vec<u8>> {
    let mut head = String::new();
    let host = reports.first().map_or_else(host_descriptor, |r| r.host.clone());
    let _ = writeln!(head, "# host={host}");
    let _ = writeln!(
        head,
        "# warmup={} repeats={} threads={}",
        config.warmup,
        config.repeats,
        config.threads.map_or("off".to_string(), |t| t.to_string())
    );
    for r in reports {
        let _ = writeln!(
            head,
            "# {} h={}: resident_bytes={} peak_rss_bytes={} threaded_records_per_s={}",
            r.task,
            r.horizon.map_or("-".to_string(), |h| h.to_string()),
            r.resident_bytes,
            r.peak_rss_bytes.map_or("n/a".to_string(), |b| b.to_string()),
            r.threaded_records_per_s.map_or("n/a".to_string(), |v| format!("{v:.1}"))
        );
    }
    for n in notes {
        let _ = writeln!(head, "# {n}");
    }
    let mut bytes = head.into_bytes();
    let mut w = csv::Writer::from_writer(&mut bytes);
    w.write_record([
        "horizon",
        "task",
        "batch_size",
        "total_ms",
        "per_record_mean_ms",
        "p50",
        "p95",
        "p99",
        "records_per_s",
        "model_bytes",
    ])?;
    for r in reports {
        w.write_record([
            r.horizon.map_or(String::new(), |h| h.to_string()),
            r.task.clone(),
            r.batch_size.to_string(),
            format!("{:.6}", r.total_ms),
            format!("{:.6}", r.per_record_mean_ms),
            format!("{:.6}", r.p50),
            format!("{:.6}", r.p95),
            format!("{:.6}", r.p99),
            format!("{:.1}", r.records_per_s),
            r.model_bytes.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<bench csv>", e))?;
    drop(w);
    Ok(bytes)
}
