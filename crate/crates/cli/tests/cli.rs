use std::path::Path;
use std::process::{Command, Output};

const SMALL_CONFIG: &str = r#"
seed = 3
horizons = [5, 15]

[features]
lag_offsets = [1, 5, 60]
rolling_windows = [5, 60]
ewma_spans = [5, 60]
cv_windows = [60]

[features.fourier]
period = 120
harmonics = 2

[train]
num_rounds = 8
max_depth = 3

[tune]
n1 = 3
n2 = 2

[paths]
input = "demand.csv"
output = "run"
"#;

fn modeboost(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modeboost"))
        .args(args)
        .current_dir(dir)
        .env_remove("MODEBOOST_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = modeboost(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.toml"), SMALL_CONFIG).unwrap();
    ok(
        &["synth", "--entities", "2", "--days", "4", "--seed", "7", "--out", "demand.csv"],
        dir.path(),
    );
    dir
}

#[test]
fn synth_writes_panel() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &["synth", "--entities", "5", "--days", "28", "--seed", "7", "--out", "demand.csv"],
        dir.path(),
    );
    let text = std::fs::read_to_string(dir.path().join("demand.csv")).unwrap();
    assert!(text.starts_with("entity,timestamp,value\n"));
    assert_eq!(text.lines().count(), 1 + 5 * 28 * 1440);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = modeboost(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = modeboost(&["train", "--horizon", "5", "--out", "m.mbgb"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--matrix"));
    let out = modeboost(&["train", "--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("--horizon"));
}

#[test]
fn domain_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = modeboost(&["featurize", "--panel", "missing.csv", "--out", "m.bin"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));
    assert!(!dir.path().join("m.bin").exists());
}

#[test]
fn stepwise_workflow() {
    let dir = setup();
    let d = dir.path();
    ok(
        &["featurize", "--panel", "demand.csv", "--config", "config.toml", "--out", "matrix.bin"],
        d,
    );
    ok(
        &["featurize", "--panel", "demand.csv", "--config", "config.toml", "--out", "matrix.csv"],
        d,
    );
    for (task, file) in [("regression", "reg.mbgb"), ("classification", "cls.json")] {
        ok(
            &[
                "train", "--matrix", "matrix.bin", "--horizon", "5", "--task", task, "--config", "config.toml", "--out",
                file,
            ],
            d,
        );
    }
    ok(&["--jobs", "2", "train", "--matrix", "matrix.csv", "--horizon", "15", "--out", "reg15.mbgb", "--config", "config.toml"], d);

    ok(&["predict", "--model", "cls.json", "--matrix", "matrix.bin", "--out", "pred.csv"], d);
    let pred = std::fs::read_to_string(d.join("pred.csv")).unwrap();
    assert!(pred.starts_with("entity,step,partition,prediction,p0,p1,p2\n"));
    assert!(pred.lines().skip(1).all(|l| l.contains(",test,")));

    ok(
        &[
            "evaluate", "--panel", "demand.csv", "--matrix", "matrix.bin", "--model", "reg.mbgb", "--model", "reg15.mbgb",
            "--compare", "gbt:snaive", "--out-dir", "eval", "--plot-data",
        ],
        d,
    );
    let metrics = std::fs::read_to_string(d.join("eval/metrics.csv")).unwrap();
    assert!(metrics.contains("entity,horizon,model,metric,value"));
    assert!(metrics.contains("# baseline croston: croston(alpha=0.1)"));
    assert!(d.join("eval/significance.csv").exists());
    assert!(d.join("eval/day_totals.csv").exists());

    // a model trained on different features is refused
    std::fs::write(d.join("other.toml"), SMALL_CONFIG.replace("[1, 5, 60]", "[1, 60]")).unwrap();
    ok(&["featurize", "--panel", "demand.csv", "--config", "other.toml", "--out", "other.bin"], d);
    let out = modeboost(
        &["evaluate", "--panel", "demand.csv", "--matrix", "other.bin", "--model", "reg.mbgb", "--out-dir", "bad"],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));

    ok(
        &[
            "bench", "--model", "reg.mbgb", "--model", "cls.json", "--rows", "matrix.bin", "--batch", "200", "--repeats",
            "2", "--warmup", "1", "--panel", "demand.csv", "--config", "config.toml", "--out", "bench.csv",
        ],
        d,
    );
    let bench = std::fs::read_to_string(d.join("bench.csv")).unwrap();
    assert!(bench.contains("horizon,task,batch_size,total_ms,per_record_mean_ms,p50,p95,p99,records_per_s,model_bytes"));
    assert!(bench.contains("# featurize_ms_per_record="));

    let out = ok(
        &["tune", "--matrix", "matrix.bin", "--horizon", "5", "--config", "config.toml", "--out-dir", "tune"],
        d,
    );
    let fragment = String::from_utf8(out.stdout).unwrap();
    assert!(fragment.contains("[train]") && fragment.contains("learning_rate = "));
    let log = std::fs::read_to_string(d.join("tune/study_log.csv")).unwrap();
    assert!(log.starts_with("# n1=3 n2=2 narrow=0.5"));

    // the tuned fragment is accepted as a config
    let tuned = format!("{}\n[paths]\ninput = \"demand.csv\"\n", fragment);
    std::fs::write(d.join("tuned.toml"), tuned).unwrap();
    ok(&["train", "--matrix", "matrix.bin", "--horizon", "5", "--config", "tuned.toml", "--out", "tuned.mbgb"], d);
}

#[test]
fn run_is_reproducible_and_seed_sensitive() {
    let dir = setup();
    let d = dir.path();
    ok(&["run", "--config", "config.toml", "--out", "a"], d);
    ok(&["run", "--config", "config.toml", "--out", "b"], d);
    ok(&["run", "--config", "config.toml", "--out", "c", "--seed", "4"], d);
    let read = |p: &str| std::fs::read_to_string(d.join(p).join("manifest.json")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    for name in ["regression_h5.mbgb", "regression_h15.mbgb", "classification_h5.mbgb"] {
        assert!(d.join("a/models").join(name).exists(), "{name}");
    }
    assert!(d.join("a/reports/regression_metrics.csv").exists());
}

#[test]
fn ingest_trips_applies_cleaning_rules() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut csv = String::from("ride_id,start_time,end_time,start_station,end_station\n");
    for day in 1..=3 {
        for k in 0..4 {
            csv += &format!("a{day}{k},2023-05-0{day} 08:{k}0:00,2023-05-0{day} 08:{k}9:00,A,B\n");
        }
    }
    csv += "long,2023-05-01 09:00:00,2023-05-02 10:00:00,A,B\n";
    csv += "loop,2023-05-01 10:00:00,2023-05-01 10:00:30,A,A\n";
    csv += "rare,2023-05-01 11:00:00,2023-05-01 11:20:00,C,A\n";
    std::fs::write(d.join("trips.csv"), csv).unwrap();
    ok(
        &["ingest", "trips", "--input", "trips.csv", "--out", "panel.csv", "--report", "report.csv"],
        d,
    );
    let report = std::fs::read_to_string(d.join("report.csv")).unwrap();
    for line in ["input,15", "too_long,1", "short_round_trip,1", "inactive_stations,1", "kept,12"] {
        assert!(report.contains(line), "{line} missing from\n{report}");
    }
    let panel = std::fs::read_to_string(d.join("panel.csv")).unwrap();
    assert!(!panel.contains("\nC,"));
}
