use modeboost::evaluate::{global_vs_local, Regime};
use modeboost::features::{assemble_matrix, FeatureConfig, FourierConfig};
use modeboost::gbtree::TrainParams;
use modeboost::ingest::{generate_synthetic, HolidayCalendar, SynthSpec};
use modeboost::labeling::LabelConfig;
use modeboost::series::{chronological_split, DEFAULT_RATIOS};

#[test]
fn pooled_model_matches_local_models_on_a_shared_pattern() {
    // every entity draws from the same intensity
    let panel = generate_synthetic(&SynthSpec {
        entities: 4,
        days: 10,
        bases: vec![6.0],
        amplitudes: vec![60.0],
        noise: 1.0,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    let features = FeatureConfig {
        lag_offsets: vec![1, 5, 60, 1440],
        rolling_windows: vec![5, 60],
        ewma_spans: vec![5, 60],
        cv_windows: vec![60],
        fourier: FourierConfig {
            period: 1440,
            harmonics: 2,
            static_fit: false,
        },
        ..Default::default()
    };
    let split = chronological_split(panel.len(), DEFAULT_RATIOS).unwrap();
    let matrix = assemble_matrix(
        &panel,
        &features,
        &HolidayCalendar::default(),
        &[15],
        LabelConfig::default(),
        &split,
    )
    .unwrap();
    let params = TrainParams {
        num_rounds: 100,
        max_depth: 4,
        seed: 21,
        ..Default::default()
    };
    let report = global_vs_local(&matrix, &params, &[15]).unwrap();
    assert_eq!(report.pooled_models, 1);
    assert_eq!(report.local_models, 4);
    assert!(report.local_bytes >= report.pooled_bytes);
    for name in &matrix.meta.entities {
        let pooled = report.get(name, 15, Regime::Pooled).unwrap().mae;
        let local = report.get(name, 15, Regime::Local).unwrap().mae;
        assert!(pooled <= 1.1 * local, "{name}: pooled {pooled} vs local {local}");
    }
    let csv = String::from_utf8(report.to_csv().unwrap()).unwrap();
    assert!(csv.starts_with("# pooled_models=1 local_models=4"));
}
