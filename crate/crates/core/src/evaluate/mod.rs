//! Metrics, paired significance tests and the evaluation harnesses.

mod harness;
mod metrics;
mod stats;

pub use harness::{
    day_totals_csv, global_vs_local, run_evaluation, EvalOptions, EvalReport, EvalTask, GlobalLocalReport,
    MetricRow, ModelSpec, Regime, RegimeRow, ReportMeta, SignificanceRow, POOLED,
};
pub use metrics::{accuracy, confusion, macro_f1, mae, per_class_f1, rmse, weighted_f1};
pub use stats::{
    average_ranks, paired_t_test, regularized_incomplete_beta, student_t_cdf, student_t_two_sided,
    wilcoxon_exact_p, wilcoxon_normal_approx, wilcoxon_signed_rank, TestMethod, TestResult, WILCOXON_EXACT_MAX,
};
