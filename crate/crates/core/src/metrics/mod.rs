//! Accuracy, exact ROC AUC, model evaluation on a split and the synthetic
//! volume sweep.

pub mod scored;
pub mod sweep;

pub use scored::{accuracy, evaluate_model, roc_auc, Evaluation, ScoredSet, THRESHOLD};
pub use sweep::{
    ablation_sweep, count_for_share, write_series, SeriesMetric, SweepCell, SweepConfig,
    SweepResult, SweepRow, SWEEP_HEADER,
};

/// Six significant digits, the precision of every metric column.
pub fn fmt_metric(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = 6 - 1 - v.abs().log10().floor() as i32;
    let s = format!("{:.*}", digits.max(0) as usize, v);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_metric).unwrap_or_else(|| "NA".into())
}
