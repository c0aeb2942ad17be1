//! Confusion-matrix metrics, one-vs-rest ROC curves and their reports.

pub mod confusion;
pub mod report;
pub mod roc;

pub use confusion::{confusion, metrics_from_confusion, ClassMetrics, ConfusionMatrix, MetricsReport};
pub use report::{emit_report, emit_roc, emit_roc_svg, parse_report, report_table, report_to_json, sig4, ReportFormat};
pub use roc::{roc_binary, roc_ovr, RocCurve};
