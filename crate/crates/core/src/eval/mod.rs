//! Evaluation: error metrics, tolerance curves, confusion matrices,
//! distribution exports and the per-condition report.

mod metrics;
mod report;

pub use self::metrics::{
    accuracy, confusion_matrix, empirical_cdf, integer_tolerances, kde_density, mae, tolerance_curve, ConfusionMatrix,
    EvalError, DENSITY_GRID_POINTS,
};
pub use self::report::{
    per_condition_report, read_predictions_csv, write_predictions_csv, write_report, AccuracyCell, ConfusionEntry, Distribution, EvalReport, MaeCell, PredictionSet,
    ToleranceCurve, MAX_TOLERANCE_FPS, REPORT_VERSION,
};
