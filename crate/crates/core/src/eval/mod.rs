//! Accuracy metrics and the subgroup report.

mod metrics;
mod report;

pub use metrics::{emd, hellinger, mae, mape, mse, nrmse, rmse, Metric, MetricSuite, MAPE_ZERO_TOLERANCE};
pub use report::{
    evaluate_and_report, evaluate_predictions, overlay_svg, scenario_metrics, EvalOptions, Evaluation, Moe, ReportRow,
    ScenarioMetrics, SubgroupReport,
};
