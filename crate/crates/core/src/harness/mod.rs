//! Twin-experiment orchestration and verification statistics.

mod experiment;
mod report;
mod skill;
mod stats;
mod truth;

pub use experiment::{
    capture_samples, observation_stream, observe, run_experiment, run_suite, Assets, ExperimentConfig, ExperimentRecord, StoredEnsemble,
};
pub use report::{
    day_of, report_csv, report_rows, Metrics, ReportRow, RunSummary, METRICS_HEADER, REPORT_HEADER,
};
pub use skill::{center_ratio, cov_skill_ratio, SkillAccumulator};
pub use stats::{
    efolding_dof, efolding_time, layer_rmse, mean, rmse_series, truth_on_grid, ttest_95, variance,
    SignificanceResult,
};
pub use truth::{nature_run, ControlConfig, ControlRun, Truth, TruthConfig};
