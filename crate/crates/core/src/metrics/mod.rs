//! Trajectory-quality metrics and the statistical comparison of two groups
//! of runs.

pub mod compare;
pub mod stats;
pub mod trajectory;

pub use compare::{
    compare_report, comparison_csv, comparison_table, ComparisonRow, MetricsReport, TestKind,
    NORMALITY_ALPHA,
};
pub use stats::{mann_whitney_u, shapiro_wilk, welch_t_test, TestResult};
pub use trajectory::{
    average_speed, collision_count, gracefulness, session_log_row, smoothness, time_of_completion,
    TrajSample, Trajectory, DEFAULT_SIGMA, LOG_FLOOR, SESSION_LOG_HEADER,
};
