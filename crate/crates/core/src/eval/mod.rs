//! Metrics, bias reports and the appendix validators.

pub mod appendix;
pub mod metrics;
pub mod reports;
pub mod sweep;

pub use appendix::{
    check_long_tail_inheritance, check_oracle_risk, GroupSpec, LongTailConfig, LongTailReport, OracleRiskConfig,
    OracleRiskReport, TailDistribution,
};
pub use metrics::{mae, per_user_xauc, xauc, PerUserXauc, Xauc, DEFAULT_MAX_PAIRS};
pub use reports::{
    bucket_report, evaluate, factor_distribution_report, max_ratio_deviation, tail_slice_report, BucketRow,
    BucketTables, EvalConfig, EvalReport, FactorReport, Summary, TailSlice,
};
pub use sweep::{bucket_sensitivity_sweep, SweepPoint, SweepReport};
