//! Frozen first-stage predictors and the signals they hand to the
//! correction stage.

pub mod model;
pub mod oracle;
pub mod output;

pub use model::{
    freeze_and_emit, train_first_stage, train_vr, train_wlr, Backbone, FirstStageHyper, FirstStageModel,
};
pub use oracle::{biased_oracle_first_stage, BiasProfile, BiasedOracle, OracleConfig};
pub use output::{read_outputs_csv, write_outputs_csv, FirstStage, FirstStageOutput, OutputMapping};
