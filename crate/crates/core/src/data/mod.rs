//! Impressions, synthetic generation, CSV ingestion, splitting and duration
//! bucketing.

pub mod bucketing;
pub mod generator;
pub mod impression;
pub mod ingest;
pub mod split;

pub use bucketing::{fit_bucketing, BucketMode, Bucketing};
pub use generator::{generate_synthetic, AuxThresholds, GeneratorConfig};
pub use impression::{Impression, AUX_NAMES, NUM_AUX};
pub use ingest::{ingest_csv, write_csv, CsvSchema, RejectionReport};
pub use split::{split, SplitSpec, Splits};
