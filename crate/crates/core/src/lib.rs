pub mod benchmark;
pub mod cli;
pub mod correction;
pub mod data;
pub mod error;
pub mod eval;
pub mod first_stage;
pub mod numeric;
pub mod stats;
pub mod training;
pub mod transform;

pub use error::{Error, Result};
