//! A modality-split transformer for interleaved text/speech token streams,
//! with frozen staged pretraining, per-layer delayed unfreezing, a synthetic
//! paired-token data pipeline and layer-wise cross-modal similarity analysis.

pub mod analysis;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
