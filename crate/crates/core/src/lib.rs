//! Demand forecasting engine for shared micro-mobility.

pub mod baselines;
pub mod bench;
pub(crate) mod codec;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod gbtree;
pub mod ingest;
pub mod labeling;
pub mod pipeline;
pub mod postprocess;
pub mod seed;
pub mod series;
pub mod tune;

pub use codec::{read_file, write_atomic};
pub use error::{Error, Result};
