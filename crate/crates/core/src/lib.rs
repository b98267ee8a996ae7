pub mod classify;
pub mod cluster;
pub mod discover;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod ingest;
pub mod matrix;
pub mod model;
pub mod pipeline;
pub mod rules;
pub mod seed;
pub mod sessionize;
pub mod stats;
pub mod synth;
pub mod validity;

pub use error::{Error, Result};
