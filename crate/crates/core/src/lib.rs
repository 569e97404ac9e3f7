//! Smartphone-sensing personality inference pipeline.

pub mod eval;
pub mod features;
pub mod forest;
pub mod impute;
pub mod ingest;
pub mod matrix;
pub mod pipeline;
pub mod psychometrics;
pub mod seed;
pub mod synth;
pub mod types;
