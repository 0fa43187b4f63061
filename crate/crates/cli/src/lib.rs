//! Batch driver around `seasonal-modes`: configuration, the per-series
//! pipeline, and the pooled category summary.

pub mod config;
pub mod pipeline;
pub mod summary;
