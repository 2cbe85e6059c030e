//! File formats and command implementations behind the `focovil` binary.
//!
//! Everything numeric lives in `focovil-core`; this crate adds the
//! process boundary: strict TOML run configuration, JSON-lines corpora
//! and epoch logs, JSON checkpoints and metrics reports, CSV embedding
//! export, and the exit-code contract (0 success, 2 configuration,
//! 3 file, 4 numeric abort, 5 shape mismatch).

#![forbid(unsafe_code)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus_io;
pub mod errors;
pub mod report;
