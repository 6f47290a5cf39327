//! Experiment orchestration, file formats and the acceptance suite for
//! `causalstrat-core`.

pub mod acceptance;
pub mod config;
pub mod experiments;
pub mod ingest;
pub mod svg;
pub mod table;
