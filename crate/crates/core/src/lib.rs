//! Star-history collection, trend clustering and popularity prediction for
//! source-code repositories.

pub mod cli;
pub mod eval;
pub mod ingest;
pub mod ksc;
pub mod linalg;
pub mod mock;
pub mod ranking;
pub mod regress;
pub mod report;
pub mod synth;
pub mod timeseries;
