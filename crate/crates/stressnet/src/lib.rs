//! File formats, checkpoints, reports and the `stressnet` command line on
//! top of `stressnet-core`.

pub mod checkpoint;
pub mod cli;
pub mod io;
pub mod pipeline;
pub mod report;

pub use stressnet_core as core;
