//! Cyclic wake-up latency measurement for Linux hosts: benchmark workers,
//! load generation, CPU isolation, experiment matrices and reporting.

pub mod analysis;
pub mod bench;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod loadgen;
pub mod report;
pub mod samplefile;
pub mod series;
pub mod sysconfig;

pub use error::{Error, Result};
