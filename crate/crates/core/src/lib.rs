//! Core of the `rtlat` toolkit: integer-nanosecond time, the periodic task
//! deadline model, the drift-free cyclic measurement loop, and the latency
//! statistics used for reporting.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! operating system (real clocks, threads, files, control groups) lives in the
//! `rtlat` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod boxplot;
pub mod cpuset;
pub mod cyclic;
pub mod error;
pub mod feasibility;
pub mod histogram;
pub mod overshoot;
pub mod stats;
pub mod task;
pub mod time;

pub use boxplot::{boxplot_data, quantile_sorted, BoxplotData};
pub use cpuset::CpuSet;
pub use cyclic::{run_worker, schedule_next, Clock, LatencySample, SimulatedClock, WorkerTiming};
pub use error::{Error, Result};
pub use feasibility::{feasibility_report, Statistic};
pub use histogram::{histogram, Histogram};
pub use overshoot::{overshoot, OvershootCounter, OvershootReport};
pub use stats::{summarize, SummaryStats, Summarizer};
pub use task::{check_deadline, completion_time, deadline_threshold, FeasibilityVerdict, TaskSpec};
pub use time::TimeNs;
