use rtlat_core::{LatencySample, TimeNs};
use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::sysconfig::EnvReport;

/// Pairing of a wall-clock reading with the worker clock at the same instant,
/// used to place samples on the wall clock after the fact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockOrigin {
    pub wall_ns: u64,
    pub clock_ns: u64,
}

impl ClockOrigin {
    pub fn to_wall(&self, clock: TimeNs) -> u64 {
        let delta = clock.as_ns() as i128 - self.clock_ns as i128;
        (self.wall_ns as i128 + delta).max(0) as u64
    }
}

/// Everything recorded alongside the samples of one worker run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    /// `test/label`, e.g. `W. stress/Preempt-RT`.
    pub label: String,
    pub worker_id: u32,
    pub cpu: u32,
    pub config: BenchConfig,
    pub origin: ClockOrigin,
    pub first_deadline_ns: u64,
    pub started_at_ns: u64,
    pub ended_at_ns: u64,
    pub degraded: bool,
    #[serde(default)]
    pub degraded_reason: Option<String>,
    #[serde(default)]
    pub env: Option<EnvReport>,
    /// Checksum of the isolation plan active while measuring.
    #[serde(default)]
    pub plan_checksum: Option<String>,
    /// Hash of the experiment plan this series belongs to.
    #[serde(default)]
    pub experiment_hash: Option<String>,
    pub toolkit_version: String,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSeries {
    pub meta: SeriesMeta,
    pub samples: Vec<LatencySample>,
}

impl SampleSeries {
    pub fn latencies(&self) -> impl Iterator<Item = TimeNs> + '_ {
        self.samples.iter().map(|s| s.latency)
    }

    /// Wall-clock time at which sample `idx` woke up.
    pub fn sample_wall_time(&self, idx: usize) -> Option<u64> {
        let s = self.samples.get(idx)?;
        let scheduled = self.meta.first_deadline_ns
            + (self.meta.config.warmup + s.seq) * self.meta.config.interval.as_ns();
        Some(self.meta.origin.to_wall(TimeNs(scheduled + s.latency.as_ns())))
    }
}

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
