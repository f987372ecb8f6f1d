//! Deadline verdicts driven by a measured series.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::boxplot::quantile_sorted;
use crate::cyclic::LatencySample;
use crate::error::{Error, Result};
use crate::stats::summarize;
use crate::task::{check_deadline, FeasibilityVerdict, TaskSpec};
use crate::time::TimeNs;

/// Which statistic of the series stands in for the firing latency.
///
/// Non-integer statistics are rounded up to the next nanosecond.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Statistic {
    #[default]
    Max,
    Mean,
    /// R-7 quantile, `0 <= q <= 1`.
    Quantile(f64),
}

impl Statistic {
    pub fn evaluate(&self, samples: &[LatencySample]) -> Result<TimeNs> {
        match *self {
            Statistic::Max => samples
                .iter()
                .map(|s| s.latency)
                .max()
                .ok_or(Error::EmptyInput),
            Statistic::Mean => Ok(ceil_ns(summarize(samples)?.mean_ns)),
            Statistic::Quantile(q) => {
                if !(0.0..=1.0).contains(&q) {
                    return Err(Error::InvalidArgument("quantile outside [0, 1]"));
                }
                let mut sorted: Vec<u64> = samples.iter().map(|s| s.latency.as_ns()).collect();
                sorted.sort_unstable();
                Ok(ceil_ns(quantile_sorted(&sorted, q)?))
            }
        }
    }
}

fn ceil_ns(v: f64) -> TimeNs {
    // f64 -> u64 casts saturate.
    TimeNs(libm::ceil(v) as u64)
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statistic::Max => f.write_str("max"),
            Statistic::Mean => f.write_str("mean"),
            Statistic::Quantile(q) => write!(f, "p{}", q * 100.0),
        }
    }
}

/// Accepts `max`, `mean`, `p<percent>` (e.g. `p99.999`) or `q<fraction>`.
impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = Error::Parse { what: "statistic" };
        match s {
            "max" => Ok(Statistic::Max),
            "mean" | "avg" => Ok(Statistic::Mean),
            _ => {
                let q = if let Some(p) = s.strip_prefix('p') {
                    p.parse::<f64>().map_err(|_| bad.clone())? / 100.0
                } else if let Some(q) = s.strip_prefix('q') {
                    q.parse::<f64>().map_err(|_| bad.clone())?
                } else {
                    return Err(bad);
                };
                if !(0.0..=1.0).contains(&q) {
                    return Err(bad);
                }
                Ok(Statistic::Quantile(q))
            }
        }
    }
}

impl Serialize for Statistic {
    fn serialize<S: Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Statistic {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Checks `task` against the chosen statistic of `samples`.
///
/// Series recorded without real-time privileges are refused unless
/// `allow_degraded` is set.
pub fn feasibility_report(
    samples: &[LatencySample],
    degraded: bool,
    allow_degraded: bool,
    task: &TaskSpec,
    statistic: Statistic,
) -> Result<FeasibilityVerdict> {
    if degraded && !allow_degraded {
        return Err(Error::DegradedSeries);
    }
    let f = statistic.evaluate(samples)?;
    check_deadline(task, f)
}
