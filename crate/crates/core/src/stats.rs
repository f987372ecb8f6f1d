//! Single-pass summary statistics: min, mean, population standard deviation
//! and max.
//!
//! The mean comes from an exact 128-bit running sum. The spread uses Welford's
//! update on values shifted by the first sample, so a large common offset
//! does not eat into the precision of small deviations. Partial summaries combine with Chan's parallel formula, so a
//! multi-gigabyte sample file can be summarized in chunks with bounded memory.

use serde::{Deserialize, Serialize};

use crate::cyclic::LatencySample;
use crate::error::{Error, Result};
use crate::time::TimeNs;

/// Min / mean / sigma / max over one series. `stddev_ns` is the population
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: u64,
    #[serde(rename = "min_ns")]
    pub min: TimeNs,
    pub mean_ns: f64,
    pub stddev_ns: f64,
    #[serde(rename = "max_ns")]
    pub max: TimeNs,
}

/// Streaming accumulator behind [`SummaryStats`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summarizer {
    n: u64,
    min: u64,
    max: u64,
    sum: u128,
    shift: u64,
    /// Running mean of `x - shift`.
    mean: f64,
    m2: f64,
}

impl Default for Summarizer {
    fn default() -> Self {
        Self::new()
    }
}

impl Summarizer {
    pub const fn new() -> Self {
        Summarizer {
            n: 0,
            min: u64::MAX,
            max: 0,
            sum: 0,
            shift: 0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    #[inline]
    pub fn push(&mut self, value: TimeNs) {
        let x = value.as_ns();
        if self.n == 0 {
            self.shift = x;
        }
        self.n += 1;
        self.min = self.min.min(x);
        self.max = self.max.max(x);
        self.sum += x as u128;
        let xf = (x as i128 - self.shift as i128) as f64;
        let delta = xf - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (xf - self.mean);
    }

    pub fn extend<I: IntoIterator<Item = TimeNs>>(&mut self, values: I) {
        for v in values {
            self.push(v);
        }
    }

    /// Folds another partial summary into this one.
    pub fn merge(&mut self, other: &Summarizer) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let other_mean = other.mean + (other.shift as i128 - self.shift as i128) as f64;
        let delta = other_mean - self.mean;
        let (na, nb, nf) = (self.n as f64, other.n as f64, n as f64);
        self.mean += delta * nb / nf;
        self.m2 += other.m2 + delta * delta * na * nb / nf;
        self.n = n;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.sum += other.sum;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn finish(&self) -> Result<SummaryStats> {
        if self.n == 0 {
            return Err(Error::EmptyInput);
        }
        let n = self.n as u128;
        let whole = (self.sum / n) as f64;
        let frac = (self.sum % n) as f64 / self.n as f64;
        let mean = (whole + frac).clamp(self.min as f64, self.max as f64);
        let stddev = if self.min == self.max {
            0.0
        } else {
            libm::sqrt(self.m2.max(0.0) / self.n as f64)
        };
        Ok(SummaryStats {
            n: self.n,
            min: TimeNs(self.min),
            mean_ns: mean,
            stddev_ns: stddev,
            max: TimeNs(self.max),
        })
    }
}

pub fn summarize(samples: &[LatencySample]) -> Result<SummaryStats> {
    let mut acc = Summarizer::new();
    acc.extend(samples.iter().map(|s| s.latency));
    acc.finish()
}
