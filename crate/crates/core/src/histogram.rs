//! Fixed-width latency histogram with an overflow bucket.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cyclic::LatencySample;
use crate::error::{Error, Result};
use crate::time::TimeNs;

/// Default number of regular buckets; at 1us width this covers 0..10ms.
pub const DEFAULT_BUCKETS: usize = 10_000;

/// Bucket `i` counts latencies in `[i * width, (i + 1) * width)`. Anything at
/// or above `overflow_threshold = buckets * width` lands in `overflow_count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    #[serde(rename = "bucket_width_ns")]
    pub bucket_width: TimeNs,
    pub counts: Vec<u64>,
    #[serde(rename = "overflow_threshold_ns")]
    pub overflow_threshold: TimeNs,
    pub overflow_count: u64,
}

impl Histogram {
    pub fn new(bucket_width: TimeNs, buckets: usize) -> Result<Self> {
        if bucket_width == TimeNs::ZERO {
            return Err(Error::InvalidArgument("bucket width must be positive"));
        }
        if buckets == 0 {
            return Err(Error::InvalidArgument("histogram needs at least one bucket"));
        }
        let overflow_threshold = bucket_width.checked_mul(buckets as u64)?;
        Ok(Histogram {
            bucket_width,
            counts: vec![0; buckets],
            overflow_threshold,
            overflow_count: 0,
        })
    }

    #[inline]
    pub fn push(&mut self, latency: TimeNs) {
        if latency >= self.overflow_threshold {
            self.overflow_count += 1;
        } else {
            self.counts[(latency.as_ns() / self.bucket_width.as_ns()) as usize] += 1;
        }
    }

    /// Total number of recorded samples, overflow included.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow_count
    }

    /// `(bucket lower bound, count)` for every non-empty bucket.
    pub fn nonzero(&self) -> impl Iterator<Item = (TimeNs, u64)> + '_ {
        let w = self.bucket_width.as_ns();
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(move |(i, c)| (TimeNs(i as u64 * w), *c))
    }
}

/// Histogram of a series with [`DEFAULT_BUCKETS`] buckets of `bucket_width`.
pub fn histogram(samples: &[LatencySample], bucket_width: TimeNs) -> Result<Histogram> {
    let mut h = Histogram::new(bucket_width, DEFAULT_BUCKETS)?;
    for s in samples {
        h.push(s.latency);
    }
    Ok(h)
}
