//! Counting samples whose latency exceeds a threshold.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cyclic::LatencySample;
use crate::error::{Error, Result};
use crate::time::TimeNs;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvershootReport {
    #[serde(rename = "threshold_ns")]
    pub threshold: TimeNs,
    pub count: u64,
    pub n: u64,
    /// `count / n`.
    pub rate: f64,
    #[serde(rename = "max_observed_ns")]
    pub max_observed: TimeNs,
}

impl OvershootReport {
    /// The exact rate `count / n` as a percentage with at most five
    /// significant digits (round half up), trailing zeros dropped:
    /// 96 of 10,000,000 renders `0.00096%`.
    pub fn rate_percent(&self) -> String {
        let mut s = render_ratio_sig5(self.count as u128 * 100, self.n as u128);
        s.push('%');
        s
    }
}

/// Streaming overshoot counter.
#[derive(Debug, Clone, Copy)]
pub struct OvershootCounter {
    threshold: TimeNs,
    count: u64,
    n: u64,
    max: TimeNs,
}

impl OvershootCounter {
    pub fn new(threshold: TimeNs) -> Self {
        OvershootCounter {
            threshold,
            count: 0,
            n: 0,
            max: TimeNs::ZERO,
        }
    }

    #[inline]
    pub fn push(&mut self, latency: TimeNs) {
        self.n += 1;
        if latency > self.threshold {
            self.count += 1;
        }
        if latency > self.max {
            self.max = latency;
        }
    }

    pub fn finish(&self) -> Result<OvershootReport> {
        if self.n == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(OvershootReport {
            threshold: self.threshold,
            count: self.count,
            n: self.n,
            rate: self.count as f64 / self.n as f64,
            max_observed: self.max,
        })
    }
}

/// Number of samples strictly above `threshold`.
pub fn overshoot(samples: &[LatencySample], threshold: TimeNs) -> Result<OvershootReport> {
    let mut c = OvershootCounter::new(threshold);
    for s in samples {
        c.push(s.latency);
    }
    c.finish()
}

/// Decimal rendering of `num / den` (`num <= 100 * den`) with five significant
/// digits.
fn render_ratio_sig5(num: u128, den: u128) -> String {
    if num == 0 || den == 0 {
        return String::from("0");
    }
    // Find e with 10^e <= num/den < 10^(e+1).
    let mut e: i32 = 0;
    if num >= den {
        while num >= den * pow10(e + 1) {
            e += 1;
        }
    } else {
        while num * pow10(-e) < den {
            e -= 1;
        }
    }
    let places = 4 - e;
    debug_assert!(places >= 0);
    let scaled_num = num * pow10(places);
    let mut digits = (2 * scaled_num + den) / (2 * den);
    let mut places = places;
    if digits >= 100_000 {
        digits /= 10;
        places -= 1;
    }

    let mut raw: Vec<u8> = alloc::format!("{digits}").into_bytes();
    let places = places as usize;
    while raw.len() <= places {
        raw.insert(0, b'0');
    }
    let point = raw.len() - places;
    let mut out = String::from_utf8(raw[..point].to_vec()).unwrap_or_default();
    let frac = core::str::from_utf8(&raw[point..]).unwrap_or("");
    let frac = frac.trim_end_matches('0');
    if !frac.is_empty() {
        out.push('.');
        out.push_str(frac);
    }
    out
}

fn pow10(k: i32) -> u128 {
    10u128.pow(k as u32)
}
