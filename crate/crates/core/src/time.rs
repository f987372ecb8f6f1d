//! Integer nanosecond time values.
//!
//! Every latency, period and deadline in the toolkit is carried as a [`TimeNs`].
//! Microseconds only show up when something is rendered for humans.

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NS_PER_US: u64 = 1_000;
pub const NS_PER_MS: u64 = 1_000_000;
pub const NS_PER_S: u64 = 1_000_000_000;

/// A non-negative duration or instant in nanoseconds.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TimeNs(pub u64);

impl TimeNs {
    pub const ZERO: TimeNs = TimeNs(0);
    pub const MAX: TimeNs = TimeNs(u64::MAX);

    pub const fn from_ns(ns: u64) -> Self {
        TimeNs(ns)
    }

    pub const fn from_us(us: u64) -> Self {
        TimeNs(us * NS_PER_US)
    }

    pub const fn from_ms(ms: u64) -> Self {
        TimeNs(ms * NS_PER_MS)
    }

    pub const fn from_secs(s: u64) -> Self {
        TimeNs(s * NS_PER_S)
    }

    pub const fn as_ns(self) -> u64 {
        self.0
    }

    /// Whole microseconds, truncating toward zero.
    pub const fn as_us_trunc(self) -> u64 {
        self.0 / NS_PER_US
    }

    pub fn checked_add(self, rhs: TimeNs) -> Result<TimeNs> {
        self.0
            .checked_add(rhs.0)
            .map(TimeNs)
            .ok_or(Error::Overflow { op: "add" })
    }

    pub fn checked_sub(self, rhs: TimeNs) -> Result<TimeNs> {
        self.0
            .checked_sub(rhs.0)
            .map(TimeNs)
            .ok_or(Error::Overflow { op: "sub" })
    }

    pub fn checked_mul(self, k: u64) -> Result<TimeNs> {
        self.0
            .checked_mul(k)
            .map(TimeNs)
            .ok_or(Error::Overflow { op: "mul" })
    }

    pub const fn saturating_sub(self, rhs: TimeNs) -> TimeNs {
        TimeNs(self.0.saturating_sub(rhs.0))
    }

    /// Signed difference `self - rhs` in nanoseconds.
    pub fn signed_diff(self, rhs: TimeNs) -> i128 {
        self.0 as i128 - rhs.0 as i128
    }
}

impl From<u64> for TimeNs {
    fn from(ns: u64) -> Self {
        TimeNs(ns)
    }
}

/// Renders the shortest exact unit: `1ms`, `100us`, `1500ns`.
impl fmt::Display for TimeNs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ns = self.0;
        if ns == 0 {
            return f.write_str("0ns");
        }
        if ns.is_multiple_of(NS_PER_S) {
            write!(f, "{}s", ns / NS_PER_S)
        } else if ns.is_multiple_of(NS_PER_MS) {
            write!(f, "{}ms", ns / NS_PER_MS)
        } else if ns.is_multiple_of(NS_PER_US) {
            write!(f, "{}us", ns / NS_PER_US)
        } else {
            write!(f, "{}ns", ns)
        }
    }
}

/// Parses `<integer><unit>` where unit is one of `ns`, `us`, `µs`, `ms`, `s`.
/// A bare integer is taken as nanoseconds.
impl FromStr for TimeNs {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let split = s
            .find(|c: char| !c.is_ascii_digit())
            .unwrap_or(s.len());
        let (digits, unit) = s.split_at(split);
        if digits.is_empty() {
            return Err(Error::Parse { what: "duration" });
        }
        let value: u64 = digits.parse().map_err(|_| Error::Parse { what: "duration" })?;
        let scale = match unit.trim() {
            "" | "ns" => 1,
            "us" | "µs" => NS_PER_US,
            "ms" => NS_PER_MS,
            "s" => NS_PER_S,
            _ => return Err(Error::Parse { what: "duration unit" }),
        };
        value
            .checked_mul(scale)
            .map(TimeNs)
            .ok_or(Error::Overflow { op: "parse" })
    }
}
