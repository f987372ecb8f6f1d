//! Sets of logical CPU indices and their two kernel text encodings: the list
//! form (`0-3,8`) used by cpuset files and the comma-grouped hex mask used by
//! `smp_affinity`.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CpuSet(BTreeSet<u32>);

impl CpuSet {
    pub fn new() -> Self {
        CpuSet(BTreeSet::new())
    }

    /// CPUs `0..n`.
    pub fn first_n(n: u32) -> Self {
        (0..n).collect()
    }

    pub fn insert(&mut self, cpu: u32) -> bool {
        self.0.insert(cpu)
    }

    pub fn remove(&mut self, cpu: u32) -> bool {
        self.0.remove(&cpu)
    }

    pub fn contains(&self, cpu: u32) -> bool {
        self.0.contains(&cpu)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied()
    }

    pub fn max(&self) -> Option<u32> {
        self.0.iter().next_back().copied()
    }

    pub fn is_disjoint(&self, other: &CpuSet) -> bool {
        self.0.is_disjoint(&other.0)
    }

    pub fn is_subset(&self, other: &CpuSet) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn intersection(&self, other: &CpuSet) -> CpuSet {
        CpuSet(self.0.intersection(&other.0).copied().collect())
    }

    pub fn union(&self, other: &CpuSet) -> CpuSet {
        CpuSet(self.0.union(&other.0).copied().collect())
    }

    pub fn difference(&self, other: &CpuSet) -> CpuSet {
        CpuSet(self.0.difference(&other.0).copied().collect())
    }

    /// Parses the kernel list format, e.g. `0-3,8,10-11`. Whitespace and an
    /// empty string (the empty set) are accepted.
    pub fn parse_list(s: &str) -> Result<Self> {
        let mut set = CpuSet::new();
        for part in s.trim().split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            match part.split_once('-') {
                Some((lo, hi)) => {
                    let lo = parse_cpu(lo)?;
                    let hi = parse_cpu(hi)?;
                    if lo > hi {
                        return Err(Error::Parse { what: "cpu range" });
                    }
                    set.0.extend(lo..=hi);
                }
                None => {
                    set.insert(parse_cpu(part)?);
                }
            }
        }
        Ok(set)
    }

    /// Renders the list format with maximal ranges.
    pub fn to_list_string(&self) -> String {
        let mut out = String::new();
        let mut iter = self.0.iter().copied().peekable();
        while let Some(start) = iter.next() {
            let mut end = start;
            while iter.peek() == Some(&(end + 1)) {
                end += 1;
                iter.next();
            }
            if !out.is_empty() {
                out.push(',');
            }
            if start == end {
                let _ = write!(out, "{start}");
            } else {
                let _ = write!(out, "{start}-{end}");
            }
        }
        out
    }

    /// Parses a hex affinity mask such as `ff`, `00000000,00000003`.
    pub fn parse_hex_mask(s: &str) -> Result<Self> {
        let mut set = CpuSet::new();
        let digits: Vec<u8> = s
            .trim()
            .bytes()
            .filter(|b| *b != b',')
            .collect();
        if digits.is_empty() {
            return Err(Error::Parse { what: "cpu mask" });
        }
        for (pos, b) in digits.iter().rev().enumerate() {
            let nibble = (*b as char)
                .to_digit(16)
                .ok_or(Error::Parse { what: "cpu mask" })?;
            for bit in 0..4 {
                if nibble & (1 << bit) != 0 {
                    set.insert(pos as u32 * 4 + bit);
                }
            }
        }
        Ok(set)
    }

    /// Formats the mask the way the kernel prints a bitmap of `nbits` bits:
    /// 32-bit chunks separated by commas, zero padded, with the most
    /// significant chunk only as wide as the bits it holds.
    pub fn to_hex_mask(&self, nbits: u32) -> String {
        let nbits = nbits.max(self.max().map_or(1, |m| m + 1));
        let mut out = String::new();
        let mut chunk_bits = nbits % 32;
        if chunk_bits == 0 {
            chunk_bits = 32;
        }
        let mut lo = nbits.div_ceil(32) * 32 - 32;
        loop {
            let mut val: u32 = 0;
            for bit in 0..chunk_bits {
                if self.contains(lo + bit) {
                    val |= 1 << bit;
                }
            }
            if !out.is_empty() {
                out.push(',');
            }
            let width = chunk_bits.div_ceil(4) as usize;
            let _ = write!(out, "{val:0width$x}");
            if lo == 0 {
                break;
            }
            lo -= 32;
            chunk_bits = 32;
        }
        out
    }
}

fn parse_cpu(s: &str) -> Result<u32> {
    s.trim().parse().map_err(|_| Error::Parse { what: "cpu index" })
}

impl FromIterator<u32> for CpuSet {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        CpuSet(iter.into_iter().collect())
    }
}

impl fmt::Display for CpuSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_list_string())
    }
}

impl FromStr for CpuSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CpuSet::parse_list(s)
    }
}

impl Serialize for CpuSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_list_string())
    }
}

impl<'de> Deserialize<'de> for CpuSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        CpuSet::parse_list(&s).map_err(serde::de::Error::custom)
    }
}
