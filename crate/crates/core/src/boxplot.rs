//! Quartiles and whiskers for boxplot rendering.
//!
//! Quantiles use linear interpolation between order statistics (the "R-7"
//! rule, also the default of NumPy and R): for sorted `x[0..n]` and
//! probability `q`, `h = (n - 1) q` and the result is
//! `x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h])`.
//! Changing the rule changes reported numbers and must bump
//! [`QUANTILE_METHOD_VERSION`].

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cyclic::LatencySample;
use crate::error::{Error, Result};
use crate::stats::Summarizer;

pub const QUANTILE_METHOD: &str = "R-7";
pub const QUANTILE_METHOD_VERSION: u16 = 1;

/// Whisker reach in units of the interquartile range.
pub const WHISKER_IQR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotData {
    pub label: String,
    pub n: u64,
    pub q1_ns: f64,
    pub median_ns: f64,
    pub q3_ns: f64,
    pub whisker_low_ns: f64,
    pub whisker_high_ns: f64,
    pub mean_ns: f64,
    pub min_ns: u64,
    pub max_ns: u64,
    /// Samples outside `[q1 - 1.5 IQR, q3 + 1.5 IQR]`.
    pub outliers: u64,
}

/// R-7 quantile of an ascending slice. `q` is clamped to `[0, 1]`.
pub fn quantile_sorted(sorted: &[u64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyInput);
    }
    if q.is_nan() {
        return Err(Error::InvalidArgument("quantile must be a number"));
    }
    let q = q.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = libm::floor(h) as usize;
    let frac = h - lo as f64;
    let base = sorted[lo] as f64;
    if lo + 1 >= sorted.len() || frac == 0.0 {
        return Ok(base);
    }
    let next = sorted[lo + 1] as f64;
    Ok(base + frac * (next - base))
}

/// Box statistics for one sorted series.
pub fn box_from_sorted(label: &str, sorted: &[u64]) -> Result<BoxplotData> {
    let q1 = quantile_sorted(sorted, 0.25)?;
    let median = quantile_sorted(sorted, 0.5)?;
    let q3 = quantile_sorted(sorted, 0.75)?;
    let iqr = q3 - q1;
    let fence_low = q1 - WHISKER_IQR * iqr;
    let fence_high = q3 + WHISKER_IQR * iqr;

    let mut acc = Summarizer::new();
    let mut outliers = 0u64;
    let mut lowest_inside = f64::INFINITY;
    let mut highest_inside = f64::NEG_INFINITY;
    for &x in sorted {
        acc.push(x.into());
        let xf = x as f64;
        if xf < fence_low || xf > fence_high {
            outliers += 1;
        } else {
            lowest_inside = lowest_inside.min(xf);
            highest_inside = highest_inside.max(xf);
        }
    }
    let stats = acc.finish()?;

    // With very few samples the nearest datum inside a fence can sit inside
    // the box; the whisker then collapses onto the box edge.
    Ok(BoxplotData {
        label: label.into(),
        n: stats.n,
        q1_ns: q1,
        median_ns: median,
        q3_ns: q3,
        whisker_low_ns: lowest_inside.min(q1),
        whisker_high_ns: highest_inside.max(q3),
        mean_ns: stats.mean_ns,
        min_ns: stats.min.as_ns(),
        max_ns: stats.max.as_ns(),
        outliers,
    })
}

/// One [`BoxplotData`] per labeled series, in input order.
pub fn boxplot_data(series: &[(&str, &[LatencySample])]) -> Result<Vec<BoxplotData>> {
    series
        .iter()
        .map(|(label, samples)| {
            let mut sorted: Vec<u64> = samples.iter().map(|s| s.latency.as_ns()).collect();
            sorted.sort_unstable();
            box_from_sorted(label, &sorted)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::TimeNs;

    fn series(values: impl IntoIterator<Item = u64>) -> Vec<LatencySample> {
        values
            .into_iter()
            .enumerate()
            .map(|(i, v)| LatencySample { seq: i as u64, latency: TimeNs(v) })
            .collect()
    }

    #[test]
    fn one_to_hundred() {
        let s = series(1..=100);
        let b = &boxplot_data(&[("x", &s)]).unwrap()[0];
        assert_eq!(b.median_ns, 50.5);
        assert_eq!(b.q1_ns, 25.75);
        assert_eq!(b.q3_ns, 75.25);
        assert_eq!(b.whisker_low_ns, 1.0);
        assert_eq!(b.whisker_high_ns, 100.0);
        assert_eq!(b.outliers, 0);
        assert_eq!(b.mean_ns, 50.5);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let s = series(core::iter::repeat_n(42, 17));
        let b = &boxplot_data(&[("c", &s)]).unwrap()[0];
        assert_eq!((b.q1_ns, b.median_ns, b.q3_ns), (42.0, 42.0, 42.0));
        assert_eq!((b.whisker_low_ns, b.whisker_high_ns), (42.0, 42.0));
    }

    #[test]
    fn outliers_and_label_order() {
        let a = series([1, 2, 3, 4, 5, 6, 7, 8, 1000]);
        let b = series([10, 10, 10]);
        let out = boxplot_data(&[("second", &a), ("first", &b)]).unwrap();
        assert_eq!(out[0].label, "second");
        assert_eq!(out[1].label, "first");
        assert_eq!(out[0].outliers, 1);
        assert_eq!(out[0].whisker_high_ns, 8.0);
    }

    #[test]
    fn whiskers_never_cut_into_the_box() {
        let s = series([0, 100, 100, 100]);
        let b = &boxplot_data(&[("w", &s)]).unwrap()[0];
        assert_eq!(b.q1_ns, 75.0);
        assert!(b.whisker_low_ns <= b.q1_ns);
        assert_eq!(b.outliers, 1);
    }

    #[test]
    fn empty_series_rejected() {
        assert!(boxplot_data(&[("e", &[])]).is_err());
        assert!(quantile_sorted(&[1], f64::NAN).is_err());
    }
}
