//! Text tables, CSV/JSON exports and SVG boxplots.

use std::fmt::Write as _;
use std::io::{Read, Write};

use rtlat_core::{BoxplotData, TimeNs};
use serde::{Deserialize, Serialize};

use crate::analysis::Analysis;
use crate::error::{Error, Result};

/// One exported summary line. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub n: u64,
    pub min_ns: u64,
    pub mean_ns: f64,
    pub stddev_ns: f64,
    pub max_ns: u64,
    pub threshold_ns: u64,
    pub overshoot_count: u64,
    /// Fraction of samples above the threshold, `overshoot_count / n`.
    pub overshoot_rate: f64,
}

impl From<&Analysis> for SummaryRow {
    fn from(a: &Analysis) -> Self {
        SummaryRow {
            label: a.label.clone(),
            n: a.stats.n,
            min_ns: a.stats.min.as_ns(),
            mean_ns: a.stats.mean_ns,
            stddev_ns: a.stats.stddev_ns,
            max_ns: a.stats.max.as_ns(),
            threshold_ns: a.overshoot.threshold.as_ns(),
            overshoot_count: a.overshoot.count,
            overshoot_rate: a.overshoot.rate,
        }
    }
}

/// Splits `test/label` at the first slash.
pub fn split_label(label: &str) -> (&str, &str) {
    label.split_once('/').unwrap_or((label, "-"))
}

fn trunc_us(ns: f64) -> u64 {
    (ns / 1000.0).floor() as u64
}

/// Fixed-width table in whole microseconds (truncated), rows in input order.
pub fn emit_table(rows: &[SummaryRow]) -> String {
    let header = ["Test", "Label", "Min", "Avg", "σ", "Max"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            let (test, label) = split_label(&r.label);
            [
                test.to_string(),
                label.to_string(),
                (r.min_ns / 1000).to_string(),
                trunc_us(r.mean_ns).to_string(),
                trunc_us(r.stddev_ns).to_string(),
                (r.max_ns / 1000).to_string(),
            ]
        })
        .collect();
    let mut width: [usize; 6] = header.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cols: [&str; 6]| {
        let mut s = String::new();
        for (i, c) in cols.iter().enumerate() {
            let pad = width[i] - c.chars().count();
            if i > 0 {
                s.push_str(" | ");
            }
            if i < 2 {
                s.push_str(c);
                s.extend(std::iter::repeat_n(' ', pad));
            } else {
                s.extend(std::iter::repeat_n(' ', pad));
                s.push_str(c);
            }
        }
        s.truncate(s.trim_end().len());
        s.push('\n');
        s
    };

    let mut out = String::from("# latencies in us, truncated; σ is the population standard deviation\n");
    out.push_str(&line(header));
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&rule.join("-+-"));
    out.push('\n');
    for row in &cells {
        out.push_str(&line([&row[0], &row[1], &row[2], &row[3], &row[4], &row[5]]));
    }
    out
}

/// One line per row: samples strictly above the threshold.
pub fn emit_overshoot(analyses: &[Analysis]) -> String {
    let mut out = String::new();
    for a in analyses {
        let o = &a.overshoot;
        let _ = writeln!(
            out,
            "{}: {} of {} above {} ({}), max {}",
            a.label,
            o.count,
            o.n,
            o.threshold,
            a.overshoot_rate_percent,
            o.max_observed
        );
    }
    out
}

pub fn emit_verdicts(analyses: &[Analysis]) -> String {
    let mut out = String::new();
    for a in analyses {
        if let Some(v) = &a.verdict {
            let _ = writeln!(
                out,
                "{}: task {} f={} r={} c={} d={} -> {} (margin {} ns)",
                a.label,
                v.task.name,
                v.firing_latency_used,
                v.task.runtime_budget,
                v.completion_time,
                v.task.deadline,
                if v.feasible { "feasible" } else { "INFEASIBLE" },
                v.margin_ns
            );
        }
    }
    out
}

pub fn write_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn emit_json(analyses: &[Analysis]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(analyses)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSpec {
    pub title: String,
    /// Dashed horizontal lines, e.g. the overshoot thresholds.
    pub reference_lines: Vec<TimeNs>,
}

impl ReportSpec {
    pub fn validate(&self) -> Result<()> {
        if self.reference_lines.contains(&TimeNs::ZERO) {
            return Err(Error::config("reference lines must be positive"));
        }
        Ok(())
    }
}

/// Decade-aligned log10 mapping from nanoseconds to SVG y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogScale {
    pub lo_exp: i32,
    pub hi_exp: i32,
    pub top: f64,
    pub bottom: f64,
}

impl LogScale {
    /// Smallest decade range covering all positive `values`.
    pub fn fit(values: impl IntoIterator<Item = f64>, top: f64, bottom: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for v in values.into_iter().filter(|v| *v > 0.0) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            lo = 1.0;
            hi = 1.0;
        }
        let lo_exp = lo.log10().floor() as i32;
        let hi_exp = (hi.log10().ceil() as i32).max(lo_exp + 1);
        LogScale {
            lo_exp,
            hi_exp,
            top,
            bottom,
        }
    }

    /// Values at or below the lowest decade sit on the bottom edge.
    pub fn y(&self, ns: f64) -> f64 {
        let lo = self.lo_exp as f64;
        let e = if ns > 0.0 { ns.log10().max(lo) } else { lo };
        let frac = (e - lo) / (self.hi_exp - self.lo_exp) as f64;
        self.bottom - frac * (self.bottom - self.top)
    }
}

const LEFT: f64 = 90.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 80.0;
const HEIGHT: f64 = 460.0;
const SLOT: f64 = 110.0;
const HALF_BOX: f64 = 28.0;
pub const MEAN_COLOR: &str = "#1f3fbf";

/// Plot area edges for `series` boxes: (left, right, top, bottom).
pub fn plot_area(series: usize) -> (f64, f64, f64, f64) {
    (LEFT, LEFT + SLOT * series as f64, TOP, HEIGHT - BOTTOM)
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Boxplots on a log-scale latency axis, mean marked in blue, outlier
/// counts and maxima annotated above each box, one dashed line per
/// reference value.
pub fn emit_boxplot_svg(data: &[BoxplotData], spec: &ReportSpec) -> Result<String> {
    if data.is_empty() {
        return Err(Error::config("boxplot needs at least one series"));
    }
    spec.validate()?;
    let (left, right, top, bottom) = plot_area(data.len());
    let width = right + RIGHT;
    let scale = LogScale::fit(
        data.iter()
            .flat_map(|b| [b.min_ns as f64, b.max_ns as f64, b.whisker_low_ns, b.mean_ns])
            .chain(spec.reference_lines.iter().map(|t| t.as_ns() as f64)),
        top,
        bottom,
    );

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{HEIGHT:.0}" viewBox="0 0 {width:.0} {HEIGHT:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(w, "<title>{}</title>", esc(&spec.title));
    let _ = writeln!(w, r#"<rect x="0" y="0" width="{width:.0}" height="{HEIGHT:.0}" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        esc(&spec.title)
    );

    let _ = writeln!(w, r#"<g class="axis">"#);
    for e in scale.lo_exp..=scale.hi_exp {
        let v = 10f64.powi(e);
        let y = scale.y(v);
        let _ = writeln!(
            w,
            r##"<line x1="{left:.2}" y1="{y:.2}" x2="{right:.2}" y2="{y:.2}" stroke="#dddddd"/>"##
        );
        let label = if e >= 0 {
            TimeNs(10u64.pow(e as u32)).to_string()
        } else {
            format!("1e{e}ns")
        };
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        w,
        r#"<line x1="{left:.2}" y1="{top:.2}" x2="{left:.2}" y2="{bottom:.2}" stroke="black"/>"#
    );
    let _ = writeln!(
        w,
        r#"<line x1="{left:.2}" y1="{bottom:.2}" x2="{right:.2}" y2="{bottom:.2}" stroke="black"/>"#
    );
    let _ = writeln!(
        w,
        r#"<text transform="translate(18 {:.2}) rotate(-90)" text-anchor="middle">latency (log scale)</text>"#,
        (top + bottom) / 2.0
    );
    let _ = writeln!(w, "</g>");

    for (i, b) in data.iter().enumerate() {
        let cx = left + SLOT * (i as f64 + 0.5);
        let (x0, x1) = (cx - HALF_BOX, cx + HALF_BOX);
        let yq1 = scale.y(b.q1_ns);
        let yq3 = scale.y(b.q3_ns);
        let ymed = scale.y(b.median_ns);
        let ylo = scale.y(b.whisker_low_ns);
        let yhi = scale.y(b.whisker_high_ns);
        let _ = writeln!(w, r#"<g class="series" data-label="{}">"#, esc(&b.label));
        for (ya, yb) in [(ylo, yq1), (yq3, yhi)] {
            let _ = writeln!(
                w,
                r#"<line class="whisker" x1="{cx:.2}" y1="{ya:.2}" x2="{cx:.2}" y2="{yb:.2}" stroke="black"/>"#
            );
        }
        for y in [ylo, yhi] {
            let _ = writeln!(
                w,
                r#"<line class="cap" x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/>"#,
                cx - HALF_BOX / 2.0,
                cx + HALF_BOX / 2.0
            );
        }
        let _ = writeln!(
            w,
            r##"<rect class="box" x="{x0:.2}" y="{yq3:.2}" width="{:.2}" height="{:.2}" fill="#f2f2f2" stroke="black"/>"##,
            x1 - x0,
            yq1 - yq3
        );
        let _ = writeln!(
            w,
            r#"<line class="median" x1="{x0:.2}" y1="{ymed:.2}" x2="{x1:.2}" y2="{ymed:.2}" stroke="black" stroke-width="2"/>"#
        );
        let _ = writeln!(
            w,
            r#"<circle class="mean" cx="{cx:.2}" cy="{:.2}" r="4" fill="{MEAN_COLOR}"/>"#,
            scale.y(b.mean_ns)
        );
        let ymax = scale.y(b.max_ns as f64);
        if b.outliers > 0 {
            let _ = writeln!(
                w,
                r#"<path class="max" d="M {:.2} {ymax:.2} L {:.2} {ymax:.2}" stroke="black"/>"#,
                cx - 4.0,
                cx + 4.0
            );
        }
        let _ = writeln!(
            w,
            r#"<text class="outliers" x="{cx:.2}" y="{:.2}" text-anchor="middle">{} out, max {}</text>"#,
            ymax.min(yhi) - 8.0,
            b.outliers,
            TimeNs(b.max_ns)
        );
        let (test, label) = split_label(&b.label);
        let _ = writeln!(
            w,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle"><tspan x="{cx:.2}">{}</tspan><tspan x="{cx:.2}" dy="14">{}</tspan></text>"#,
            bottom + 18.0,
            esc(test),
            esc(label)
        );
        let _ = writeln!(w, "</g>");
    }

    for r in &spec.reference_lines {
        let y = scale.y(r.as_ns() as f64);
        let _ = writeln!(
            w,
            r##"<line class="reference" x1="{left:.2}" y1="{y:.2}" x2="{right:.2}" y2="{y:.2}" stroke="#c0392b" stroke-dasharray="6,4"/>"##
        );
        let _ = writeln!(
            w,
            r##"<text x="{:.2}" y="{:.2}" fill="#c0392b">{r}</text>"##,
            right + 4.0,
            y + 4.0
        );
    }
    let _ = writeln!(w, "</svg>");
    Ok(s)
}
