//! Streaming analysis of sample files.
//!
//! Files sharing a series label (one per worker, or per repetition) are
//! folded into one row. Min/mean/σ/max and overshoot need one pass and
//! bounded memory; quantile statistics and boxplots keep the latencies.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rtlat_core::boxplot::box_from_sorted;
use rtlat_core::{
    check_deadline, deadline_threshold, quantile_sorted, BoxplotData, FeasibilityVerdict,
    OvershootCounter, OvershootReport, Statistic, SummaryStats, Summarizer, TaskSpec, TimeNs,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplefile::SampleReader;

const CHUNK: usize = 1 << 16;

/// Overshoot threshold: a fixed duration, or a tenth of the period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Threshold {
    #[default]
    Auto,
    Fixed(TimeNs),
}

impl FromStr for Threshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(Threshold::Auto),
            other => other
                .parse()
                .map(Threshold::Fixed)
                .map_err(|_| Error::config(format!("bad threshold {other:?}"))),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Auto => f.write_str("auto"),
            Threshold::Fixed(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub threshold: Threshold,
    pub task: Option<TaskSpec>,
    pub statistic: Statistic,
    pub allow_degraded: bool,
    /// Also compute boxplot data (keeps all latencies of a group in memory).
    pub boxplot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub label: String,
    pub files: Vec<PathBuf>,
    pub degraded: bool,
    pub plan_checksum: Option<String>,
    pub stats: SummaryStats,
    pub overshoot: OvershootReport,
    /// `overshoot.rate` as a percentage with five significant digits.
    pub overshoot_rate_percent: String,
    pub verdict: Option<FeasibilityVerdict>,
    pub boxplot: Option<BoxplotData>,
}

/// Groups `paths` by series label, keeping first-appearance order.
pub fn group_by_label(paths: &[PathBuf]) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let mut groups: Vec<(String, Vec<PathBuf>)> = Vec::new();
    for p in paths {
        let meta = crate::samplefile::read_meta(p)?;
        match groups.iter_mut().find(|(l, _)| *l == meta.label) {
            Some((_, files)) => files.push(p.clone()),
            None => groups.push((meta.label, vec![p.clone()])),
        }
    }
    Ok(groups)
}

/// Analyzes each label group of `paths`.
pub fn analyze_files(paths: &[PathBuf], opts: &AnalyzeOptions) -> Result<Vec<Analysis>> {
    if paths.is_empty() {
        return Err(Error::config("no input files"));
    }
    group_by_label(paths)?
        .into_iter()
        .map(|(label, files)| analyze_group(&label, &files, opts))
        .collect()
}

/// Folds the files of one label into a single analysis. All files must
/// share the same isolation plan and period.
pub fn analyze_group(label: &str, files: &[PathBuf], opts: &AnalyzeOptions) -> Result<Analysis> {
    let first = crate::samplefile::read_meta(files.first().ok_or(rtlat_core::Error::EmptyInput)?)?;
    let interval = first.config.interval;
    let threshold = match opts.threshold {
        Threshold::Fixed(t) => t,
        Threshold::Auto => deadline_threshold(opts.task.as_ref().map_or(interval, |t| t.period)),
    };
    let keep = opts.boxplot || matches!(opts.statistic, Statistic::Quantile(_));

    let mut summ = Summarizer::new();
    let mut over = OvershootCounter::new(threshold);
    let mut all: Vec<u64> = Vec::new();
    let mut degraded = false;
    for path in files {
        let reader = SampleReader::open(path)?;
        let meta = reader.meta().clone();
        if meta.plan_checksum != first.plan_checksum {
            return Err(mixed(path, "isolation plan", &first.plan_checksum, &meta.plan_checksum));
        }
        if meta.config.interval != interval {
            return Err(mixed(path, "interval", &Some(interval), &Some(meta.config.interval)));
        }
        degraded |= meta.degraded;
        if keep {
            all.reserve(reader.len() as usize);
        }
        read_all(reader, path, |chunk| {
            for s in chunk {
                summ.push(s.latency);
                over.push(s.latency);
                if keep {
                    all.push(s.latency.as_ns());
                }
            }
        })?;
    }
    let stats = summ.finish()?;
    let overshoot = over.finish()?;
    if keep {
        all.sort_unstable();
    }

    let verdict = match &opts.task {
        Some(task) => {
            if degraded && !opts.allow_degraded {
                return Err(rtlat_core::Error::DegradedSeries.into());
            }
            let f = match opts.statistic {
                Statistic::Max => stats.max,
                Statistic::Mean => TimeNs(stats.mean_ns.ceil() as u64),
                Statistic::Quantile(q) => TimeNs(quantile_sorted(&all, q)?.ceil() as u64),
            };
            Some(check_deadline(task, f)?)
        }
        None => None,
    };
    let boxplot = if opts.boxplot {
        Some(box_from_sorted(label, &all)?)
    } else {
        None
    };
    Ok(Analysis {
        label: label.to_string(),
        files: files.to_vec(),
        degraded,
        plan_checksum: first.plan_checksum,
        overshoot_rate_percent: overshoot.rate_percent(),
        stats,
        overshoot,
        verdict,
        boxplot,
    })
}

fn read_all(
    mut reader: SampleReader,
    path: &Path,
    mut f: impl FnMut(&[rtlat_core::LatencySample]),
) -> Result<()> {
    let mut buf = Vec::with_capacity(CHUNK);
    loop {
        buf.clear();
        let n = reader.read_chunk(&mut buf, CHUNK).map_err(|e| match e {
            Error::Corrupt { .. } => e,
            other => Error::Corrupt {
                path: path.to_path_buf(),
                reason: other.to_string(),
            },
        })?;
        if n == 0 {
            return Ok(());
        }
        f(&buf);
    }
}

fn mixed<T: fmt::Debug>(path: &Path, what: &str, a: &T, b: &T) -> Error {
    Error::config(format!(
        "{}: {what} {b:?} differs from {a:?} in the same label group",
        path.display()
    ))
}

pub fn load_task(path: &Path) -> Result<TaskSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
