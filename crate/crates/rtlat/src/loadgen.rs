//! Background load: CPU spin, memory allocation, sync() and disk writes.
//!
//! Workers are plain `SCHED_OTHER` threads, each pinned to one CPU of the
//! requested set, round-robin per kind.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::warn;
use rtlat_core::{CpuSet, TimeNs};
use serde::{Deserialize, Serialize};

use crate::bench::{allowed_cpus, pin_current_thread, wall_clock_ns};
use crate::error::{Error, Result};

pub const DEFAULT_MEM_BYTES: u64 = 256 << 20;
pub const DEFAULT_DISK_BYTES: u64 = 64 << 20;
const DISK_CHUNK: usize = 1 << 20;
const CPU_BATCH: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub cpu_workers: u32,
    pub mem_workers: u32,
    pub mem_bytes: u64,
    pub io_workers: u32,
    pub disk_workers: u32,
    pub disk_bytes: u64,
    pub cpu_set: CpuSet,
    /// `None` runs until stopped.
    #[serde(default, rename = "duration_ns")]
    pub duration: Option<TimeNs>,
    /// Parent of the per-run scratch directory; the system temp dir if unset.
    #[serde(default)]
    pub scratch: Option<PathBuf>,
}

impl Default for LoadSpec {
    fn default() -> Self {
        LoadSpec {
            cpu_workers: 0,
            mem_workers: 0,
            mem_bytes: DEFAULT_MEM_BYTES,
            io_workers: 0,
            disk_workers: 0,
            disk_bytes: DEFAULT_DISK_BYTES,
            cpu_set: CpuSet::first_n(1),
            duration: None,
            scratch: None,
        }
    }
}

impl LoadSpec {
    /// One worker of every kind on each CPU of `cpus`.
    pub fn one_of_each(cpus: CpuSet) -> Self {
        let n = cpus.len() as u32;
        LoadSpec {
            cpu_workers: n,
            mem_workers: n,
            io_workers: n,
            disk_workers: n,
            cpu_set: cpus,
            ..LoadSpec::default()
        }
    }

    pub fn total_workers(&self) -> u32 {
        self.cpu_workers + self.mem_workers + self.io_workers + self.disk_workers
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_workers() == 0 {
            return Err(Error::config("load spec requests no workers"));
        }
        if self.cpu_set.is_empty() {
            return Err(Error::config("load cpu set is empty"));
        }
        if self.mem_workers > 0 && self.mem_bytes == 0 {
            return Err(Error::config("mem_bytes must be positive"));
        }
        if self.disk_workers > 0 && self.disk_bytes == 0 {
            return Err(Error::config("disk_bytes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerKind {
    Cpu,
    Mem,
    Io,
    Disk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub kind: WorkerKind,
    pub id: u32,
    pub cpu: u32,
    pub iterations: u64,
    /// CPUs the worker was seen running on, sampled between iterations.
    pub cpus_observed: CpuSet,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub spec: LoadSpec,
    pub workers: Vec<WorkerReport>,
    /// Busy fraction of each online CPU over the run, from `/proc/stat`.
    pub cpu_utilization: BTreeMap<u32, f64>,
    #[serde(rename = "duration_ns")]
    pub duration: TimeNs,
    pub started_at_ns: u64,
    pub stopped_at_ns: u64,
}

impl LoadReport {
    pub fn count(&self, kind: WorkerKind) -> usize {
        self.workers.iter().filter(|w| w.kind == kind).count()
    }

    pub fn iterations(&self, kind: WorkerKind) -> u64 {
        self.workers.iter().filter(|w| w.kind == kind).map(|w| w.iterations).sum()
    }
}

/// Cumulative jiffies of one CPU line of `/proc/stat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpuTimes {
    pub busy: u64,
    pub total: u64,
}

/// Per-CPU counters from `/proc/stat`. Idle and iowait count as not busy;
/// guest time is already included in user time and is skipped.
pub fn parse_proc_stat(text: &str) -> BTreeMap<u32, CpuTimes> {
    text.lines()
        .filter_map(|line| {
            let mut it = line.split_whitespace();
            let cpu = it.next()?.strip_prefix("cpu")?.parse::<u32>().ok()?;
            let v: Vec<u64> = it.take(8).filter_map(|t| t.parse().ok()).collect();
            if v.len() < 4 {
                return None;
            }
            let total: u64 = v.iter().sum();
            let idle = v[3] + v.get(4).copied().unwrap_or(0);
            Some((
                cpu,
                CpuTimes {
                    busy: total - idle,
                    total,
                },
            ))
        })
        .collect()
}

pub fn utilization(
    before: &BTreeMap<u32, CpuTimes>,
    after: &BTreeMap<u32, CpuTimes>,
) -> BTreeMap<u32, f64> {
    after
        .iter()
        .filter_map(|(cpu, a)| {
            let b = before.get(cpu)?;
            let total = a.total.saturating_sub(b.total);
            let busy = a.busy.saturating_sub(b.busy).min(total);
            let u = if total == 0 { 0.0 } else { busy as f64 / total as f64 };
            Some((*cpu, u))
        })
        .collect()
}

fn read_proc_stat() -> BTreeMap<u32, CpuTimes> {
    fs::read_to_string("/proc/stat")
        .map(|t| parse_proc_stat(&t))
        .unwrap_or_default()
}

struct Shared {
    stop: AtomicBool,
    iterations: Vec<AtomicU64>,
}

pub struct LoadHandle {
    spec: LoadSpec,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<WorkerReport>>,
    scratch: Option<PathBuf>,
    started: Instant,
    started_at_ns: u64,
    stat_before: BTreeMap<u32, CpuTimes>,
    report: Option<LoadReport>,
}

/// Starts all workers of `spec`.
pub fn start_load(spec: &LoadSpec) -> Result<LoadHandle> {
    spec.validate()?;
    let allowed = allowed_cpus()?;
    if !spec.cpu_set.is_subset(&allowed) {
        return Err(Error::config(format!(
            "load cpus {} not within allowed cpus {allowed}",
            spec.cpu_set
        )));
    }
    let scratch = if spec.disk_workers > 0 {
        Some(make_scratch(spec.scratch.as_deref())?)
    } else {
        None
    };

    let kinds: Vec<WorkerKind> = [
        (WorkerKind::Cpu, spec.cpu_workers),
        (WorkerKind::Mem, spec.mem_workers),
        (WorkerKind::Io, spec.io_workers),
        (WorkerKind::Disk, spec.disk_workers),
    ]
    .into_iter()
    .flat_map(|(k, n)| std::iter::repeat_n(k, n as usize))
    .collect();
    let shared = Arc::new(Shared {
        stop: AtomicBool::new(false),
        iterations: kinds.iter().map(|_| AtomicU64::new(0)).collect(),
    });

    let cpus: Vec<u32> = spec.cpu_set.iter().collect();
    let mut handle = LoadHandle {
        spec: spec.clone(),
        shared: shared.clone(),
        threads: Vec::with_capacity(kinds.len()),
        scratch: scratch.clone(),
        started: Instant::now(),
        started_at_ns: wall_clock_ns(),
        stat_before: read_proc_stat(),
        report: None,
    };
    let mut per_kind: BTreeMap<WorkerKind, u32> = BTreeMap::new();
    for (slot, kind) in kinds.into_iter().enumerate() {
        let id = per_kind.entry(kind).or_default();
        let cpu = cpus[*id as usize % cpus.len()];
        let w = Worker {
            kind,
            id: *id,
            cpu,
            slot,
            shared: shared.clone(),
            mem_bytes: spec.mem_bytes as usize,
            disk_bytes: spec.disk_bytes,
            scratch: scratch.clone(),
        };
        *id += 1;
        let spawned = thread::Builder::new()
            .name(format!("rtlat-load-{kind:?}-{}", w.id).to_lowercase())
            .spawn(move || w.run());
        match spawned {
            Ok(t) => handle.threads.push(t),
            Err(e) => {
                // Dropping the handle stops and joins what already runs.
                drop(handle);
                return Err(e.into());
            }
        }
    }
    Ok(handle)
}

fn make_scratch(parent: Option<&Path>) -> Result<PathBuf> {
    let parent = parent.map(Path::to_path_buf).unwrap_or_else(std::env::temp_dir);
    static SEQ: AtomicU64 = AtomicU64::new(0);
    let dir = parent.join(format!(
        "rtlat-load-{}-{}",
        std::process::id(),
        SEQ.fetch_add(1, Ordering::Relaxed)
    ));
    fs::create_dir(&dir)
        .map_err(|e| Error::config(format!("scratch directory {} not writable: {e}", parent.display())))?;
    Ok(dir)
}

impl LoadHandle {
    pub fn spec(&self) -> &LoadSpec {
        &self.spec
    }

    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    /// Sum of all iterations so far.
    pub fn progress(&self) -> u64 {
        self.shared.iterations.iter().map(|a| a.load(Ordering::Relaxed)).sum()
    }

    /// Blocks until the configured duration has passed (or `interrupted`
    /// becomes true), then stops.
    pub fn wait(&mut self, interrupted: &AtomicBool) -> Result<LoadReport> {
        let end = self.spec.duration.map(|d| self.started + Duration::from_nanos(d.as_ns()));
        loop {
            if interrupted.load(Ordering::Relaxed) {
                break;
            }
            let now = Instant::now();
            match end {
                Some(end) if now >= end => break,
                Some(end) => thread::sleep((end - now).min(Duration::from_millis(50))),
                None => thread::sleep(Duration::from_millis(50)),
            }
        }
        self.stop()
    }

    /// Stops and joins every worker, removes scratch files and reports.
    /// Calling it again returns the same report.
    pub fn stop(&mut self) -> Result<LoadReport> {
        if let Some(r) = &self.report {
            return Ok(r.clone());
        }
        self.shared.stop.store(true, Ordering::Relaxed);
        let mut workers = Vec::with_capacity(self.threads.len());
        let mut panicked = false;
        for t in self.threads.drain(..) {
            match t.join() {
                Ok(r) => workers.push(r),
                Err(_) => panicked = true,
            }
        }
        let duration = TimeNs::from_ns(self.started.elapsed().as_nanos() as u64);
        let stopped_at_ns = wall_clock_ns();
        let after = read_proc_stat();
        let cleanup = self.cleanup();
        if panicked {
            return Err(Error::config("a load worker panicked"));
        }
        cleanup?;
        let report = LoadReport {
            spec: self.spec.clone(),
            workers,
            cpu_utilization: utilization(&self.stat_before, &after),
            duration,
            started_at_ns: self.started_at_ns,
            stopped_at_ns,
        };
        self.report = Some(report.clone());
        Ok(report)
    }

    fn cleanup(&mut self) -> Result<()> {
        match self.scratch.take() {
            Some(dir) => match fs::remove_dir_all(&dir) {
                Ok(()) => Ok(()),
                Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
                Err(e) => Err(Error::io(dir, e)),
            },
            None => Ok(()),
        }
    }
}

impl Drop for LoadHandle {
    fn drop(&mut self) {
        if self.report.is_none() {
            if let Err(e) = self.stop() {
                warn!("stopping load on drop: {e}");
            }
        }
    }
}

struct Worker {
    kind: WorkerKind,
    id: u32,
    cpu: u32,
    slot: usize,
    shared: Arc<Shared>,
    mem_bytes: usize,
    disk_bytes: u64,
    scratch: Option<PathBuf>,
}

impl Worker {
    fn run(self) -> WorkerReport {
        let mut report = WorkerReport {
            kind: self.kind,
            id: self.id,
            cpu: self.cpu,
            iterations: 0,
            cpus_observed: CpuSet::new(),
            error: None,
        };
        if let Err(e) = pin_current_thread(self.cpu).and_then(|_| set_normal_priority()) {
            report.error = Some(e.to_string());
            return report;
        }
        let counter = &self.shared.iterations[self.slot];
        let mut rng = 0x9E37_79B9_7F4A_7C15u64 ^ ((self.slot as u64 + 1) << 17);
        let disk_path = self
            .scratch
            .as_ref()
            .map(|d| d.join(format!("disk-{}", self.id)));
        let chunk = if self.kind == WorkerKind::Disk {
            vec![0xA5u8; DISK_CHUNK]
        } else {
            Vec::new()
        };
        while !self.shared.stop.load(Ordering::Relaxed) {
            let step = match self.kind {
                WorkerKind::Cpu => {
                    spin(&mut rng);
                    Ok(())
                }
                WorkerKind::Mem => {
                    touch_pages(self.mem_bytes);
                    Ok(())
                }
                WorkerKind::Io => {
                    // SAFETY: sync() has no preconditions.
                    unsafe { libc::sync() };
                    Ok(())
                }
                WorkerKind::Disk => {
                    write_file(disk_path.as_deref().expect("scratch dir"), self.disk_bytes, &chunk, &self.shared.stop)
                }
            };
            if let Err(e) = step {
                report.error = Some(e.to_string());
                break;
            }
            report.iterations += 1;
            counter.store(report.iterations, Ordering::Relaxed);
            if report.iterations % 64 == 1 {
                if let Some(cpu) = current_cpu() {
                    report.cpus_observed.insert(cpu);
                }
            }
        }
        if let Some(p) = disk_path {
            let _ = fs::remove_file(p);
        }
        report
    }
}

#[inline(never)]
fn spin(state: &mut u64) {
    let mut acc = 0.0f64;
    for _ in 0..CPU_BATCH {
        *state ^= *state << 13;
        *state ^= *state >> 7;
        *state ^= *state << 17;
        acc += ((*state >> 11) as f64).sqrt();
    }
    std::hint::black_box(acc);
}

fn touch_pages(bytes: usize) {
    let page = page_size();
    let mut buf = vec![0u8; bytes];
    for i in (0..bytes).step_by(page) {
        buf[i] = 1;
    }
    std::hint::black_box(&buf);
}

fn write_file(path: &Path, bytes: u64, chunk: &[u8], stop: &AtomicBool) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    let mut left = bytes;
    while left > 0 && !stop.load(Ordering::Relaxed) {
        let n = left.min(chunk.len() as u64) as usize;
        f.write_all(&chunk[..n])?;
        left -= n as u64;
    }
    f.sync_all()?;
    drop(f);
    fs::remove_file(path)
}

fn page_size() -> usize {
    // SAFETY: sysconf has no preconditions.
    let n = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if n > 0 {
        n as usize
    } else {
        4096
    }
}

fn current_cpu() -> Option<u32> {
    // SAFETY: sched_getcpu has no preconditions.
    let c = unsafe { libc::sched_getcpu() };
    u32::try_from(c).ok()
}

/// Makes sure the calling thread is not inheriting a real-time policy.
fn set_normal_priority() -> Result<()> {
    let param = libc::sched_param { sched_priority: 0 };
    // SAFETY: param is valid; pid 0 is the calling thread.
    let rc = unsafe { libc::sched_setscheduler(0, libc::SCHED_OTHER, &param) };
    if rc != 0 {
        return Err(io::Error::last_os_error().into());
    }
    Ok(())
}
