//! Cyclic firing-latency measurement.
//!
//! One worker thread per measured CPU runs the core loop from
//! [`rtlat_core::run_worker`] against either the monotonic clock or a
//! simulated clock replaying a delay trace.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::mem;
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{debug, warn};
use rtlat_core::{run_worker, Clock, CpuSet, LatencySample, SimulatedClock, TimeNs};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{ClockOrigin, SampleSeries, SeriesMeta, TOOLKIT_VERSION};
use crate::sysconfig::EnvReport;

pub const DEFAULT_PRIORITY: i32 = 98;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workers {
    /// One worker for every CPU of the set.
    PerCpu,
    /// A fixed number of workers assigned round-robin over the set.
    Count(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockKind {
    Monotonic,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    #[serde(rename = "interval_ns")]
    pub interval: TimeNs,
    pub loops: u64,
    pub workers: Workers,
    pub cpu_set: CpuSet,
    /// SCHED_FIFO priority, 1..=99.
    pub priority: i32,
    pub clock: ClockKind,
    #[serde(rename = "distribute_offset_ns")]
    pub distribute_offset: TimeNs,
    /// Leading samples measured and thrown away.
    pub warmup: u64,
    /// Fail instead of degrading when real-time scheduling is refused.
    pub strict: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            interval: TimeNs::from_ms(1),
            loops: 10_000_000,
            workers: Workers::PerCpu,
            cpu_set: CpuSet::first_n(1),
            priority: DEFAULT_PRIORITY,
            clock: ClockKind::Monotonic,
            distribute_offset: TimeNs::ZERO,
            warmup: 0,
            strict: false,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval == TimeNs::ZERO {
            return Err(Error::config("interval must be positive"));
        }
        if self.cpu_set.is_empty() {
            return Err(Error::config("cpu set is empty"));
        }
        if self.workers == Workers::Count(0) {
            return Err(Error::config("at least one worker is required"));
        }
        if !(1..=99).contains(&self.priority) {
            return Err(Error::config(format!(
                "priority {} outside the real-time range 1..=99",
                self.priority
            )));
        }
        Ok(())
    }

    /// CPU of every worker, in worker order.
    pub fn worker_cpus(&self) -> Vec<u32> {
        let cpus: Vec<u32> = self.cpu_set.iter().collect();
        match self.workers {
            Workers::PerCpu => cpus,
            Workers::Count(n) => (0..n as usize).map(|i| cpus[i % cpus.len()]).collect(),
        }
    }
}

/// Provenance attached to every series of a run.
#[derive(Debug, Clone, Default)]
pub struct RunContext {
    pub label: String,
    pub env: Option<EnvReport>,
    pub plan_checksum: Option<String>,
    pub experiment_hash: Option<String>,
    /// Control file each live worker writes its thread id to before pinning,
    /// placing it into the RT partition while the rest of the process stays
    /// in the system partition.
    pub join_cgroup: Option<PathBuf>,
}

/// Runs all workers and returns one series per worker.
///
/// `trace` supplies the wake-up delays for [`ClockKind::Simulated`] and is
/// ignored otherwise.
pub fn run_cyclic(
    config: &BenchConfig,
    trace: Option<&[TimeNs]>,
    ctx: &RunContext,
) -> Result<Vec<SampleSeries>> {
    config.validate()?;
    let cpus = config.worker_cpus();
    if config.clock == ClockKind::Monotonic && ctx.join_cgroup.is_none() {
        let allowed = allowed_cpus()?;
        if !config.cpu_set.is_subset(&allowed) {
            return Err(Error::config(format!(
                "cpus {} not in the allowed set {}",
                config.cpu_set.difference(&allowed),
                allowed
            )));
        }
    }
    let loops = usize::try_from(config.loops)
        .map_err(|_| Error::config("loop count exceeds address space"))?;

    let outputs: Vec<Result<WorkerOutput>> = thread::scope(|scope| {
        let handles: Vec<_> = cpus
            .iter()
            .enumerate()
            .map(|(id, &cpu)| {
                let trace = trace.unwrap_or(&[]).to_vec();
                thread::Builder::new()
                    .name(format!("rtlat-w{id}"))
                    .spawn_scoped(scope, move || match config.clock {
                        ClockKind::Monotonic => {
                            live_worker(id as u32, cpu, config, loops, ctx.join_cgroup.as_deref())
                        }
                        ClockKind::Simulated => sim_worker(id as u32, config, loops, trace),
                    })
                    .expect("spawn measurement worker")
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::config("worker panicked"))))
            .collect()
    });

    outputs
        .into_iter()
        .zip(cpus)
        .enumerate()
        .map(|(id, (out, cpu))| {
            let out = out?;
            let n = out.samples.len() as u64;
            Ok(SampleSeries {
                meta: SeriesMeta {
                    label: ctx.label.clone(),
                    worker_id: id as u32,
                    cpu,
                    config: config.clone(),
                    origin: out.origin,
                    first_deadline_ns: out.first_deadline.as_ns(),
                    started_at_ns: out.started_at,
                    ended_at_ns: out.ended_at,
                    degraded: out.degraded.is_some(),
                    degraded_reason: out.degraded,
                    env: ctx.env.clone(),
                    plan_checksum: ctx.plan_checksum.clone(),
                    experiment_hash: ctx.experiment_hash.clone(),
                    toolkit_version: TOOLKIT_VERSION.to_string(),
                    n,
                },
                samples: out.samples,
            })
        })
        .collect()
}

struct WorkerOutput {
    samples: Vec<LatencySample>,
    origin: ClockOrigin,
    first_deadline: TimeNs,
    started_at: u64,
    ended_at: u64,
    degraded: Option<String>,
}

/// Allocates and touches the whole sample buffer so the measurement loop
/// neither allocates nor page-faults on first write.
pub fn prefaulted_buffer(loops: usize) -> Vec<LatencySample> {
    let mut buf: Vec<LatencySample> = Vec::with_capacity(loops);
    for slot in buf.spare_capacity_mut() {
        slot.write(LatencySample {
            seq: 0,
            latency: TimeNs::ZERO,
        });
    }
    buf
}

fn sim_worker(id: u32, config: &BenchConfig, loops: usize, trace: Vec<TimeNs>) -> Result<WorkerOutput> {
    let mut buf = prefaulted_buffer(loops);
    let mut clock = SimulatedClock::new(TimeNs::ZERO, trace);
    let offset = config.distribute_offset.checked_mul(id as u64)?;
    let first = config.interval.checked_add(offset)?;
    let timing = run_worker(&mut clock, first, config.interval, config.warmup, config.loops, &mut buf)?;
    Ok(WorkerOutput {
        samples: buf,
        origin: ClockOrigin::default(),
        first_deadline: first,
        started_at: 0,
        ended_at: timing.finished_at.as_ns(),
        degraded: None,
    })
}

fn live_worker(
    id: u32,
    cpu: u32,
    config: &BenchConfig,
    loops: usize,
    join_cgroup: Option<&Path>,
) -> Result<WorkerOutput> {
    let mut buf = prefaulted_buffer(loops);
    if let Some(file) = join_cgroup {
        // SAFETY: gettid has no preconditions.
        let tid = unsafe { libc::gettid() };
        fs::OpenOptions::new()
            .append(true)
            .open(file)
            .and_then(|mut f| writeln!(f, "{tid}"))
            .map_err(|e| Error::io(file, e))?;
    }
    pin_current_thread(cpu)?;
    let degraded = match set_fifo_priority(config.priority) {
        Ok(()) => None,
        Err(e) if config.strict => {
            return Err(Error::PrivilegeDenied(format!(
                "SCHED_FIFO priority {}: {e}",
                config.priority
            )))
        }
        Err(e) => {
            warn!("worker {id}: running without real-time priority ({e})");
            Some(format!("SCHED_FIFO priority {} refused: {e}", config.priority))
        }
    };

    let mut clock = MonotonicClock;
    let started_at = wall_clock_ns();
    let origin = ClockOrigin {
        wall_ns: started_at,
        clock_ns: clock.now()?.as_ns(),
    };
    let offset = config.distribute_offset.checked_mul(id as u64)?;
    let first = TimeNs(origin.clock_ns)
        .checked_add(config.interval)?
        .checked_add(offset)?;
    let timing = run_worker(&mut clock, first, config.interval, config.warmup, config.loops, &mut buf)?;
    let ended_at = origin.to_wall(timing.finished_at).max(started_at);
    debug!("worker {id} on cpu {cpu}: {} iterations", timing.iterations);
    Ok(WorkerOutput {
        samples: buf,
        origin,
        first_deadline: first,
        started_at,
        ended_at,
        degraded,
    })
}

pub fn wall_clock_ns() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

/// `CLOCK_MONOTONIC` with absolute-deadline sleeps.
#[derive(Debug, Default, Clone, Copy)]
pub struct MonotonicClock;

impl Clock for MonotonicClock {
    #[inline]
    fn now(&mut self) -> rtlat_core::Result<TimeNs> {
        let mut ts: libc::timespec = unsafe { mem::zeroed() };
        // SAFETY: ts is a valid, writable timespec.
        let rc = unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
        if rc != 0 {
            return Err(rtlat_core::Error::Clock(errno()));
        }
        Ok(TimeNs(ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64))
    }

    #[inline]
    fn sleep_until(&mut self, deadline: TimeNs) -> rtlat_core::Result<()> {
        let ts = libc::timespec {
            tv_sec: (deadline.as_ns() / 1_000_000_000) as libc::time_t,
            tv_nsec: (deadline.as_ns() % 1_000_000_000) as libc::c_long,
        };
        loop {
            // SAFETY: ts is a valid timespec; a null remainder is allowed for
            // TIMER_ABSTIME sleeps.
            let rc = unsafe {
                libc::clock_nanosleep(
                    libc::CLOCK_MONOTONIC,
                    libc::TIMER_ABSTIME,
                    &ts,
                    std::ptr::null_mut(),
                )
            };
            match rc {
                0 => return Ok(()),
                libc::EINTR => continue,
                other => return Err(rtlat_core::Error::Clock(other)),
            }
        }
    }
}

fn errno() -> i32 {
    io::Error::last_os_error().raw_os_error().unwrap_or(0)
}

/// CPUs the calling thread may run on.
pub fn allowed_cpus() -> Result<CpuSet> {
    // SAFETY: cpu_set_t is plain data; sched_getaffinity fills it.
    let mut set: libc::cpu_set_t = unsafe { mem::zeroed() };
    let rc = unsafe { libc::sched_getaffinity(0, mem::size_of::<libc::cpu_set_t>(), &mut set) };
    if rc != 0 {
        return Err(io::Error::last_os_error().into());
    }
    Ok((0..libc::CPU_SETSIZE as u32)
        .filter(|cpu| unsafe { libc::CPU_ISSET(*cpu as usize, &set) })
        .collect())
}

/// Restricts the calling thread to `cpus`.
pub fn pin_current_thread_to(cpus: &CpuSet) -> Result<()> {
    // SAFETY: cpu_set_t is plain data and CPU_SET indexes within it.
    let mut set: libc::cpu_set_t = unsafe { mem::zeroed() };
    for cpu in cpus.iter() {
        if cpu as usize >= libc::CPU_SETSIZE as usize {
            return Err(Error::config(format!("cpu {cpu} out of range")));
        }
        unsafe { libc::CPU_SET(cpu as usize, &mut set) };
    }
    let rc = unsafe { libc::sched_setaffinity(0, mem::size_of::<libc::cpu_set_t>(), &set) };
    if rc != 0 {
        let err = io::Error::last_os_error();
        return Err(Error::config(format!("cannot pin thread to cpus {cpus}: {err}")));
    }
    Ok(())
}

pub fn pin_current_thread(cpu: u32) -> Result<()> {
    pin_current_thread_to(&[cpu].into_iter().collect())
}

/// Switches the calling thread to SCHED_FIFO at `priority`.
pub fn set_fifo_priority(priority: i32) -> io::Result<()> {
    let param = libc::sched_param {
        sched_priority: priority,
    };
    // SAFETY: param is a valid sched_param; pid 0 is the calling thread.
    let rc = unsafe { libc::sched_setscheduler(0, libc::SCHED_FIFO, &param) };
    if rc != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}

/// Parses a delay trace: one duration per line (`10us`, `2500`, ...), blank
/// lines and `#` comments ignored.
pub fn parse_trace(text: &str) -> Result<Vec<TimeNs>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse::<TimeNs>()
                .map_err(|e| Error::config(format!("trace line {}: {e}", i + 1)))
        })
        .collect()
}
