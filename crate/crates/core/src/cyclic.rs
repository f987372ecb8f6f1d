//! The cyclic measurement loop.
//!
//! A worker sleeps until an absolute deadline, reads the clock on wake-up and
//! records `actual - scheduled` as the firing latency. Deadlines advance by
//! absolute increments of the interval so that wake-up jitter never shifts the
//! schedule.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::TimeNs;

/// One firing-latency observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySample {
    pub seq: u64,
    #[serde(rename = "latency_ns")]
    pub latency: TimeNs,
}

/// Time source driving a worker. Implementations must not allocate, lock or
/// perform I/O other than the clock syscalls themselves.
pub trait Clock {
    fn now(&mut self) -> Result<TimeNs>;

    /// Blocks until `deadline` has passed on this clock.
    fn sleep_until(&mut self, deadline: TimeNs) -> Result<()>;
}

impl<C: Clock + ?Sized> Clock for &mut C {
    fn now(&mut self) -> Result<TimeNs> {
        (**self).now()
    }

    fn sleep_until(&mut self, deadline: TimeNs) -> Result<()> {
        (**self).sleep_until(deadline)
    }
}

/// Next absolute deadline: `prev + interval`, exact.
#[inline]
pub fn schedule_next(prev_deadline: TimeNs, interval: TimeNs) -> Result<TimeNs> {
    prev_deadline.checked_add(interval)
}

/// Where a worker's schedule started and ended, on its own clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerTiming {
    pub first_deadline: TimeNs,
    /// Deadline that would have followed the last iteration.
    pub next_deadline: TimeNs,
    pub iterations: u64,
    /// Clock reading after the final wake-up, or `first_deadline` when no
    /// iteration ran.
    pub finished_at: TimeNs,
}

/// Runs `warmup + loops` cycles and appends the last `loops` samples to `buf`,
/// numbered `0..loops`.
///
/// `buf` must already have room for `loops` more samples; the loop itself
/// never grows it.
pub fn run_worker<C: Clock>(
    clock: &mut C,
    first_deadline: TimeNs,
    interval: TimeNs,
    warmup: u64,
    loops: u64,
    buf: &mut Vec<LatencySample>,
) -> Result<WorkerTiming> {
    if interval == TimeNs::ZERO {
        return Err(Error::InvalidArgument("interval must be positive"));
    }
    let spare = (buf.capacity() - buf.len()) as u64;
    if spare < loops {
        return Err(Error::InvalidArgument("sample buffer not pre-allocated"));
    }
    let total = warmup
        .checked_add(loops)
        .ok_or(Error::Overflow { op: "add" })?;

    let mut deadline = first_deadline;
    let mut finished_at = first_deadline;
    for i in 0..total {
        clock.sleep_until(deadline)?;
        let woke = clock.now()?;
        finished_at = woke;
        if i >= warmup {
            buf.push(LatencySample {
                seq: i - warmup,
                latency: woke.saturating_sub(deadline),
            });
        }
        deadline = schedule_next(deadline, interval)?;
    }

    Ok(WorkerTiming {
        first_deadline,
        next_deadline: deadline,
        iterations: total,
        finished_at,
    })
}

/// A deterministic clock that replays a trace of wake-up delays.
///
/// Each `sleep_until(d)` advances the clock to `max(now, d) + delay[i]`,
/// cycling through the trace. An empty trace means zero delay.
#[derive(Debug, Clone)]
pub struct SimulatedClock {
    now: TimeNs,
    delays: Vec<TimeNs>,
    next: usize,
}

impl SimulatedClock {
    pub fn new(start: TimeNs, delays: Vec<TimeNs>) -> Self {
        SimulatedClock {
            now: start,
            delays,
            next: 0,
        }
    }

    pub fn wakeups(&self) -> usize {
        self.next
    }
}

impl Clock for SimulatedClock {
    fn now(&mut self) -> Result<TimeNs> {
        Ok(self.now)
    }

    fn sleep_until(&mut self, deadline: TimeNs) -> Result<()> {
        let delay = if self.delays.is_empty() {
            TimeNs::ZERO
        } else {
            self.delays[self.next % self.delays.len()]
        };
        self.next += 1;
        self.now = self.now.max(deadline).checked_add(delay)?;
        Ok(())
    }
}
