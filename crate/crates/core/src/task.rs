//! The periodic task deadline model.
//!
//! A task with period `p`, relative deadline `d` and run-time budget `r`
//! meets its deadline for a measured firing latency `f` iff
//! `c = f + r <= d`, where `d <= p` is required for the task to be well formed.

use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::TimeNs;

/// One periodic real-time task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaskSpecFile")]
pub struct TaskSpec {
    pub name: String,
    #[serde(rename = "period_ns")]
    pub period: TimeNs,
    #[serde(rename = "deadline_ns")]
    pub deadline: TimeNs,
    #[serde(rename = "runtime_budget_ns")]
    pub runtime_budget: TimeNs,
}

#[derive(Deserialize)]
struct TaskSpecFile {
    name: String,
    period_ns: u64,
    #[serde(default)]
    deadline_ns: Option<u64>,
    runtime_budget_ns: u64,
}

impl TryFrom<TaskSpecFile> for TaskSpec {
    type Error = Error;

    fn try_from(raw: TaskSpecFile) -> Result<Self> {
        TaskSpec::new(
            raw.name,
            TimeNs(raw.period_ns),
            raw.deadline_ns.map(TimeNs),
            TimeNs(raw.runtime_budget_ns),
        )
    }
}

impl TaskSpec {
    /// Builds a validated task. The deadline defaults to the period.
    pub fn new(
        name: impl Into<String>,
        period: TimeNs,
        deadline: Option<TimeNs>,
        runtime_budget: TimeNs,
    ) -> Result<Self> {
        let task = TaskSpec {
            name: name.into(),
            period,
            deadline: deadline.unwrap_or(period),
            runtime_budget,
        };
        task.validate()?;
        Ok(task)
    }

    /// Checks `0 < r <= d <= p`, naming the first inequality that fails.
    pub fn validate(&self) -> Result<()> {
        if self.runtime_budget == TimeNs::ZERO {
            return Err(Error::InvalidTask("0 < runtime_budget"));
        }
        if self.runtime_budget > self.deadline {
            return Err(Error::InvalidTask("runtime_budget <= deadline"));
        }
        if self.deadline > self.period {
            return Err(Error::InvalidTask("deadline <= period"));
        }
        Ok(())
    }
}

/// Outcome of checking one task against one firing latency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibilityVerdict {
    pub task: TaskSpec,
    #[serde(rename = "firing_latency_ns")]
    pub firing_latency_used: TimeNs,
    #[serde(rename = "completion_time_ns")]
    pub completion_time: TimeNs,
    pub feasible: bool,
    /// `deadline - completion_time`; negative when the deadline is missed.
    pub margin_ns: i128,
}

/// `c = f + r`, exact.
pub fn completion_time(firing_latency: TimeNs, runtime_budget: TimeNs) -> Result<TimeNs> {
    firing_latency.checked_add(runtime_budget)
}

pub fn check_deadline(task: &TaskSpec, firing_latency: TimeNs) -> Result<FeasibilityVerdict> {
    task.validate()?;
    let completion = completion_time(firing_latency, task.runtime_budget)?;
    Ok(FeasibilityVerdict {
        task: task.clone(),
        firing_latency_used: firing_latency,
        completion_time: completion,
        feasible: completion <= task.deadline,
        margin_ns: task.deadline.signed_diff(completion),
    })
}

/// Upper bound on acceptable firing latency for a cycle: one tenth of the
/// period, rounded toward zero.
pub fn deadline_threshold(period: TimeNs) -> TimeNs {
    debug_assert!(period > TimeNs::ZERO, "period must be positive");
    TimeNs(period.as_ns() / 10)
}
