//! Host configuration: CPU partitions through the cpuset controller, IRQ
//! affinity, scheduler load balancing, and the environment manifest.
//!
//! Every path is resolved under a [`SysRoot`] so the same code runs against
//! the live `/proc` and `/sys` or against a fixture tree in tests.

mod apply;
mod cgroup;
mod env;
mod irq;
mod plan;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub use apply::{
    apply_isolation, enter_partition, load_state, teardown, verify_config, verify_teardown, AppliedConfig,
    ConfigDiff, SavedState, UnmovableTask, RT_PARTITION, SYSTEM_PARTITION,
};
pub use cgroup::{CgroupFs, PartitionState};
pub use env::{capture_environment, CpuInfo, CpuTopology, EnvReport, Hypervisor, RtFlavor};
pub use irq::{list_irqs, parse_interrupts, read_irq_affinity, set_irq_affinity, IrqInfo, IrqMoveResult};
pub use plan::{IrqMove, IrqSelector, IsolationPlan, Scope};

/// Filesystem root under which `proc/` and `sys/` are looked up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SysRoot {
    root: PathBuf,
}

impl SysRoot {
    pub fn host() -> Self {
        SysRoot { root: "/".into() }
    }

    pub fn at(root: impl Into<PathBuf>) -> Self {
        SysRoot { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel.trim_start_matches('/'))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub(crate) fn read(&self, rel: &str) -> io::Result<String> {
        fs::read_to_string(self.path(rel))
    }

    pub(crate) fn read_trimmed(&self, rel: &str) -> Option<String> {
        self.read(rel).ok().map(|s| s.trim().to_string())
    }

    /// Number of bits the kernel uses for CPU masks (`nr_cpu_ids`).
    pub fn cpu_mask_bits(&self) -> u32 {
        self.read_trimmed("sys/devices/system/cpu/possible")
            .and_then(|s| rtlat_core::CpuSet::parse_list(&s).ok())
            .and_then(|s| rtlat_core::CpuSet::max(&s))
            .map_or(1, |m| m + 1)
    }

    pub fn online_cpus(&self) -> Option<rtlat_core::CpuSet> {
        self.read_trimmed("sys/devices/system/cpu/online")
            .and_then(|s| rtlat_core::CpuSet::parse_list(&s).ok())
    }
}
