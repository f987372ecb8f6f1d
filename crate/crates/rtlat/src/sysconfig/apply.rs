use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rtlat_core::CpuSet;
use serde::{Deserialize, Serialize};

use super::cgroup::{CgroupFs, PartitionState};
use super::irq::{read_irq_affinity, set_irq_affinity, write_irq_affinity, IrqMoveResult};
use super::plan::IsolationPlan;
use super::SysRoot;
use crate::error::{Error, Result};

pub const RT_PARTITION: &str = "rtlat-rt";
pub const SYSTEM_PARTITION: &str = "rtlat-sys";

const STATE_VERSION: u32 = 1;

/// Snapshot taken before the first mutation, used to roll back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SavedState {
    pub version: u32,
    pub plan: IsolationPlan,
    pub plan_checksum: String,
    pub backend: String,
    pub root_load_balance: Option<bool>,
    /// Raw `smp_affinity` contents before any IRQ was touched.
    pub irq_masks: BTreeMap<u32, String>,
    /// IRQs whose affinity could not be rewritten during apply.
    #[serde(default)]
    pub immovable_irqs: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnmovableTask {
    pub pid: u32,
    pub comm: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedConfig {
    pub plan_checksum: String,
    pub backend: String,
    pub rt_partition: PartitionState,
    pub system_partition: PartitionState,
    pub irq_results: Vec<IrqMoveResult>,
    pub unmovable_tasks: Vec<UnmovableTask>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigDiff {
    pub field: String,
    pub expected: String,
    pub actual: String,
}

impl ConfigDiff {
    fn new(field: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        ConfigDiff {
            field: field.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

fn privileged(e: Error) -> Error {
    match e {
        Error::Io { path, source } if source.kind() == io::ErrorKind::PermissionDenied => {
            Error::PrivilegeDenied(format!("{}: {source}", path.display()))
        }
        other => other,
    }
}

pub fn load_state(path: &Path) -> Result<Option<SavedState>> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn store_state(path: &Path, state: &SavedState) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, serde_json::to_vec_pretty(state)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Creates the RT and system partitions, moves every movable task into the
/// system partition, sets load balancing and IRQ affinity per `plan`.
///
/// The pre-apply state is written to `state_path` before anything changes.
/// Re-applying keeps the original snapshot so teardown still returns to the
/// pristine system.
pub fn apply_isolation(root: &SysRoot, plan: &IsolationPlan, state_path: &Path) -> Result<AppliedConfig> {
    plan.validate(root.online_cpus().as_ref())?;
    let cg = CgroupFs::probe(root)?;
    let moves = plan.resolve_irq_moves(root)?;

    let mut state = match load_state(state_path)? {
        Some(prev) => prev,
        None => SavedState {
            version: STATE_VERSION,
            plan: plan.clone(),
            plan_checksum: plan.checksum(),
            backend: cg.name().into(),
            root_load_balance: cg.root_load_balance(),
            irq_masks: BTreeMap::new(),
            immovable_irqs: Vec::new(),
        },
    };
    for (irq, _) in &moves {
        if !state.irq_masks.contains_key(irq) {
            if let Ok(mask) = read_irq_affinity(root, *irq) {
                state.irq_masks.insert(*irq, mask);
            }
        }
    }
    state.plan = plan.clone();
    state.plan_checksum = plan.checksum();
    store_state(state_path, &state)?;

    // Child cpusets only form their own scheduling domains once the root
    // stops balancing across everything.
    cg.set_root_load_balance(false).map_err(privileged)?;
    cg.create_partition(SYSTEM_PARTITION, &plan.system_cpus, false, true)
        .map_err(privileged)?;
    cg.create_partition(RT_PARTITION, &plan.rt_cpus, true, plan.load_balancer_on_rt)
        .map_err(privileged)?;

    let mut unmovable_tasks = Vec::new();
    for pid in cg.tasks(None) {
        if let Err(e) = cg.move_task(pid, Some(SYSTEM_PARTITION)) {
            if e.kind() == io::ErrorKind::PermissionDenied {
                return Err(Error::PrivilegeDenied(format!("moving task {pid}: {e}")));
            }
            // Exited in the meantime.
            if e.raw_os_error() == Some(libc::ESRCH) {
                continue;
            }
            unmovable_tasks.push(UnmovableTask {
                pid,
                comm: root.read_trimmed(&format!("proc/{pid}/comm")),
                error: e.to_string(),
            });
        }
    }

    let irq_results = set_irq_affinity(root, &moves);
    state.immovable_irqs = irq_results.iter().filter(|r| !r.ok).map(|r| r.irq).collect();
    store_state(state_path, &state)?;

    let read = |name: &str| {
        cg.read_partition(name)
            .ok_or_else(|| Error::config(format!("partition {name} missing after apply")))
    };
    Ok(AppliedConfig {
        plan_checksum: state.plan_checksum.clone(),
        backend: cg.name().into(),
        rt_partition: read(RT_PARTITION)?,
        system_partition: read(SYSTEM_PARTITION)?,
        irq_results,
        unmovable_tasks,
    })
}

/// Field-level comparison of the live system against `plan`. Read-only.
/// IRQs recorded as immovable in `state` are not reported.
pub fn verify_config(root: &SysRoot, plan: &IsolationPlan, state: Option<&SavedState>) -> Vec<ConfigDiff> {
    let mut diffs = Vec::new();
    let cg = match CgroupFs::probe(root) {
        Ok(cg) => cg,
        Err(e) => {
            diffs.push(ConfigDiff::new("cgroup", "cpuset controller", e));
            return diffs;
        }
    };
    match state {
        Some(s) if s.plan_checksum != plan.checksum() => {
            diffs.push(ConfigDiff::new("plan_checksum", plan.checksum(), &s.plan_checksum))
        }
        None => diffs.push(ConfigDiff::new("plan_checksum", plan.checksum(), "none")),
        _ => {}
    }
    if cg.root_load_balance() == Some(true) {
        diffs.push(ConfigDiff::new("root.load_balance", false, true));
    }

    let expected = [
        (RT_PARTITION, "rt_partition", &plan.rt_cpus, true, plan.load_balancer_on_rt),
        (SYSTEM_PARTITION, "system_partition", &plan.system_cpus, false, true),
    ];
    for (name, field, cpus, exclusive, lb) in expected {
        let Some(live) = cg.read_partition(name) else {
            diffs.push(ConfigDiff::new(field, "present", "absent"));
            continue;
        };
        if &live.cpus != cpus {
            diffs.push(ConfigDiff::new(format!("{field}.cpus"), cpus, &live.cpus));
        }
        if live.exclusive != exclusive {
            diffs.push(ConfigDiff::new(format!("{field}.exclusive"), exclusive, live.exclusive));
        }
        if live.load_balance != lb {
            diffs.push(ConfigDiff::new(format!("{field}.load_balance"), lb, live.load_balance));
        }
    }

    let immovable: &[u32] = state.map_or(&[], |s| &s.immovable_irqs);
    match plan.resolve_irq_moves(root) {
        Ok(moves) => {
            let nbits = root.cpu_mask_bits();
            for (irq, target) in moves.iter().filter(|(i, _)| !immovable.contains(i)) {
                let field = format!("irq.{irq}.smp_affinity");
                match read_irq_affinity(root, *irq) {
                    Ok(raw) => match CpuSet::parse_hex_mask(&raw) {
                        Ok(live) if &live == target => {}
                        _ => diffs.push(ConfigDiff::new(field, target.to_hex_mask(nbits), raw)),
                    },
                    Err(e) => diffs.push(ConfigDiff::new(field, target.to_hex_mask(nbits), e)),
                }
            }
        }
        Err(e) => diffs.push(ConfigDiff::new("irq", "readable /proc/interrupts", e)),
    }
    diffs
}

/// Moves all tasks back to the root cpuset, removes both partitions and
/// restores load balancing and the saved IRQ masks. Returns the snapshot
/// that was restored, or `None` if nothing was applied.
pub fn teardown(root: &SysRoot, state_path: &Path) -> Result<Option<SavedState>> {
    let Some(state) = load_state(state_path)? else {
        return Ok(None);
    };
    let cg = CgroupFs::probe(root)?;
    for name in [RT_PARTITION, SYSTEM_PARTITION] {
        cg.remove_partition(name).map_err(privileged)?;
    }
    if let Some(lb) = state.root_load_balance {
        cg.set_root_load_balance(lb).map_err(privileged)?;
    }
    let mut failed = Vec::new();
    for (irq, mask) in &state.irq_masks {
        if state.immovable_irqs.contains(irq) {
            continue;
        }
        if let Err(e) = write_irq_affinity(root, *irq, mask) {
            log::warn!("restoring irq {irq} affinity: {e}");
            failed.push(*irq);
        }
    }
    if !failed.is_empty() {
        return Err(Error::config(format!(
            "could not restore affinity of irqs {failed:?}; state kept in {}",
            state_path.display()
        )));
    }
    fs::remove_file(state_path).map_err(|e| Error::io(state_path, e))?;
    Ok(Some(state))
}

/// Compares the live system against the pre-apply snapshot. Empty when
/// teardown returned everything to where it was.
pub fn verify_teardown(root: &SysRoot, saved: &SavedState) -> Vec<ConfigDiff> {
    let mut diffs = Vec::new();
    let cg = match CgroupFs::probe(root) {
        Ok(cg) => cg,
        Err(e) => {
            diffs.push(ConfigDiff::new("cgroup", "cpuset controller", e));
            return diffs;
        }
    };
    for (name, field) in [(RT_PARTITION, "rt_partition"), (SYSTEM_PARTITION, "system_partition")] {
        if cg.exists(name) {
            diffs.push(ConfigDiff::new(field, "absent", "present"));
        }
    }
    if cg.root_load_balance() != saved.root_load_balance {
        diffs.push(ConfigDiff::new(
            "root.load_balance",
            format!("{:?}", saved.root_load_balance),
            format!("{:?}", cg.root_load_balance()),
        ));
    }
    for (irq, mask) in &saved.irq_masks {
        let live = read_irq_affinity(root, *irq).unwrap_or_else(|e| e.to_string());
        if &live != mask {
            diffs.push(ConfigDiff::new(format!("irq.{irq}.smp_affinity"), mask, live));
        }
    }
    diffs
}

/// Moves the calling process into the RT partition, or back to the root
/// with `None`.
pub fn enter_partition(root: &SysRoot, partition: Option<&str>) -> Result<()> {
    let cg = CgroupFs::probe(root)?;
    cg.move_process(std::process::id(), partition).map_err(privileged)
}
