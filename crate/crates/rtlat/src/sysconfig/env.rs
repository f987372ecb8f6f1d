use std::collections::BTreeSet;
use std::fs;

use rtlat_core::CpuSet;
use serde::{Deserialize, Serialize};

use super::SysRoot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RtFlavor {
    None,
    PreemptRt,
    XenomaiDetected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypervisor {
    BareMetal,
    /// KVM-based, including the AWS Nitro "hvm" instances.
    Kvm,
    Other(String),
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpuInfo {
    pub cpu: u32,
    pub core_id: Option<u32>,
    pub package_id: Option<u32>,
    /// Hardware threads sharing this CPU's core, itself included.
    pub thread_siblings: Option<CpuSet>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpuTopology {
    pub online: Option<CpuSet>,
    pub cpus: Vec<CpuInfo>,
    /// Unordered SMT sibling pairs `(a, b)` with `a < b`, listed only when
    /// both CPUs name each other.
    pub smt_pairs: Vec<(u32, u32)>,
}

impl CpuTopology {
    pub fn siblings_of(&self, cpu: u32) -> CpuSet {
        self.smt_pairs
            .iter()
            .filter_map(|&(a, b)| {
                if a == cpu {
                    Some(b)
                } else if b == cpu {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn are_siblings(&self, a: u32, b: u32) -> bool {
        let key = (a.min(b), a.max(b));
        a != b && self.smt_pairs.binary_search(&key).is_ok()
    }

    pub fn physical_cores(&self) -> Option<usize> {
        let ids: Option<BTreeSet<(u32, u32)>> = self
            .cpus
            .iter()
            .map(|c| Some((c.package_id?, c.core_id?)))
            .collect();
        ids.map(|s| s.len())
    }
}

/// Environment manifest embedded into every sample file. Fields that cannot
/// be read are `None`/`"unknown"`, never guessed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvReport {
    pub kernel_release: String,
    pub kernel_version: String,
    pub rt_flavor: RtFlavor,
    pub topology: CpuTopology,
    pub hypervisor: Hypervisor,
    pub in_container: Option<bool>,
    pub applied_plan_checksum: Option<String>,
}

const UNKNOWN: &str = "unknown";

pub fn capture_environment(root: &SysRoot) -> EnvReport {
    let kernel_release = root
        .read_trimmed("proc/sys/kernel/osrelease")
        .unwrap_or_else(|| UNKNOWN.into());
    let kernel_version = root
        .read_trimmed("proc/sys/kernel/version")
        .unwrap_or_else(|| UNKNOWN.into());
    EnvReport {
        rt_flavor: detect_rt_flavor(root, &kernel_version),
        kernel_release,
        kernel_version,
        topology: read_topology(root),
        hypervisor: detect_hypervisor(root),
        in_container: detect_container(root),
        applied_plan_checksum: None,
    }
}

fn detect_rt_flavor(root: &SysRoot, version: &str) -> RtFlavor {
    if root.read_trimmed("sys/kernel/realtime").as_deref() == Some("1") {
        return RtFlavor::PreemptRt;
    }
    if root.path("proc/xenomai").exists() || root.path("sys/module/xenomai").exists() {
        return RtFlavor::XenomaiDetected;
    }
    if version.contains("PREEMPT_RT") || version.contains("PREEMPT RT") {
        return RtFlavor::PreemptRt;
    }
    RtFlavor::None
}

fn read_topology(root: &SysRoot) -> CpuTopology {
    let online = root.online_cpus();
    let base = root.path("sys/devices/system/cpu");
    let mut ids: Vec<u32> = fs::read_dir(&base)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter_map(|e| {
                    let name = e.file_name().into_string().ok()?;
                    name.strip_prefix("cpu")?.parse::<u32>().ok()
                })
                .collect()
        })
        .unwrap_or_default();
    ids.sort_unstable();

    let cpus: Vec<CpuInfo> = ids
        .into_iter()
        .map(|cpu| {
            let topo = format!("sys/devices/system/cpu/cpu{cpu}/topology");
            let num = |f: &str| {
                root.read_trimmed(&format!("{topo}/{f}"))
                    .and_then(|s| s.parse::<i64>().ok())
                    .and_then(|v| u32::try_from(v).ok())
            };
            CpuInfo {
                cpu,
                core_id: num("core_id"),
                package_id: num("physical_package_id"),
                thread_siblings: root
                    .read_trimmed(&format!("{topo}/thread_siblings_list"))
                    .and_then(|s| CpuSet::parse_list(&s).ok()),
            }
        })
        .collect();

    let listed = |a: u32, b: u32| {
        cpus.iter()
            .find(|c| c.cpu == a)
            .and_then(|c| c.thread_siblings.as_ref())
            .is_some_and(|s| s.contains(b))
    };
    let mut pairs = BTreeSet::new();
    for c in &cpus {
        if let Some(sibs) = &c.thread_siblings {
            for s in sibs.iter().filter(|s| *s != c.cpu) {
                if listed(s, c.cpu) {
                    pairs.insert((c.cpu.min(s), c.cpu.max(s)));
                }
            }
        }
    }
    CpuTopology {
        online,
        cpus,
        smt_pairs: pairs.into_iter().collect(),
    }
}

fn detect_hypervisor(root: &SysRoot) -> Hypervisor {
    let Ok(cpuinfo) = root.read("proc/cpuinfo") else {
        return Hypervisor::Unknown;
    };
    let virtualized = cpuinfo
        .lines()
        .filter(|l| l.starts_with("flags"))
        .any(|l| l.split_whitespace().any(|f| f == "hypervisor"));
    if !virtualized {
        return Hypervisor::BareMetal;
    }
    let vendor = [
        "sys/class/dmi/id/sys_vendor",
        "sys/class/dmi/id/product_name",
        "sys/hypervisor/type",
    ]
    .iter()
    .filter_map(|p| root.read_trimmed(p))
    .collect::<Vec<_>>()
    .join(" ");
    let v = vendor.to_ascii_lowercase();
    if v.contains("kvm") || v.contains("qemu") || v.contains("amazon ec2") || v.contains("firecracker") {
        Hypervisor::Kvm
    } else if v.contains("xen") {
        Hypervisor::Other("xen".into())
    } else if v.contains("virtualbox") || v.contains("innotek") {
        Hypervisor::Other("virtualbox".into())
    } else if v.contains("vmware") {
        Hypervisor::Other("vmware".into())
    } else if v.contains("microsoft") {
        Hypervisor::Other("hyper-v".into())
    } else if v.is_empty() {
        Hypervisor::Other(UNKNOWN.into())
    } else {
        Hypervisor::Other(vendor)
    }
}

fn detect_container(root: &SysRoot) -> Option<bool> {
    if root.path(".dockerenv").exists() || root.path("run/.containerenv").exists() {
        return Some(true);
    }
    let cgroup = root.read("proc/1/cgroup").ok()?;
    Some(
        ["docker", "containerd", "kubepods", "lxc", "libpod"]
            .iter()
            .any(|k| cgroup.contains(k)),
    )
}
