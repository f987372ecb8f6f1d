use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rtlat_core::CpuSet;
use serde::{Deserialize, Serialize};

use super::SysRoot;
use crate::error::{Error, Result};

/// The cpuset controller, on whichever control-group generation the host
/// mounts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CgroupFs {
    /// Legacy hierarchy. `prefix` is `"cpuset."` unless mounted `noprefix`.
    V1 { mount: PathBuf, prefix: String },
    /// Unified hierarchy. Load balancing is switched off by turning the RT
    /// cgroup into an `isolated` partition.
    V2 { mount: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionState {
    pub cpus: CpuSet,
    pub exclusive: bool,
    pub load_balance: bool,
}

impl CgroupFs {
    pub fn probe(root: &SysRoot) -> Result<Self> {
        for rel in ["sys/fs/cgroup", "sys/fs/cgroup/unified"] {
            let controllers = root.read(&format!("{rel}/cgroup.controllers"));
            if let Ok(c) = controllers {
                if c.split_whitespace().any(|w| w == "cpuset") {
                    return Ok(CgroupFs::V2 {
                        mount: root.path(rel),
                    });
                }
            }
        }
        let v1 = root.path("sys/fs/cgroup/cpuset");
        if v1.join("cpuset.cpus").exists() {
            return Ok(CgroupFs::V1 {
                mount: v1,
                prefix: "cpuset.".into(),
            });
        }
        if v1.join("cpus").exists() {
            return Ok(CgroupFs::V1 {
                mount: v1,
                prefix: String::new(),
            });
        }
        Err(Error::config(
            "no cpuset controller found under sys/fs/cgroup",
        ))
    }

    pub fn name(&self) -> &'static str {
        match self {
            CgroupFs::V1 { .. } => "cgroup-v1",
            CgroupFs::V2 { .. } => "cgroup-v2",
        }
    }

    fn dir(&self, partition: Option<&str>) -> PathBuf {
        let mount = match self {
            CgroupFs::V1 { mount, .. } | CgroupFs::V2 { mount } => mount,
        };
        match partition {
            Some(p) => mount.join(p),
            None => mount.clone(),
        }
    }

    fn file(&self, partition: Option<&str>, key: &str) -> PathBuf {
        let name = match self {
            CgroupFs::V1 { prefix, .. } => format!("{prefix}{key}"),
            CgroupFs::V2 { .. } => format!("cpuset.{key}"),
        };
        self.dir(partition).join(name)
    }

    fn tasks_file(&self, partition: Option<&str>) -> PathBuf {
        match self {
            CgroupFs::V1 { .. } => self.dir(partition).join("tasks"),
            CgroupFs::V2 { .. } => self.dir(partition).join("cgroup.procs"),
        }
    }

    /// File accepting single thread ids for `partition`.
    pub fn thread_attach_file(&self, partition: Option<&str>) -> PathBuf {
        match self {
            CgroupFs::V1 { .. } => self.dir(partition).join("tasks"),
            CgroupFs::V2 { .. } => self.dir(partition).join("cgroup.threads"),
        }
    }

    fn write(path: PathBuf, value: &str) -> Result<()> {
        fs::write(&path, value).map_err(|e| Error::io(path, e))
    }

    fn read(path: PathBuf) -> Option<String> {
        fs::read_to_string(path).ok().map(|s| s.trim().to_string())
    }

    pub fn exists(&self, partition: &str) -> bool {
        self.dir(Some(partition)).is_dir()
    }

    fn root_mems(&self) -> Result<String> {
        let path = match self {
            CgroupFs::V1 { .. } => self.file(None, "mems"),
            CgroupFs::V2 { .. } => self.file(None, "mems.effective"),
        };
        Ok(Self::read(path.clone()).unwrap_or_else(|| "0".into()))
            .map(|m| if m.is_empty() { "0".into() } else { m })
    }

    /// Creates (or updates) a child cpuset.
    pub fn create_partition(
        &self,
        name: &str,
        cpus: &CpuSet,
        exclusive: bool,
        load_balance: bool,
    ) -> Result<()> {
        if let CgroupFs::V2 { .. } = self {
            let ctl = self.dir(None).join("cgroup.subtree_control");
            let enabled = Self::read(ctl.clone()).unwrap_or_default();
            if !enabled.split_whitespace().any(|w| w == "cpuset") {
                Self::write(ctl, "+cpuset")?;
            }
        }
        let dir = self.dir(Some(name));
        if !dir.is_dir() {
            fs::create_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let mems = self.root_mems()?;
        Self::write(self.file(Some(name), "cpus"), &cpus.to_list_string())?;
        Self::write(self.file(Some(name), "mems"), &mems)?;
        match self {
            CgroupFs::V1 { .. } => {
                Self::write(self.file(Some(name), "cpu_exclusive"), flag(exclusive))?;
                Self::write(self.file(Some(name), "sched_load_balance"), flag(load_balance))?;
            }
            CgroupFs::V2 { .. } => {
                if exclusive {
                    self.set_load_balance(name, load_balance)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_partition(&self, name: &str) -> Option<PartitionState> {
        if !self.exists(name) {
            return None;
        }
        let cpus = Self::read(self.file(Some(name), "cpus"))
            .and_then(|s| CpuSet::parse_list(&s).ok())?;
        match self {
            CgroupFs::V1 { .. } => Some(PartitionState {
                cpus,
                exclusive: Self::read(self.file(Some(name), "cpu_exclusive")).as_deref() == Some("1"),
                load_balance: Self::read(self.file(Some(name), "sched_load_balance")).as_deref()
                    != Some("0"),
            }),
            CgroupFs::V2 { .. } => {
                let part = Self::read(self.file(Some(name), "cpus.partition"))
                    .unwrap_or_else(|| "member".into());
                let (exclusive, load_balance) = match part.as_str() {
                    "root" => (true, true),
                    "isolated" => (true, false),
                    _ => (false, true),
                };
                Some(PartitionState {
                    cpus,
                    exclusive,
                    load_balance,
                })
            }
        }
    }

    pub fn set_load_balance(&self, name: &str, on: bool) -> Result<()> {
        match self {
            CgroupFs::V1 { .. } => Self::write(self.file(Some(name), "sched_load_balance"), flag(on)),
            CgroupFs::V2 { .. } => Self::write(
                self.file(Some(name), "cpus.partition"),
                if on { "root" } else { "isolated" },
            ),
        }
    }

    /// The v1 root flag. Children can only turn balancing off while the root
    /// has it off too. Always `None` on v2.
    pub fn root_load_balance(&self) -> Option<bool> {
        match self {
            CgroupFs::V1 { .. } => {
                Self::read(self.file(None, "sched_load_balance")).map(|s| s != "0")
            }
            CgroupFs::V2 { .. } => None,
        }
    }

    pub fn set_root_load_balance(&self, on: bool) -> Result<()> {
        match self {
            CgroupFs::V1 { .. } => Self::write(self.file(None, "sched_load_balance"), flag(on)),
            CgroupFs::V2 { .. } => Ok(()),
        }
    }

    pub fn tasks(&self, partition: Option<&str>) -> Vec<u32> {
        Self::read(self.tasks_file(partition))
            .map(|s| s.lines().filter_map(|l| l.trim().parse().ok()).collect())
            .unwrap_or_default()
    }

    /// Attaches one task (a thread on v1, a process on v2).
    pub fn move_task(&self, pid: u32, partition: Option<&str>) -> io::Result<()> {
        append(&self.tasks_file(partition), pid)
    }

    /// Attaches every thread of process `pid`.
    pub fn move_process(&self, pid: u32, partition: Option<&str>) -> Result<()> {
        let path = self.dir(partition).join("cgroup.procs");
        append(&path, pid).map_err(|e| Error::io(path, e))
    }

    /// Moves remaining tasks to the root and removes the directory.
    pub fn remove_partition(&self, name: &str) -> Result<()> {
        if !self.exists(name) {
            return Ok(());
        }
        for pid in self.tasks(Some(name)) {
            let _ = self.move_task(pid, None);
        }
        let dir = self.dir(Some(name));
        match fs::remove_dir(&dir) {
            Ok(()) => Ok(()),
            // A plain directory tree (fixtures) still holds its control files.
            Err(e) if e.kind() == io::ErrorKind::DirectoryNotEmpty => {
                fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))
            }
            Err(e) => Err(Error::io(&dir, e)),
        }
    }
}

// Appending keeps fixture trees honest about every task written; the kernel
// treats each write as a single attach request either way.
fn append(path: &Path, pid: u32) -> io::Result<()> {
    let mut f = fs::OpenOptions::new().append(true).create(true).open(path)?;
    writeln!(f, "{pid}")
}

fn flag(on: bool) -> &'static str {
    if on {
        "1"
    } else {
        "0"
    }
}
