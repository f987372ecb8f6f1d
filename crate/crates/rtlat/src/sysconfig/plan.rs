use std::fmt;
use std::path::Path;

use rtlat_core::CpuSet;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::irq::list_irqs;
use super::SysRoot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Host,
    Guest,
}

/// Either one IRQ number or every numbered IRQ in `/proc/interrupts`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrqSelector {
    Irq(u32),
    All,
}

impl Serialize for IrqSelector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            IrqSelector::Irq(n) => s.serialize_u32(*n),
            IrqSelector::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for IrqSelector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Sel;
        impl Visitor<'_> for Sel {
            type Value = IrqSelector;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an IRQ number or \"all\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<IrqSelector, E> {
                u32::try_from(v).map(IrqSelector::Irq).map_err(E::custom)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<IrqSelector, E> {
                match v {
                    "all" => Ok(IrqSelector::All),
                    other => other.parse().map(IrqSelector::Irq).map_err(E::custom),
                }
            }
        }
        d.deserialize_any(Sel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrqMove {
    pub irq: IrqSelector,
    pub cpus: CpuSet,
}

/// Desired CPU partitioning. JSON form:
///
/// ```json
/// {
///   "rt_cpus": "2-3",
///   "system_cpus": "0-1",
///   "load_balancer_on_rt": false,
///   "irq_moves": [{ "irq": "all", "cpus": "0-1" }, { "irq": 24, "cpus": "0" }],
///   "scope": "host"
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsolationPlan {
    pub rt_cpus: CpuSet,
    pub system_cpus: CpuSet,
    pub load_balancer_on_rt: bool,
    #[serde(default)]
    pub irq_moves: Vec<IrqMove>,
    pub scope: Scope,
}

impl IsolationPlan {
    /// The common shape: RT on `rt`, everything else on the remaining
    /// online CPUs, optionally with all IRQs moved off the RT CPUs.
    pub fn split(online: &CpuSet, rt: CpuSet, load_balancer_on_rt: bool, move_irqs: bool, scope: Scope) -> Self {
        let system_cpus = online.difference(&rt);
        let irq_moves = if move_irqs {
            vec![IrqMove {
                irq: IrqSelector::All,
                cpus: system_cpus.clone(),
            }]
        } else {
            Vec::new()
        };
        IsolationPlan {
            rt_cpus: rt,
            system_cpus,
            load_balancer_on_rt,
            irq_moves,
            scope,
        }
    }

    /// Structural checks; with `online` also checks that the two partitions
    /// cover exactly the online CPUs.
    pub fn validate(&self, online: Option<&CpuSet>) -> Result<()> {
        if self.rt_cpus.is_empty() {
            return Err(Error::config("rt_cpus is empty"));
        }
        if self.system_cpus.is_empty() {
            return Err(Error::config("system_cpus is empty"));
        }
        let overlap = self.rt_cpus.intersection(&self.system_cpus);
        if !overlap.is_empty() {
            return Err(Error::config(format!(
                "rt_cpus and system_cpus overlap on {overlap}"
            )));
        }
        for m in &self.irq_moves {
            if m.cpus.is_empty() {
                return Err(Error::config("irq move with empty cpu set"));
            }
        }
        if let Some(online) = online {
            let covered = self.rt_cpus.union(&self.system_cpus);
            if &covered != online {
                return Err(Error::config(format!(
                    "partitions cover {covered} but online cpus are {online}"
                )));
            }
        }
        Ok(())
    }

    /// Short stable identifier: the first 16 hex digits of SHA-256 over the
    /// plan's JSON encoding.
    pub fn checksum(&self) -> String {
        let json = serde_json::to_vec(self).expect("plan serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// Expands `"all"` selectors against the IRQs present on the host.
    /// Later entries override earlier ones for the same IRQ.
    pub fn resolve_irq_moves(&self, root: &SysRoot) -> Result<Vec<(u32, CpuSet)>> {
        let mut out: Vec<(u32, CpuSet)> = Vec::new();
        let mut set = |irq: u32, cpus: &CpuSet| match out.iter_mut().find(|(i, _)| *i == irq) {
            Some(slot) => slot.1 = cpus.clone(),
            None => out.push((irq, cpus.clone())),
        };
        for m in &self.irq_moves {
            match m.irq {
                IrqSelector::Irq(n) => set(n, &m.cpus),
                IrqSelector::All => {
                    for info in list_irqs(root)? {
                        set(info.irq, &m.cpus);
                    }
                }
            }
        }
        out.sort_by_key(|(i, _)| *i);
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cpus(s: &str) -> CpuSet {
        s.parse().unwrap()
    }

    #[test]
    fn overlap_is_rejected() {
        let plan = IsolationPlan {
            rt_cpus: cpus("1-2"),
            system_cpus: cpus("0-1"),
            load_balancer_on_rt: true,
            irq_moves: vec![],
            scope: Scope::Host,
        };
        let err = plan.validate(None).unwrap_err().to_string();
        assert!(err.contains("overlap on 1"), "{err}");
    }

    #[test]
    fn coverage_checked_against_online() {
        let plan = IsolationPlan::split(&cpus("0-3"), cpus("2-3"), false, true, Scope::Host);
        assert_eq!(plan.system_cpus, cpus("0-1"));
        plan.validate(Some(&cpus("0-3"))).unwrap();
        assert!(plan.validate(Some(&cpus("0-4"))).is_err());
    }

    #[test]
    fn json_schema() {
        let text = r#"{
            "rt_cpus": "2-3", "system_cpus": "0-1", "load_balancer_on_rt": false,
            "irq_moves": [{"irq": "all", "cpus": "0-1"}, {"irq": 24, "cpus": "0"}],
            "scope": "guest"
        }"#;
        let plan: IsolationPlan = serde_json::from_str(text).unwrap();
        assert_eq!(plan.irq_moves[0].irq, IrqSelector::All);
        assert_eq!(plan.irq_moves[1].irq, IrqSelector::Irq(24));
        assert_eq!(plan.scope, Scope::Guest);
        let again: IsolationPlan =
            serde_json::from_str(&serde_json::to_string(&plan).unwrap()).unwrap();
        assert_eq!(again, plan);
        assert_eq!(again.checksum(), plan.checksum());
        assert_eq!(plan.checksum().len(), 16);
    }

    #[test]
    fn checksum_tracks_content() {
        let a = IsolationPlan::split(&cpus("0-3"), cpus("2-3"), false, true, Scope::Host);
        let mut b = a.clone();
        b.load_balancer_on_rt = true;
        assert_ne!(a.checksum(), b.checksum());
    }
}
