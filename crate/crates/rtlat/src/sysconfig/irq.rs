use std::fs;

use rtlat_core::CpuSet;
use serde::{Deserialize, Serialize};

use super::SysRoot;
use crate::error::{Error, Result};

/// One numbered row of `/proc/interrupts`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrqInfo {
    pub irq: u32,
    /// Per-CPU delivery counts, in header column order.
    pub counts: Vec<u64>,
    /// Everything after the counts: chip, hardware IRQ, trigger, handlers.
    pub description: String,
}

/// Parses the numbered IRQ rows of `/proc/interrupts`. Architecture rows
/// (`NMI`, `LOC`, ...) are skipped since they have no affinity file.
pub fn parse_interrupts(text: &str) -> Vec<IrqInfo> {
    let mut lines = text.lines();
    let ncpus = lines
        .next()
        .map(|h| h.split_whitespace().filter(|t| t.starts_with("CPU")).count())
        .unwrap_or(0);
    lines
        .filter_map(|line| {
            let (id, rest) = line.trim_start().split_once(':')?;
            let irq = id.trim().parse::<u32>().ok()?;
            let mut tokens = rest.split_whitespace().peekable();
            let mut counts = Vec::with_capacity(ncpus);
            while counts.len() < ncpus {
                match tokens.peek().and_then(|t| t.parse::<u64>().ok()) {
                    Some(c) => {
                        counts.push(c);
                        tokens.next();
                    }
                    None => break,
                }
            }
            Some(IrqInfo {
                irq,
                counts,
                description: tokens.collect::<Vec<_>>().join(" "),
            })
        })
        .collect()
}

pub fn list_irqs(root: &SysRoot) -> Result<Vec<IrqInfo>> {
    let path = root.path("proc/interrupts");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(parse_interrupts(&text))
}

/// Raw contents of `/proc/irq/<irq>/smp_affinity`, trailing newline removed.
pub fn read_irq_affinity(root: &SysRoot, irq: u32) -> Result<String> {
    let path = root.path(&format!("proc/irq/{irq}/smp_affinity"));
    fs::read_to_string(&path)
        .map(|s| s.trim_end().to_string())
        .map_err(|e| Error::io(&path, e))
}

pub(crate) fn write_irq_affinity(root: &SysRoot, irq: u32, mask: &str) -> Result<()> {
    let path = root.path(&format!("proc/irq/{irq}/smp_affinity"));
    fs::write(&path, format!("{mask}\n")).map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrqMoveResult {
    pub irq: u32,
    pub target: CpuSet,
    pub ok: bool,
    pub error: Option<String>,
}

/// Rewrites the affinity mask of each IRQ. Failures are reported per entry;
/// the remaining moves still happen.
pub fn set_irq_affinity(root: &SysRoot, moves: &[(u32, CpuSet)]) -> Vec<IrqMoveResult> {
    let nbits = root.cpu_mask_bits();
    moves
        .iter()
        .map(|(irq, target)| {
            let outcome = if target.is_empty() {
                Err(Error::config("empty target cpu set"))
            } else if !root.path(&format!("proc/irq/{irq}")).is_dir() {
                Err(Error::config(format!("irq {irq} does not exist")))
            } else {
                write_irq_affinity(root, *irq, &target.to_hex_mask(nbits))
            };
            IrqMoveResult {
                irq: *irq,
                target: target.clone(),
                ok: outcome.is_ok(),
                error: outcome.err().map(|e| e.to_string()),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "           CPU0       CPU1       \n  \
  0:         22          0   IO-APIC   2-edge      timer\n  \
 24:          1          3   IO-APIC   5-edge      ACPI:Ged\n  \
 28:          0          0 PCI-MSIX-0000:00:01.0   0-edge      virtio0-config\n\
NMI:          0          0   Non-maskable interrupts\n\
LOC:      12345      54321   Local timer interrupts\n\
ERR:          0\n";

    #[test]
    fn parses_numbered_rows_only() {
        let irqs = parse_interrupts(SAMPLE);
        let ids: Vec<u32> = irqs.iter().map(|i| i.irq).collect();
        assert_eq!(ids, vec![0, 24, 28]);
        assert_eq!(irqs[1].counts, vec![1, 3]);
        assert_eq!(irqs[0].description, "IO-APIC 2-edge timer");
        assert!(parse_interrupts("").is_empty());
    }

    #[test]
    fn empty_move_list() {
        let dir = tempfile::tempdir().unwrap();
        assert!(set_irq_affinity(&SysRoot::at(dir.path()), &[]).is_empty());
    }

    #[test]
    fn per_entry_failures_do_not_abort() {
        let dir = tempfile::tempdir().unwrap();
        let root = SysRoot::at(dir.path());
        fs::create_dir_all(root.path("sys/devices/system/cpu")).unwrap();
        fs::write(root.path("sys/devices/system/cpu/possible"), "0-3\n").unwrap();
        fs::create_dir_all(root.path("proc/irq/24")).unwrap();
        fs::write(root.path("proc/irq/24/smp_affinity"), "f\n").unwrap();
        // An affinity "file" that cannot be written, standing in for an
        // IRQ the kernel refuses to move.
        fs::create_dir_all(root.path("proc/irq/0/smp_affinity")).unwrap();

        let sys: CpuSet = [0, 1].into_iter().collect();
        let res = set_irq_affinity(&root, &[(0, sys.clone()), (24, sys.clone()), (99, sys)]);
        assert_eq!(res.iter().map(|r| r.ok).collect::<Vec<_>>(), vec![false, true, false]);
        assert!(res[2].error.as_ref().unwrap().contains("does not exist"));
        assert_eq!(read_irq_affinity(&root, 24).unwrap(), "3");
    }
}
