//! Configuration matrices: isolate, load, measure, persist, tear down.

use std::collections::BTreeSet;
use std::fs;
use std::mem;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use log::{info, warn};
use rtlat_core::{CpuSet, TimeNs};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{run_cyclic, wall_clock_ns, BenchConfig, ClockKind, RunContext, Workers};
use crate::error::{Error, Result};
use crate::loadgen::{start_load, LoadReport, LoadSpec};
use crate::samplefile::{persist_samples, SampleReader, RECORD_SIZE};
use crate::series::TOOLKIT_VERSION;
use crate::sysconfig::{
    apply_isolation, capture_environment, teardown, verify_teardown, AppliedConfig, CgroupFs,
    ConfigDiff, EnvReport, IsolationPlan, RtFlavor, Scope, SysRoot, RT_PARTITION,
};

pub const DEFAULT_SETTLE: TimeNs = TimeNs::from_secs(10);
pub const MANIFEST: &str = "manifest.json";

/// Host-side settings of a virtualized case. The toolkit runs inside the
/// guest and cannot apply these; they are recorded with the results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostSetup {
    pub isolation: bool,
    pub no_load_balancer: bool,
    pub irq_affinity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub label: String,
    #[serde(default)]
    pub isolation: Option<IsolationPlan>,
    #[serde(default)]
    pub host: Option<HostSetup>,
    #[serde(default)]
    pub load: Option<LoadSpec>,
    pub bench: BenchConfig,
    /// Wake-up delays for a simulated clock.
    #[serde(default, rename = "trace_ns")]
    pub trace: Option<Vec<TimeNs>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub name: String,
    pub cases: Vec<Case>,
    #[serde(default = "one")]
    pub repetitions: u32,
    #[serde(default = "default_settle", rename = "settle_ns")]
    pub settle: TimeNs,
}

fn one() -> u32 {
    1
}

fn default_settle() -> TimeNs {
    DEFAULT_SETTLE
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for case in &self.cases {
            if !seen.insert(case.label.as_str()) {
                return Err(Error::config(format!("duplicate case label {:?}", case.label)));
            }
            if let Some(iso) = &case.isolation {
                if !case.bench.cpu_set.is_subset(&iso.rt_cpus) {
                    return Err(Error::config(format!(
                        "case {:?}: bench cpus {} outside rt cpus {}",
                        case.label, case.bench.cpu_set, iso.rt_cpus
                    )));
                }
            }
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the plan's JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("plan serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// Bytes of sample records the plan will write.
    pub fn estimated_bytes(&self) -> u64 {
        self.cases
            .iter()
            .map(|c| {
                let workers = match c.bench.workers {
                    Workers::PerCpu => c.bench.cpu_set.len() as u64,
                    Workers::Count(n) => n as u64,
                };
                c.bench.loops.saturating_mul(workers).saturating_mul(RECORD_SIZE)
            })
            .fold(0u64, u64::saturating_add)
            .saturating_mul(self.repetitions as u64)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub root: SysRoot,
    pub state_path: PathBuf,
    /// Parent directory for disk-load scratch files.
    pub scratch: Option<PathBuf>,
    /// Replaces the plan's settle delay when set.
    pub settle: Option<TimeNs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub label: String,
    pub repetition: u32,
    /// Sample files, relative to the output directory.
    pub files: Vec<PathBuf>,
    pub applied: Option<AppliedConfig>,
    pub load: Option<LoadReport>,
    pub started_at_ns: u64,
    pub finished_at_ns: u64,
    /// Wall time of the earliest and latest sample over all workers.
    pub first_sample_ns: Option<u64>,
    pub last_sample_ns: Option<u64>,
    pub error: Option<String>,
    /// Leftovers found after teardown; empty when the case was undone fully.
    pub teardown_diff: Vec<ConfigDiff>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub experiment_hash: String,
    pub plan: ExperimentPlan,
    pub env: EnvReport,
    pub toolkit_version: String,
    pub format_version: u16,
    pub started_at_ns: u64,
    pub finished_at_ns: u64,
    pub cases: Vec<CaseRecord>,
}

impl RunArtifacts {
    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn files(&self) -> impl Iterator<Item = &Path> {
        self.cases.iter().flat_map(|c| c.files.iter().map(PathBuf::as_path))
    }

    /// Reads every referenced sample file to the end, checking its CRC.
    pub fn verify(&self, out_dir: &Path) -> Result<()> {
        for rel in self.files() {
            let meta = SampleReader::open(&out_dir.join(rel))?.for_each_chunk(|_| {})?;
            if meta.experiment_hash.as_deref() != Some(self.experiment_hash.as_str()) {
                return Err(Error::Corrupt {
                    path: out_dir.join(rel),
                    reason: "experiment hash does not match manifest".into(),
                });
            }
        }
        Ok(())
    }

    fn store(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(MANIFEST);
        let tmp = out_dir.join(format!("{MANIFEST}.partial"));
        fs::write(&tmp, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

/// Column name used for the measured OS in tables.
pub fn flavor_name(f: RtFlavor) -> &'static str {
    match f {
        RtFlavor::None => "Standard",
        RtFlavor::PreemptRt => "Preempt-RT",
        RtFlavor::XenomaiDetected => "Xenomai",
    }
}

enum CaseError {
    Case(Error),
    Persist(Error),
}

/// Runs every case of `plan` in order. A failing case is recorded and the
/// run goes on; only a failure to write results aborts.
pub fn run_matrix(plan: &ExperimentPlan, opts: &RunOptions) -> Result<RunArtifacts> {
    plan.validate()?;
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    check_space(&opts.out_dir, plan.estimated_bytes())?;

    let mut artifacts = RunArtifacts {
        experiment_hash: plan.hash(),
        plan: plan.clone(),
        env: capture_environment(&opts.root),
        toolkit_version: TOOLKIT_VERSION.into(),
        format_version: crate::samplefile::FORMAT_VERSION,
        started_at_ns: wall_clock_ns(),
        finished_at_ns: 0,
        cases: Vec::new(),
    };
    artifacts.store(&opts.out_dir)?;
    let settle = opts.settle.unwrap_or(plan.settle);
    let total = plan.cases.len() * plan.repetitions as usize;

    let mut done = 0;
    for (idx, case) in plan.cases.iter().enumerate() {
        for rep in 0..plan.repetitions {
            if done > 0 && settle > TimeNs::ZERO {
                thread::sleep(Duration::from_nanos(settle.as_ns()));
            }
            done += 1;
            info!("case {done}/{total}: {} (repetition {rep})", case.label);
            let mut record = CaseRecord {
                label: case.label.clone(),
                repetition: rep,
                files: Vec::new(),
                applied: None,
                load: None,
                started_at_ns: wall_clock_ns(),
                finished_at_ns: 0,
                first_sample_ns: None,
                last_sample_ns: None,
                error: None,
                teardown_diff: Vec::new(),
            };
            let outcome = run_case(idx, case, rep, &artifacts, opts, &mut record);
            record.finished_at_ns = wall_clock_ns();
            match outcome {
                Ok(()) => {}
                Err(CaseError::Case(e)) => {
                    warn!("case {:?} failed: {e}", case.label);
                    record.error = Some(e.to_string());
                }
                Err(CaseError::Persist(e)) => {
                    record.error = Some(e.to_string());
                    artifacts.cases.push(record);
                    let _ = artifacts.store(&opts.out_dir);
                    return Err(e);
                }
            }
            artifacts.cases.push(record);
            artifacts.store(&opts.out_dir)?;
        }
    }
    artifacts.finished_at_ns = wall_clock_ns();
    artifacts.store(&opts.out_dir)?;
    Ok(artifacts)
}

fn run_case(
    idx: usize,
    case: &Case,
    rep: u32,
    artifacts: &RunArtifacts,
    opts: &RunOptions,
    record: &mut CaseRecord,
) -> std::result::Result<(), CaseError> {
    let mut ctx = RunContext {
        env: Some(artifacts.env.clone()),
        experiment_hash: Some(artifacts.experiment_hash.clone()),
        ..RunContext::default()
    };
    let mut isolated = false;
    let result = (|| {
        if let Some(iso) = &case.isolation {
            isolated = true;
            let applied = apply_isolation(&opts.root, iso, &opts.state_path)?;
            let cg = CgroupFs::probe(&opts.root)?;
            ctx.join_cgroup = Some(cg.thread_attach_file(Some(RT_PARTITION)));
            ctx.plan_checksum = Some(applied.plan_checksum.clone());
            record.applied = Some(applied);
        }
        let mut env = capture_environment(&opts.root);
        env.applied_plan_checksum = ctx.plan_checksum.clone();
        ctx.label = format!("{}/{}", case.label, flavor_name(env.rt_flavor));
        ctx.env = Some(env);

        let mut load = match &case.load {
            Some(spec) => {
                let mut spec = spec.clone();
                spec.duration = None;
                if spec.scratch.is_none() {
                    spec.scratch = opts.scratch.clone();
                }
                Some(start_load(&spec)?)
            }
            None => None,
        };
        let series = run_cyclic(&case.bench, case.trace.as_deref(), &ctx);
        if let Some(h) = load.as_mut() {
            record.load = Some(h.stop()?);
        }
        series
    })();

    if isolated {
        match teardown(&opts.root, &opts.state_path) {
            Ok(Some(saved)) => record.teardown_diff = verify_teardown(&opts.root, &saved),
            Ok(None) => {}
            Err(e) => {
                record.teardown_diff.push(ConfigDiff {
                    field: "teardown".into(),
                    expected: "ok".into(),
                    actual: e.to_string(),
                });
            }
        }
    }
    let series = result.map_err(CaseError::Case)?;

    for s in &series {
        let n = s.samples.len();
        if n > 0 {
            let first = s.sample_wall_time(0);
            let last = s.sample_wall_time(n - 1);
            record.first_sample_ns = min_opt(record.first_sample_ns, first);
            record.last_sample_ns = record.last_sample_ns.max(last);
        }
    }
    let stem = format!("{:02}-{}-r{rep}", idx + 1, slug(&case.label));
    for s in series {
        let rel = PathBuf::from(format!("{stem}-w{}.rtfs", s.meta.worker_id));
        persist_samples(&s, &opts.out_dir.join(&rel)).map_err(CaseError::Persist)?;
        record.files.push(rel);
        drop(s);
    }
    Ok(())
}

fn min_opt(a: Option<u64>, b: Option<u64>) -> Option<u64> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// File-name-safe form of a case label.
pub fn slug(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    for c in label.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

fn check_space(dir: &Path, needed: u64) -> Result<()> {
    use std::os::unix::ffi::OsStrExt;
    let c = std::ffi::CString::new(dir.as_os_str().as_bytes())
        .map_err(|_| Error::config("output path contains NUL"))?;
    // SAFETY: statvfs is plain data; c is a valid C string.
    let mut st: libc::statvfs = unsafe { mem::zeroed() };
    if unsafe { libc::statvfs(c.as_ptr(), &mut st) } != 0 {
        return Err(Error::io(dir, std::io::Error::last_os_error()));
    }
    let avail = (st.f_bavail as u64).saturating_mul(st.f_frsize as u64);
    if avail < needed {
        return Err(Error::config(format!(
            "{} has {avail} bytes free, plan needs about {needed}",
            dir.display()
        )));
    }
    Ok(())
}

pub const PRESETS: [&str; 3] = ["table1", "phase1-guest-host-matrix", "hardware-comparison"];

/// Rows of the published single-thread comparison, in order.
pub const TABLE1_LABELS: [&str; 12] = [
    "Default",
    "W. stress",
    "Isolated (iso)",
    "Isolated (iso) w. stress",
    "Isolated & nlb & irq",
    "Isolated & nlb & irq & w. stress",
    "Isolated --host iso",
    "Isolated w. stress --host iso",
    "Isolated --host iso nlb irq",
    "Isolated w. stress --host iso nlb irq",
    "Isolated-nlb irq --host iso irq",
    "Isolated-nlb irq with stress --host iso irq",
];

/// Guest-side settings of a preset case: isolation, plus the two run-time
/// kernel knobs on top of it.
#[derive(Debug, Clone, Copy)]
struct Guest {
    nlb: bool,
    irq: bool,
}

struct PresetShape<'a> {
    online: &'a CpuSet,
    interval: TimeNs,
    loops: u64,
}

impl PresetShape<'_> {
    /// The measured CPU is the highest online one; the rest is the system
    /// partition. A single-CPU host cannot isolate, and isolated cases then
    /// fail when applied.
    fn rt_cpu(&self) -> CpuSet {
        self.online.max().into_iter().collect()
    }

    fn case(&self, label: &str, guest: Option<Guest>, stress: bool, host: Option<HostSetup>) -> Case {
        let rt = self.rt_cpu();
        let isolation = guest.map(|g| IsolationPlan::split(self.online, rt.clone(), !g.nlb, g.irq, Scope::Guest));
        let load_cpus = match &isolation {
            Some(iso) => iso.system_cpus.clone(),
            None => self.online.clone(),
        };
        Case {
            label: label.into(),
            isolation,
            host,
            load: stress.then(|| LoadSpec::one_of_each(load_cpus)),
            bench: BenchConfig {
                interval: self.interval,
                loops: self.loops,
                workers: Workers::PerCpu,
                cpu_set: rt,
                ..BenchConfig::default()
            },
            trace: None,
        }
    }
}

fn host(isolation: bool, no_load_balancer: bool, irq_affinity: bool) -> Option<HostSetup> {
    Some(HostSetup {
        isolation,
        no_load_balancer,
        irq_affinity,
    })
}

/// Built-in plans, shaped for a host with `online` CPUs.
pub fn preset(name: &str, online: &CpuSet) -> Result<ExperimentPlan> {
    if online.is_empty() {
        return Err(Error::config("no online cpus"));
    }
    let iso = Some(Guest { nlb: false, irq: false });
    let iso_nlb_irq = Some(Guest { nlb: true, irq: true });
    let iso_irq = Some(Guest { nlb: false, irq: true });
    let cases = match name {
        "table1" => {
            let s = PresetShape {
                online,
                interval: TimeNs::from_ms(1),
                loops: 1_200_000,
            };
            let rows: [(Option<Guest>, bool, Option<HostSetup>); 12] = [
                (None, false, None),
                (None, true, None),
                (iso, false, None),
                (iso, true, None),
                (iso_nlb_irq, false, None),
                (iso_nlb_irq, true, None),
                (iso, false, host(true, false, false)),
                (iso, true, host(true, false, false)),
                (iso, false, host(true, true, true)),
                (iso, true, host(true, true, true)),
                (iso_irq, false, host(true, false, true)),
                (iso_irq, true, host(true, false, true)),
            ];
            TABLE1_LABELS
                .iter()
                .zip(rows)
                .map(|(label, (g, stress, h))| s.case(label, g, stress, h))
                .collect()
        }
        "phase1-guest-host-matrix" => {
            let s = PresetShape {
                online,
                interval: TimeNs::from_ms(1),
                loops: 1_200_000,
            };
            let guests: [(&str, Option<Guest>); 5] = [
                ("default", None),
                ("iso", iso),
                ("iso nlb", Some(Guest { nlb: true, irq: false })),
                ("iso irq", iso_irq),
                ("iso nlb irq", iso_nlb_irq),
            ];
            let hosts: [(&str, Option<HostSetup>); 5] = [
                ("", None),
                (" --host iso", host(true, false, false)),
                (" --host iso nlb", host(true, true, false)),
                (" --host iso irq", host(true, false, true)),
                (" --host iso nlb irq", host(true, true, true)),
            ];
            let mut cases = Vec::new();
            for (hname, h) in hosts {
                for (gname, g) in guests {
                    for stress in [false, true] {
                        let label = format!("{gname}{}{hname}", if stress { " w. stress" } else { "" });
                        cases.push(s.case(&label, g, stress, h));
                    }
                }
            }
            cases
        }
        "hardware-comparison" => {
            let s = PresetShape {
                online,
                interval: TimeNs::from_ms(1),
                loops: 10_000_000,
            };
            vec![s.case("Isolated w. load balancer w. stress", iso, true, None)]
        }
        other => {
            return Err(Error::config(format!(
                "unknown preset {other:?}; available: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(ExperimentPlan {
        name: name.into(),
        cases,
        repetitions: 1,
        settle: DEFAULT_SETTLE,
    })
}

/// Turns every case of `plan` into a simulated-clock run with `loops`
/// iterations. Used for dry runs of presets.
pub fn simulate(plan: &mut ExperimentPlan, loops: u64) {
    for case in &mut plan.cases {
        case.bench.clock = ClockKind::Simulated;
        case.bench.loops = loops;
        case.isolation = None;
        case.load = None;
    }
    plan.settle = TimeNs::ZERO;
}
