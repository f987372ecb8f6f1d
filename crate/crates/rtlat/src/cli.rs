//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 real-time privileges
//! refused in strict mode, 3 configuration error, 4 `configure verify`
//! found differences, 64 usage error, 65 corrupt input file.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rtlat_core::boxplot::{QUANTILE_METHOD, QUANTILE_METHOD_VERSION};
use rtlat_core::{CpuSet, Statistic, TimeNs};
use serde_json::json;

use crate::analysis::{analyze_files, load_task, AnalyzeOptions, Threshold};
use crate::bench::{
    allowed_cpus, parse_trace, run_cyclic, BenchConfig, ClockKind, RunContext, Workers,
    DEFAULT_PRIORITY,
};
use crate::error::{Error, Result};
use crate::experiment::{preset, run_matrix, simulate, ExperimentPlan, RunOptions, PRESETS};
use crate::loadgen::{start_load, LoadSpec, DEFAULT_DISK_BYTES, DEFAULT_MEM_BYTES};
use crate::report::{
    emit_boxplot_svg, emit_json, emit_overshoot, emit_table, emit_verdicts, write_csv, ReportSpec,
    SummaryRow,
};
use crate::samplefile::{persist_samples, FORMAT_VERSION};
use crate::series::TOOLKIT_VERSION;
use crate::sysconfig::{
    apply_isolation, capture_environment, load_state, teardown, verify_config, verify_teardown,
    CgroupFs, IsolationPlan, SysRoot, RT_PARTITION,
};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_PRIVILEGE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_DIFF: u8 = 4;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_DATA: u8 = 65;

pub const DEFAULT_STATE: &str = "/run/rtlat/state.json";

#[derive(Debug, Parser)]
#[command(
    name = "rtlat",
    about = "Cyclic wake-up latency benchmark, load generator, CPU isolation and reports",
    disable_version_flag = true
)]
pub struct Cli {
    /// Print toolkit and file format versions as JSON.
    #[arg(long)]
    pub version: bool,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Measure cyclic firing latency.
    Bench(BenchArgs),
    /// Generate background CPU, memory, sync and disk load.
    Load(LoadArgs),
    /// Apply, verify or undo CPU isolation.
    Configure {
        #[command(subcommand)]
        action: ConfigureCmd,
    },
    /// Run an experiment matrix.
    Experiment {
        #[command(subcommand)]
        action: ExperimentCmd,
    },
    /// Summary statistics, overshoot counts and deadline verdicts.
    Analyze(AnalyzeArgs),
    /// Tables plus an SVG boxplot.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Cycle time, e.g. `1ms`.
    #[arg(long, default_value = "1ms")]
    pub interval: TimeNs,
    #[arg(long, default_value_t = 10_000_000)]
    pub loops: u64,
    /// CPU list, e.g. `2-3`; defaults to the first allowed CPU.
    #[arg(long)]
    pub cpus: Option<CpuSet>,
    /// Worker count (default: one per CPU).
    #[arg(long)]
    pub workers: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_PRIORITY)]
    pub priority: i32,
    /// Replay wake-up delays from a trace file instead of sleeping.
    #[arg(long, value_name = "TRACE")]
    pub simulate: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub warmup: u64,
    /// Start offset between consecutive workers.
    #[arg(long, default_value = "0")]
    pub distribute: TimeNs,
    /// Fail (exit 2) instead of measuring without real-time priority.
    #[arg(long)]
    pub strict: bool,
    /// Row name; the measured OS is appended as `<label>/<os>`.
    #[arg(long, default_value = "bench")]
    pub label: String,
    #[arg(long, env = "RTLAT_STATE", default_value = DEFAULT_STATE)]
    pub state: PathBuf,
    /// Sample file; with several workers `.w<N>` is inserted before the
    /// extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LoadArgs {
    #[arg(long = "cpu", default_value_t = 0)]
    pub cpu_workers: u32,
    #[arg(long = "vm", default_value_t = 0)]
    pub mem_workers: u32,
    #[arg(long = "vm-bytes", default_value_t = DEFAULT_MEM_BYTES)]
    pub mem_bytes: u64,
    #[arg(long = "io", default_value_t = 0)]
    pub io_workers: u32,
    #[arg(long = "hdd", default_value_t = 0)]
    pub disk_workers: u32,
    #[arg(long = "hdd-bytes", default_value_t = DEFAULT_DISK_BYTES)]
    pub disk_bytes: u64,
    /// CPU list; defaults to every allowed CPU.
    #[arg(long)]
    pub cpus: Option<CpuSet>,
    /// Stop after this long; otherwise run until interrupted.
    #[arg(long)]
    pub timeout: Option<TimeNs>,
    #[arg(long)]
    pub scratch: Option<PathBuf>,
    /// Write the load report as JSON here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SysArgs {
    #[arg(long, env = "RTLAT_STATE", default_value = DEFAULT_STATE)]
    pub state: PathBuf,
    /// Alternative root for /proc and /sys (fixture trees).
    #[arg(long, default_value = "/", hide = true)]
    pub sysroot: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum ConfigureCmd {
    Apply {
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        sys: SysArgs,
    },
    /// Exit 4 when the live system differs from the plan.
    Verify {
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        sys: SysArgs,
    },
    Teardown {
        /// Accepted for symmetry; the saved state decides what is undone.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[command(flatten)]
        sys: SysArgs,
    },
    /// Print the environment manifest.
    Env {
        #[command(flatten)]
        sys: SysArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCmd {
    Run {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        plan: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the settle delay between cases.
        #[arg(long)]
        settle: Option<TimeNs>,
        /// Dry run: simulated clock with this many loops, no isolation, no load.
        #[arg(long)]
        simulate_loops: Option<u64>,
        #[arg(long)]
        scratch: Option<PathBuf>,
        #[command(flatten)]
        sys: SysArgs,
    },
    /// List the built-in plans, or print one as JSON.
    Presets {
        name: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long = "in", num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// Task spec JSON: name, period_ns, deadline_ns (optional), runtime_budget_ns.
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// `auto` (a tenth of the period) or a duration.
    #[arg(long, default_value = "auto")]
    pub threshold: Threshold,
    /// `max`, `mean` or a quantile such as `p99.99`.
    #[arg(long, default_value = "max")]
    pub statistic: Statistic,
    #[arg(long)]
    pub allow_degraded: bool,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in", num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Reference line (repeatable); defaults to each input's auto threshold.
    #[arg(long = "ref")]
    pub reference: Vec<TimeNs>,
    #[arg(long, default_value = "Latency distribution")]
    pub title: String,
    #[arg(long, default_value = "auto")]
    pub threshold: Threshold,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

pub fn version_json() -> serde_json::Value {
    json!({
        "name": "rtlat",
        "version": TOOLKIT_VERSION,
        "sample_format": { "magic": "RTFS", "version": FORMAT_VERSION },
        "quantile_method": { "name": QUANTILE_METHOD, "version": QUANTILE_METHOD_VERSION },
        "csv_schema": "label,n,min_ns,mean_ns,stddev_ns,max_ns,threshold_ns,overshoot_count,overshoot_rate",
    })
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::PrivilegeDenied(_) => EXIT_PRIVILEGE,
        Error::Config(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Core(c) => match c {
            rtlat_core::Error::Clock(_) => EXIT_FAILURE,
            _ => EXIT_CONFIG,
        },
        Error::Corrupt { .. } => EXIT_DATA,
        _ => EXIT_FAILURE,
    }
}

/// Parses `std::env::args` and runs the command.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    if cli.version {
        println!("{}", version_json());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("rtlat: a subcommand is required (see --help)");
        return ExitCode::from(EXIT_USAGE);
    };
    match run(command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("rtlat: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(command: Command) -> Result<u8> {
    match command {
        Command::Bench(a) => bench(a),
        Command::Load(a) => load(a),
        Command::Configure { action } => configure(action),
        Command::Experiment { action } => experiment(action),
        Command::Analyze(a) => analyze(a),
        Command::Report(a) => report(a),
    }
}

fn output_path(out: &Path, worker: u32, workers: usize) -> PathBuf {
    if workers <= 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.w{worker}.{}", ext.to_string_lossy()),
        None => format!("{stem}.w{worker}"),
    };
    out.with_file_name(name)
}

fn bench(a: BenchArgs) -> Result<u8> {
    let simulated = a.simulate.is_some();
    let cpus = match a.cpus {
        Some(c) => c,
        None if simulated => CpuSet::first_n(1),
        None => allowed_cpus()?.iter().next().into_iter().collect(),
    };
    let config = BenchConfig {
        interval: a.interval,
        loops: a.loops,
        workers: a.workers.map_or(Workers::PerCpu, Workers::Count),
        cpu_set: cpus,
        priority: a.priority,
        clock: if simulated {
            ClockKind::Simulated
        } else {
            ClockKind::Monotonic
        },
        distribute_offset: a.distribute,
        warmup: a.warmup,
        strict: a.strict,
    };
    let trace = match &a.simulate {
        Some(p) => Some(parse_trace(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?),
        None => None,
    };

    let root = SysRoot::host();
    let mut env = capture_environment(&root);
    let mut ctx = RunContext::default();
    if let Some(state) = load_state(&a.state)? {
        env.applied_plan_checksum = Some(state.plan_checksum.clone());
        ctx.plan_checksum = Some(state.plan_checksum);
        if !simulated && config.cpu_set.is_subset(&state.plan.rt_cpus) {
            ctx.join_cgroup = Some(CgroupFs::probe(&root)?.thread_attach_file(Some(RT_PARTITION)));
        }
    }
    ctx.label = if a.label.contains('/') {
        a.label.clone()
    } else {
        format!("{}/{}", a.label, crate::experiment::flavor_name(env.rt_flavor))
    };
    ctx.env = Some(env);

    info!("measuring {} loops at {} on cpus {}", config.loops, config.interval, config.cpu_set);
    let series = run_cyclic(&config, trace.as_deref(), &ctx)?;
    let count = series.len();
    let mut stdout = io::stdout().lock();
    for s in &series {
        let path = output_path(&a.out, s.meta.worker_id, count);
        persist_samples(s, &path)?;
        writeln!(
            stdout,
            "{}: {} samples from cpu {}{}",
            path.display(),
            s.samples.len(),
            s.meta.cpu,
            if s.meta.degraded { " (degraded)" } else { "" }
        )?;
    }
    Ok(0)
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::Relaxed);
}

fn install_interrupt_handler() {
    let handler = on_signal as extern "C" fn(libc::c_int) as libc::sighandler_t;
    // SAFETY: the handler only stores to an atomic, which is async-signal-safe.
    unsafe {
        libc::signal(libc::SIGINT, handler);
        libc::signal(libc::SIGTERM, handler);
    }
}

fn load(a: LoadArgs) -> Result<u8> {
    let spec = LoadSpec {
        cpu_workers: a.cpu_workers,
        mem_workers: a.mem_workers,
        mem_bytes: a.mem_bytes,
        io_workers: a.io_workers,
        disk_workers: a.disk_workers,
        disk_bytes: a.disk_bytes,
        cpu_set: match a.cpus {
            Some(c) => c,
            None => allowed_cpus()?,
        },
        duration: a.timeout,
        scratch: a.scratch,
    };
    install_interrupt_handler();
    let mut handle = start_load(&spec)?;
    let report = handle.wait(&INTERRUPTED)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match a.report {
        Some(p) => fs::write(&p, text).map_err(|e| Error::io(&p, e))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(0)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn configure(action: ConfigureCmd) -> Result<u8> {
    match action {
        ConfigureCmd::Apply { plan, sys } => {
            let plan = IsolationPlan::load(&plan)?;
            let applied = apply_isolation(&SysRoot::at(&sys.sysroot), &plan, &sys.state)?;
            print_json(&applied)?;
            Ok(0)
        }
        ConfigureCmd::Verify { plan, sys } => {
            let plan = IsolationPlan::load(&plan)?;
            let state = load_state(&sys.state)?;
            let diffs = verify_config(&SysRoot::at(&sys.sysroot), &plan, state.as_ref());
            print_json(&diffs)?;
            Ok(if diffs.is_empty() { 0 } else { EXIT_DIFF })
        }
        ConfigureCmd::Teardown { sys, .. } => {
            let root = SysRoot::at(&sys.sysroot);
            match teardown(&root, &sys.state)? {
                Some(saved) => {
                    let diffs = verify_teardown(&root, &saved);
                    print_json(&diffs)?;
                    Ok(if diffs.is_empty() { 0 } else { EXIT_DIFF })
                }
                None => {
                    eprintln!("rtlat: no saved state at {}, nothing to undo", sys.state.display());
                    Ok(0)
                }
            }
        }
        ConfigureCmd::Env { sys } => {
            print_json(&capture_environment(&SysRoot::at(&sys.sysroot)))?;
            Ok(0)
        }
    }
}

fn experiment(action: ExperimentCmd) -> Result<u8> {
    match action {
        ExperimentCmd::Presets { name: None } => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(0)
        }
        ExperimentCmd::Presets { name: Some(name) } => {
            let online = SysRoot::host().online_cpus().unwrap_or_else(|| CpuSet::first_n(1));
            print_json(&preset(&name, &online)?)?;
            Ok(0)
        }
        ExperimentCmd::Run {
            plan,
            preset: preset_name,
            out_dir,
            settle,
            simulate_loops,
            scratch,
            sys,
        } => {
            let root = SysRoot::at(&sys.sysroot);
            let mut plan = match (plan, preset_name) {
                (Some(p), _) => ExperimentPlan::load(&p)?,
                (None, Some(name)) => {
                    let online = root.online_cpus().unwrap_or_else(|| CpuSet::first_n(1));
                    preset(&name, &online)?
                }
                (None, None) => return Err(Error::config("--plan or --preset is required")),
            };
            if let Some(loops) = simulate_loops {
                simulate(&mut plan, loops);
            }
            let opts = RunOptions {
                out_dir,
                root,
                state_path: sys.state,
                scratch,
                settle,
            };
            let art = run_matrix(&plan, &opts)?;
            let failed = art.cases.iter().filter(|c| c.error.is_some()).count();
            println!(
                "{} cases, {} failed, {} files in {}",
                art.cases.len(),
                failed,
                art.files().count(),
                opts.out_dir.display()
            );
            for c in art.cases.iter().filter(|c| c.error.is_some()) {
                println!("  {}: {}", c.label, c.error.as_deref().unwrap_or(""));
            }
            Ok(0)
        }
    }
}

fn analyze(a: AnalyzeArgs) -> Result<u8> {
    let opts = AnalyzeOptions {
        threshold: a.threshold,
        task: a.task.as_deref().map(load_task).transpose()?,
        statistic: a.statistic,
        allow_degraded: a.allow_degraded,
        boxplot: false,
    };
    let analyses = analyze_files(&a.inputs, &opts)?;
    emit(&analyses, a.format)?;
    Ok(0)
}

fn emit(analyses: &[crate::analysis::Analysis], format: Format) -> Result<()> {
    let mut out = io::stdout().lock();
    match format {
        Format::Table => {
            let rows: Vec<SummaryRow> = analyses.iter().map(SummaryRow::from).collect();
            out.write_all(emit_table(&rows).as_bytes())?;
            out.write_all(b"\n")?;
            out.write_all(emit_overshoot(analyses).as_bytes())?;
            out.write_all(emit_verdicts(analyses).as_bytes())?;
        }
        Format::Csv => {
            let rows: Vec<SummaryRow> = analyses.iter().map(SummaryRow::from).collect();
            write_csv(&mut out, &rows)?;
        }
        Format::Json => out.write_all(emit_json(analyses)?.as_bytes())?,
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<u8> {
    let opts = AnalyzeOptions {
        threshold: a.threshold,
        boxplot: a.svg.is_some(),
        ..AnalyzeOptions::default()
    };
    let analyses = analyze_files(&a.inputs, &opts)?;
    emit(&analyses, a.format)?;
    if let Some(svg) = &a.svg {
        let mut refs = a.reference.clone();
        if refs.is_empty() {
            refs = analyses.iter().map(|x| x.overshoot.threshold).collect();
        }
        refs.sort_unstable();
        refs.dedup();
        let spec = ReportSpec {
            title: a.title.clone(),
            reference_lines: refs,
        };
        let boxes: Vec<_> = analyses.iter().filter_map(|x| x.boxplot.clone()).collect();
        let doc = emit_boxplot_svg(&boxes, &spec)?;
        fs::write(svg, doc).map_err(|e| Error::io(svg, e))?;
    }
    Ok(0)
}
