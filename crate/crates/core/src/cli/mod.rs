//! The `tfsim` command line: `run`, `validate` and `report`.
//!
//! Exit codes: 0 clean, 1 I/O failure, 2 configuration error, 3 an app
//! ended FAILED, 4 integrity alarm (replica divergence or a CRC escape).

pub mod config;
pub mod report;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bench::dpsnn::SpikeRaster;
use crate::bench::fabric::{build_dpsnn, raster_from_items, StencilJob, DPSNN_APP, DPSNN_SINK};
use crate::bench::stencil::checksum;
use crate::dal::{item_u64, parse_app_spec, AppSpec, BehaviorSpec};
use crate::faultinject::parse_fault_spec;
use crate::sim::{AppState, Sim};
use crate::topology::TorusGeometry;
pub use config::{Plan, RunConfig};

/// Default output directory when neither `--out` nor the config names one.
pub const OUT_ENV: &str = "TFSIM_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Exit {
    Clean = 0,
    Io = 1,
    Config = 2,
    AppFailed = 3,
    Integrity = 4,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit(&self) -> Exit {
        match self {
            CliError::Config(_) => Exit::Config,
            CliError::Io(_) => Exit::Io,
        }
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "tfsim", version, about = "Deterministic 3D-torus fabric simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a configuration and write its artifacts.
    Run(RunArgs),
    /// Parse app specs, fault specs or run configs and print canonical forms.
    Validate {
        files: Vec<PathBuf>,
        /// Check fault targets against this torus (default: the topology
        /// of a run config among the files).
        #[arg(long)]
        topology: Option<String>,
    },
    /// Summarize a trace file.
    Report {
        trace: PathBuf,
        /// Also write per-link metrics as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(clap::Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub fault: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub until: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse arguments, run the command, return the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Config.code() } else { 0 };
        }
    };
    match cli.command {
        Command::Run(a) => match cmd_run(&a) {
            Ok(done) => {
                print!("{}", done.summary);
                done.exit.code()
            }
            Err(e) => {
                eprintln!("tfsim: {e}");
                e.exit().code()
            }
        },
        Command::Validate { files, topology } => {
            let geom = match topology.map(|t| t.parse::<TorusGeometry>()) {
                Some(Ok(g)) => Some(g),
                Some(Err(e)) => {
                    eprintln!("tfsim: config error: topology: {e}");
                    return Exit::Config.code();
                }
                None => None,
            };
            let (text, ok) = cmd_validate(&files, geom);
            print!("{text}");
            if ok {
                0
            } else {
                Exit::Config.code()
            }
        }
        Command::Report { trace, csv } => match cmd_report(&trace, csv.as_deref()) {
            Ok(s) => {
                print!("{s}");
                0
            }
            Err(e) => {
                eprintln!("tfsim: {e}");
                e.exit().code()
            }
        },
    }
}

/// Load the config named by `args`, apply the flag overrides and check
/// everything before any simulation starts.
pub fn plan_from_args(args: &RunArgs) -> Result<Plan, CliError> {
    let mut cfg = RunConfig::load(&args.config).map_err(CliError::Config)?;
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(u) = args.until {
        cfg.until = u;
    }
    let mut plan = cfg.plan(&base).map_err(CliError::Config)?;
    if let Some(f) = &args.fault {
        let text = fs::read_to_string(f).map_err(|e| CliError::Config(format!("{}: {e}", f.display())))?;
        let spec = config::load_faults(&text, &plan.sim.geometry)
            .map_err(|e| CliError::Config(format!("{}: {e}", f.display())))?;
        plan.faults = Some(spec);
    }
    if let Some(o) = &args.out {
        plan.out_dir = Some(o.clone());
    }
    Ok(plan)
}

/// A finished simulation with its benchmark results.
pub struct RunResult {
    pub sim: Sim,
    pub stencil: Option<Result<String, String>>,
    pub raster: Option<SpikeRaster>,
    pub exit: Exit,
}

/// Build and run a simulation; writes nothing.
pub fn execute(plan: &Plan) -> Result<RunResult, CliError> {
    let cfg_err = |e: crate::sim::SimError| CliError::Config(e.to_string());
    let mut sim = Sim::new(plan.sim.clone()).map_err(cfg_err)?;
    let mut apps = plan.apps.clone();
    if let Some(d) = &plan.dpsnn {
        let net = build_dpsnn(d).map_err(|e| CliError::Config(e.to_string()))?;
        let spec = apps.get_or_insert_with(|| AppSpec::from_apps(Vec::new()));
        spec.apps.push(net);
        for members in spec.fsm.states.values_mut() {
            members.insert(DPSNN_APP.to_string());
        }
    }
    if let Some(a) = apps {
        sim.deploy_apps(a).map_err(cfg_err)?;
    }
    if let Some(f) = &plan.faults {
        sim.arm(f).map_err(cfg_err)?;
    }
    let job = match &plan.stencil {
        Some(s) => Some(StencilJob::spawn(&mut sim, s).map_err(|e| CliError::Config(e.to_string()))?),
        None => None,
    };
    sim.run_until(plan.until).map_err(cfg_err)?;

    let stencil = job.map(|j| {
        if !j.finished(&sim) {
            return Err(format!("unfinished at cycle {}", sim.now()));
        }
        j.result().map(|f| checksum(&f)).map_err(|e| e.to_string())
    });
    let raster = plan.dpsnn.as_ref().and_then(|_| raster_from_items(&sim.app_output(DPSNN_APP, DPSNN_SINK)?));
    let integrity = !sim.alarms().is_empty() || sim.stats().crc_escapes > 0;
    let failed = sim.app_statuses().iter().any(|s| s.state == AppState::Failed)
        || stencil.as_ref().is_some_and(|r| r.as_ref().is_err_and(|e| !e.starts_with("unfinished")));
    let exit = classify(integrity, failed);
    Ok(RunResult { sim, stencil, raster, exit })
}

/// An integrity alarm outranks a failed app.
pub fn classify(integrity_alarm: bool, app_failed: bool) -> Exit {
    if integrity_alarm {
        Exit::Integrity
    } else if app_failed {
        Exit::AppFailed
    } else {
        Exit::Clean
    }
}

pub struct RunDone {
    pub exit: Exit,
    pub trace_hash: String,
    pub out_dir: PathBuf,
    pub summary: String,
}

pub fn cmd_run(args: &RunArgs) -> Result<RunDone, CliError> {
    let plan = plan_from_args(args)?;
    let out_dir = plan
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("tfsim-out"));
    let result = execute(&plan)?;
    write_artifacts(&out_dir, &result)?;
    let trace_hash = result.sim.trace_hash();
    let mut summary = String::new();
    let _ = writeln!(summary, "trace_hash {trace_hash}");
    let _ = writeln!(summary, "records {} final_t {}", result.sim.trace().len(), result.sim.now());
    for s in result.sim.app_statuses() {
        let _ = writeln!(summary, "app {} {}", s.name, s.state);
    }
    if let Some(s) = &result.stencil {
        let _ = writeln!(summary, "stencil {}", s.as_deref().unwrap_or_else(|e| e));
    }
    let _ = writeln!(summary, "artifacts {}", out_dir.display());
    let _ = writeln!(summary, "exit {}", result.exit.code());
    Ok(RunDone { exit: result.exit, trace_hash, out_dir, summary })
}

/// Artifact file names inside the output directory.
pub mod artifact {
    pub const TRACE: &str = "trace.log";
    pub const HASH: &str = "trace.sha256";
    pub const METRICS: &str = "metrics.csv";
    pub const LINKS: &str = "links.csv";
    pub const FAULTS: &str = "faults.txt";
    pub const APPS: &str = "apps.txt";
    pub const OUTPUTS: &str = "outputs";
}

pub fn write_artifacts(dir: &Path, r: &RunResult) -> Result<(), CliError> {
    let sim = &r.sim;
    fs::create_dir_all(dir).map_err(io(dir))?;
    let put = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(io(&p))
    };
    let mut trace = Vec::new();
    sim.trace().write_to(&mut trace).map_err(io(dir))?;
    put(artifact::TRACE, String::from_utf8(trace).expect("trace is ASCII"))?;
    put(artifact::HASH, format!("{}\n", sim.trace_hash()))?;

    let st = sim.stats();
    let mut m = String::from("metric,value\n");
    for (k, v) in [
        ("final_t", sim.now()),
        ("trace_records", sim.trace().len()),
        ("injected", st.injected),
        ("delivered", st.delivered),
        ("dropped_probe", st.dropped_probe),
        ("dropped_crc", st.dropped_crc),
        ("lost", st.lost),
        ("undeliverable", st.undeliverable),
        ("corrupted", st.corrupted),
        ("crc_escapes", st.crc_escapes),
        ("in_flight", st.in_flight),
        ("alarms", sim.alarms().len() as u64),
        ("exit", r.exit.code() as u64),
    ] {
        let _ = writeln!(m, "{k},{v}");
    }
    put(artifact::METRICS, m)?;

    let window = sim.now().max(1) as f64;
    let mut l = String::from("link,packets,wire_bytes,payload_bytes,busy_cycles,utilization\n");
    for s in sim.link_states() {
        let _ = writeln!(
            l,
            "{},{},{},{},{},{:.6}",
            s.id,
            s.packets,
            s.wire_bytes,
            s.payload_bytes,
            s.busy_cycles,
            s.busy_cycles as f64 / window
        );
    }
    put(artifact::LINKS, l)?;
    put(artifact::FAULTS, sim.master_table().report(sim.geometry()))?;

    let mut a = String::new();
    for s in sim.app_statuses() {
        let _ = write!(
            a,
            "app={} state={} epoch={} restarts={} firings={}",
            s.name, s.state, s.epoch, s.restarts, s.firings
        );
        if !s.lost_replicas.is_empty() {
            let lost: Vec<String> = s.lost_replicas.iter().map(u8::to_string).collect();
            let _ = write!(a, " lost_replicas={}", lost.join(","));
        }
        if let Some(why) = &s.reason {
            let _ = write!(a, " reason={}", why.replace(' ', "_"));
        }
        a.push('\n');
    }
    if let Some(s) = &r.stencil {
        match s {
            Ok(sum) => {
                let _ = writeln!(a, "stencil checksum={sum}");
            }
            Err(e) => {
                let _ = writeln!(a, "stencil error={}", e.replace(' ', "_"));
            }
        }
    }
    for msg in sim.alarms() {
        let _ = writeln!(a, "alarm {msg}");
    }
    put(artifact::APPS, a)?;

    let outs = dir.join(artifact::OUTPUTS);
    fs::create_dir_all(&outs).map_err(io(&outs))?;
    for s in sim.app_statuses() {
        for (sink, items) in sim.app_outputs(&s.name) {
            let raster = sim_behavior(sim, &s.name, &sink).is_some_and(|b| matches!(b, BehaviorSpec::RasterSink));
            let body = if raster {
                raster_from_items(&items).map(|r| r.to_text()).unwrap_or_default()
            } else {
                items.iter().map(|i| format!("{}\n", item_u64(i))).collect()
            };
            let p = outs.join(format!("{}.{sink}.txt", s.name));
            fs::write(&p, body).map_err(io(&p))?;
        }
    }
    Ok(())
}

fn sim_behavior(sim: &Sim, app: &str, proc_id: &str) -> Option<BehaviorSpec> {
    sim.app_spec(app)?.process(proc_id).map(|p| p.behavior.clone())
}

/// One diagnostic block per file; `false` if any file is invalid. Fault
/// targets are checked against `geom`, or else against the topology of
/// the first valid run config in `files`.
pub fn cmd_validate(files: &[PathBuf], geom: Option<TorusGeometry>) -> (String, bool) {
    let mut out = String::new();
    let mut ok = true;
    let geom = geom.or_else(|| {
        files.iter().filter(|f| f.extension().is_some_and(|e| e == "toml")).find_map(|f| {
            let cfg = RunConfig::load(f).ok()?;
            cfg.topology.parse().ok()
        })
    });
    for f in files {
        match validate_file(f, geom.as_ref()) {
            Ok(canon) => {
                let _ = writeln!(out, "# {}: ok", f.display());
                out.push_str(&canon);
                if !canon.ends_with('\n') && !canon.is_empty() {
                    out.push('\n');
                }
            }
            Err(e) => {
                ok = false;
                let _ = writeln!(out, "# {}: {e}", f.display());
            }
        }
    }
    (out, ok)
}

/// What kind of document a file holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpecKind {
    RunConfig,
    Fault,
    App,
}

/// `.toml` files are run configs; a text whose first clause opens with an
/// app-spec keyword is an app spec; anything else is a fault spec.
pub fn sniff(path: &Path, text: &str) -> SpecKind {
    if path.extension().is_some_and(|e| e == "toml") {
        return SpecKind::RunConfig;
    }
    let first = text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).find(|l| !l.is_empty()).unwrap_or("");
    let head = first.split(['=', ' ']).next().unwrap_or("");
    if ["app", "process", "channel", "state", "initial", "transition", "trigger"].contains(&head) {
        SpecKind::App
    } else {
        SpecKind::Fault
    }
}

fn validate_file(path: &Path, geom: Option<&TorusGeometry>) -> Result<String, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    match sniff(path, &text) {
        SpecKind::RunConfig => {
            let cfg = RunConfig::parse(&text)?;
            let plan = cfg.plan(path.parent().unwrap_or(Path::new("")))?;
            Ok(format!(
                "topology={} seed={} until={} apps={} faults={}\n",
                plan.sim.geometry,
                plan.sim.seed,
                plan.until,
                plan.apps.map_or(0, |a| a.apps.len()),
                plan.faults.map_or(0, |f| f.clauses.len())
            ))
        }
        SpecKind::Fault => {
            let spec = parse_fault_spec(&text).map_err(|e| e.to_string())?;
            if let Some(g) = geom {
                spec.validate(g).map_err(|e| e.to_string())?;
            }
            Ok(spec.to_string())
        }
        SpecKind::App => parse_app_spec(&text).map(|s| s.to_string()).map_err(|e| e.to_string()),
    }
}

pub fn cmd_report(trace: &Path, csv: Option<&Path>) -> Result<String, CliError> {
    let text = fs::read_to_string(trace).map_err(io(trace))?;
    let r = report::analyze(&text).map_err(|e| CliError::Config(format!("{}: {e}", trace.display())))?;
    if let Some(p) = csv {
        fs::write(p, r.links_csv()).map_err(io(p))?;
    }
    Ok(r.summary())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PIPE: &str = "app name=p\n\
        process app=p id=src behavior=source(count=50)\n\
        process app=p id=out behavior=sink\n\
        channel app=p from=src to=out\n";

    fn setup(config: &str, files: &[(&str, &str)]) -> tempfile::TempDir {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join("run.toml"), config).unwrap();
        for (name, body) in files {
            std::fs::write(d.path().join(name), body).unwrap();
        }
        d
    }

    fn args(d: &Path, out: &str) -> RunArgs {
        RunArgs { config: d.join("run.toml"), fault: None, seed: None, until: None, out: Some(d.join(out)) }
    }

    #[test]
    fn same_config_gives_identical_artifacts() {
        let d = setup("topology = \"2x2x2\"\nuntil = 300000\napps = \"p.apps\"\n", &[("p.apps", PIPE)]);
        let a = cmd_run(&args(d.path(), "a")).unwrap();
        let b = cmd_run(&args(d.path(), "b")).unwrap();
        assert_eq!(a.exit, Exit::Clean);
        assert_eq!(a.trace_hash, b.trace_hash);
        for f in [artifact::TRACE, artifact::METRICS, artifact::LINKS, artifact::FAULTS, artifact::APPS] {
            assert_eq!(std::fs::read(a.out_dir.join(f)).unwrap(), std::fs::read(b.out_dir.join(f)).unwrap(), "{f}");
        }
        let out = std::fs::read_to_string(a.out_dir.join("outputs/p.out.txt")).unwrap();
        assert_eq!(out.lines().count(), 50);
        let hash = std::fs::read_to_string(a.out_dir.join(artifact::HASH)).unwrap();
        assert_eq!(hash.trim(), a.trace_hash);
    }

    #[test]
    fn missing_fault_file_is_config_error_without_artifacts() {
        let d = setup("topology = \"2x2x2\"\n", &[]);
        let mut a = args(d.path(), "out");
        a.fault = Some(d.path().join("absent.faults"));
        let e = cmd_run(&a).err().unwrap();
        assert_eq!(e.exit(), Exit::Config);
        assert!(!d.path().join("out").exists());
    }

    #[test]
    fn zero_horizon_runs_clean() {
        let d = setup("topology = \"2x2x2\"\n[lofamo]\nenabled = false\n", &[]);
        let mut a = args(d.path(), "out");
        a.until = Some(0);
        let done = cmd_run(&a).unwrap();
        assert_eq!(done.exit, Exit::Clean);
        assert!(std::fs::read_to_string(done.out_dir.join(artifact::TRACE)).unwrap().is_empty());
    }

    #[test]
    fn losing_every_tile_exits_failed() {
        let net = "app name=p\n\
            process app=p id=src behavior=source(count=1000000)\n\
            process app=p id=out behavior=sink\n\
            channel app=p from=src to=out\n";
        let kills = "kind=tile_kill_host where=tile(1) when=at 100000\n\
            kind=tile_kill_dnp where=tile(0) when=at 100000\n";
        let d = setup(
            "topology = \"2x1x1\"\nuntil = 300000\napps = \"p.apps\"\nfaults = \"k.faults\"\n",
            &[("p.apps", net), ("k.faults", kills)],
        );
        assert_eq!(cmd_run(&args(d.path(), "out")).unwrap().exit, Exit::AppFailed);
    }

    #[test]
    fn exit_precedence() {
        assert_eq!(classify(true, true), Exit::Integrity);
        assert_eq!(classify(false, true), Exit::AppFailed);
        assert_eq!(classify(false, false).code(), 0);
    }

    #[test]
    fn validate_names_semantic_errors() {
        let d = setup(
            "topology = \"2x2x2\"\n",
            &[("ok.apps", PIPE), ("bad.faults", "kind=tile_kill_host where=tile(99) when=at 5\n")],
        );
        let (text, ok) = cmd_validate(&[d.path().join("ok.apps"), d.path().join("run.toml")], None);
        assert!(ok, "{text}");
        assert!(text.contains("process app=p id=src"));
        let (text, ok) = cmd_validate(&[d.path().join("bad.faults")], None);
        assert!(ok, "{text}");
        let (text, ok) = cmd_validate(&[d.path().join("run.toml"), d.path().join("bad.faults")], None);
        assert!(!ok);
        assert!(text.contains("99"), "{text}");
    }

    #[test]
    fn report_is_read_only_and_idempotent() {
        let d = setup("topology = \"2x2x2\"\nuntil = 200000\napps = \"p.apps\"\n", &[("p.apps", PIPE)]);
        let done = cmd_run(&args(d.path(), "out")).unwrap();
        let trace = done.out_dir.join(artifact::TRACE);
        let before = std::fs::read(&trace).unwrap();
        let r1 = cmd_report(&trace, None).unwrap();
        let r2 = cmd_report(&trace, None).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(before, std::fs::read(&trace).unwrap());
        assert!(r1.contains("p completed"));
    }
}
