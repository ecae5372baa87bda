//! The `rampc` command line: synthesize artifacts, run scenarios, tabulate
//! logs.
//!
//! Exit codes are stable: 0 ok, 1 usage or config error, 2 artifact
//! validation failure, 3 a runtime guarantee event (infeasible QP, falsified
//! parameter set, constraint violation, lost containment).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Overrides, ScenarioConfig};
use crate::controller::ControlMode;
use crate::sim::{run_batch, synthesize_scenario, RunLog, RunSummary};
use crate::synthesis::SynthesisArtifacts;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_EVENT: i32 = 3;

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "RAMPC_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "rampc", version, about = "Robust adaptive tube MPC for quadrotor scenarios")]
pub struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Offline synthesis and validation; reuses cached artifacts.
    Synthesize(SynthesizeArgs),
    /// Closed-loop runs writing CSV and JSON logs plus a summary.
    Run(RunArgs),
    /// Tabulates JSON run logs and flags unhealthy runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out_dir: PathBuf,
    /// Ignore cached artifacts.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file; repeat to run several in parallel.
    #[arg(long, required = true)]
    pub config: Vec<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run this many consecutive seeds starting at the scenario (or
    /// `--seed`) seed.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub no_noise: bool,
    /// Inject the efficiency drop at this step.
    #[arg(long)]
    pub fail_at: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON run logs written by `run`.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Adaptive,
    RobustBaseline,
}

impl From<ModeArg> for ControlMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Adaptive => ControlMode::Adaptive,
            ModeArg::RobustBaseline => ControlMode::RobustBaseline,
        }
    }
}

/// Exit code for an error escaping a command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_)
        | Error::ContractionUnreachable { .. }
        | Error::TerminalCostUnsatisfiable
        | Error::NotStabilizable(_) => EXIT_VALIDATION,
        Error::ModelFalsified { .. } | Error::Infeasible { .. } | Error::Solver(_) => EXIT_EVENT,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    execute(&cli)
}

pub fn execute(cli: &Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Synthesize(a) => cmd_synthesize(a),
        Command::Run(a) => cmd_run(a),
        Command::Report(a) => cmd_report(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn artifacts_path(out_dir: &Path, cfg: &ScenarioConfig) -> PathBuf {
    out_dir.join(format!("{}.artifacts.json", cfg.name))
}

pub fn validation_path(out_dir: &Path, cfg: &ScenarioConfig) -> PathBuf {
    out_dir.join(format!("{}.validation.txt", cfg.name))
}

/// Cached artifacts for `cfg` if the file exists and was produced from the
/// same synthesis inputs.
pub fn cached_artifacts(out_dir: &Path, cfg: &ScenarioConfig) -> Option<SynthesisArtifacts> {
    let text = fs::read_to_string(artifacts_path(out_dir, cfg)).ok()?;
    let a = SynthesisArtifacts::from_json(&text).ok()?;
    (a.input_hash == cfg.synthesis_hash()).then_some(a)
}

/// Loads cached artifacts or synthesises, validates and caches them. Only
/// artifacts that pass validation are written, so a cache hit needs no
/// re-validation.
pub fn load_or_synthesize(out_dir: &Path, cfg: &ScenarioConfig, force: bool) -> Result<(SynthesisArtifacts, bool)> {
    if !force {
        if let Some(a) = cached_artifacts(out_dir, cfg) {
            log::info!("{}: cached artifacts {}", cfg.name, &a.input_hash[..12]);
            return Ok((a, true));
        }
    }
    log::info!("{}: synthesizing", cfg.name);
    let (artifacts, report) = synthesize_scenario(cfg)?;
    fs::create_dir_all(out_dir)?;
    fs::write(validation_path(out_dir, cfg), report.to_string())?;
    if !report.passed() {
        return Err(Error::Validation(format!(
            "{}: {} (report in {})",
            cfg.name,
            report.failures().join(", "),
            validation_path(out_dir, cfg).display()
        )));
    }
    fs::write(artifacts_path(out_dir, cfg), artifacts.to_json()?)?;
    Ok((artifacts, false))
}

fn cmd_synthesize(a: &SynthesizeArgs) -> Result<i32> {
    let cfg = ScenarioConfig::load(&a.config)?;
    let (artifacts, cached) = load_or_synthesize(&a.out_dir, &cfg, a.force)?;
    let path = artifacts_path(&a.out_dir, &cfg);
    println!(
        "{} {} ({}; λ = {}, certified {:.6}, {} tube rows)",
        if cached { "cache hit" } else { "wrote" },
        path.display(),
        &artifacts.input_hash[..12],
        artifacts.lambda,
        artifacts.lambda_certified,
        artifacts.n_x()
    );
    Ok(EXIT_OK)
}

/// File stem of a run's logs.
pub fn run_stem(cfg: &ScenarioConfig) -> String {
    let mode = match cfg.controller.mode {
        ControlMode::Adaptive => "adaptive",
        ControlMode::RobustBaseline => "robust-baseline",
    };
    format!("{}-{mode}-seed{}", cfg.name, cfg.seed)
}

fn cmd_run(a: &RunArgs) -> Result<i32> {
    let mut base = Vec::new();
    for path in &a.config {
        let mut cfg = ScenarioConfig::load(path)?;
        cfg.apply(&Overrides {
            seed: a.seed,
            mode: a.mode.map(Into::into),
            no_noise: a.no_noise,
            fail_at: a.fail_at,
        })?;
        let (artifacts, _) = load_or_synthesize(&a.out_dir, &cfg, false)?;
        base.push((cfg, artifacts));
    }
    let mut jobs = Vec::new();
    for (cfg, artifacts) in &base {
        for i in 0..a.seeds {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(i);
            jobs.push((c, artifacts));
        }
    }
    let results = run_batch(&jobs);

    let mut code = EXIT_OK;
    for ((cfg, _), result) in jobs.iter().zip(results) {
        let log = result?;
        let stem = run_stem(cfg);
        let csv_path = a.out_dir.join(format!("{stem}.csv"));
        let json_path = a.out_dir.join(format!("{stem}.json"));
        log.write_csv(std::io::BufWriter::new(fs::File::create(&csv_path)?))?;
        fs::write(&json_path, log.to_json()?)?;
        let summary = log.summary();
        println!("{summary}");
        println!("logs                {} {}\n", csv_path.display(), json_path.display());
        if !summary.healthy() {
            code = EXIT_EVENT;
        }
    }
    Ok(code)
}

/// Why a run is flagged in a report; empty when healthy.
pub fn flags(s: &RunSummary) -> Vec<&'static str> {
    let mut f = Vec::new();
    if s.max_state_violation > 1e-9 || s.max_thrust_violation > 1e-9 {
        f.push("violation");
    }
    if s.containment_failures > 0 {
        f.push("containment");
    }
    if s.infeasible_steps > 0 {
        f.push("infeasible");
    }
    if s.falsified_steps > 0 {
        f.push("falsified");
    }
    if s.aborted.is_some() {
        f.push("aborted");
    }
    f
}

fn cmd_report(a: &ReportArgs) -> Result<i32> {
    let mut out = std::io::stdout().lock();
    let w = a.logs.iter().map(|p| p.display().to_string().chars().count()).max().unwrap_or(0).max(3);
    writeln!(
        out,
        "{:<w$} {:>6} {:>6} {:>10} {:>6} {:>6} {:>6} {:>9} {:>9}  flags",
        "run", "seed", "steps", "max viol", "cont", "infeas", "fals", "final err", "med ms"
    )?;
    let mut corrupt = false;
    let mut flagged = false;
    for path in &a.logs {
        let name = path.display().to_string();
        let log = fs::read_to_string(path).map_err(Error::from).and_then(|t| RunLog::from_json(&t));
        let log = match log {
            Ok(l) => l,
            Err(e) => {
                corrupt = true;
                writeln!(out, "{name:<w$} unreadable log: {e}")?;
                continue;
            }
        };
        let s = log.summary();
        let f = flags(&s);
        flagged |= !f.is_empty();
        writeln!(
            out,
            "{:<w$} {:>6} {:>6} {:>10.2e} {:>6} {:>6} {:>6} {:>9.4} {:>9.3}  {}",
            name,
            s.seed,
            s.steps,
            s.max_state_violation.max(s.max_thrust_violation).max(0.0),
            s.containment_failures,
            s.infeasible_steps,
            s.falsified_steps,
            s.final_tracking_error,
            s.median_solve_ms,
            if f.is_empty() { "-".to_string() } else { f.join(",") }
        )?;
    }
    Ok(if corrupt {
        EXIT_USAGE
    } else if flagged {
        EXIT_EVENT
    } else {
        EXIT_OK
    })
}
