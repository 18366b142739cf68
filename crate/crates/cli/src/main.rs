use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chemofv::config::{self, SimConfig};
use chemofv::error::StudyError;
use chemofv::experiment::{self, RunError};
use chemofv::StepError;
use clap::{Parser, Subcommand};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "chemofv", version, about = "Finite-volume chemotaxis-consumption simulator")]
struct Cli {
    /// Output directory; defaults to $CHEMOFV_OUT/<config name>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for data-parallel kernels and concurrent members.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Write field snapshots at every k-th output time (0: first and last only).
    #[arg(long, global = true)]
    snapshots: Option<usize>,

    /// Default output root.
    #[arg(long, env = "CHEMOFV_OUT", default_value = "runs", hide_env_values = true)]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation.
    Run { config: PathBuf },
    /// Run a base config once per override object in a JSON list.
    Sweep { base: PathBuf, overrides: PathBuf },
    /// Compare runs across the study ε list.
    EpsStudy { base: PathBuf },
    /// Spatial and temporal refinement studies.
    Converge { base: PathBuf },
    /// Validate a config and print its normalized form.
    Check { config: PathBuf },
}

const EXIT_IO: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;

struct Failure(u8, String);

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(EXIT_IO, format!("cannot read {}: {e}", path.display())))
}

fn parse_json(path: &Path) -> Result<Value, Failure> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| Failure(EXIT_VALIDATION, format!("{} is not valid JSON: {e}", path.display())))
}

fn load_config(path: &Path, snapshots: Option<usize>) -> Result<SimConfig, Failure> {
    let mut cfg = config::validate(&read(path)?).map_err(|issues| {
        let lines: Vec<String> = issues.iter().map(|i| format!("  {i}")).collect();
        Failure(EXIT_VALIDATION, format!("invalid config {}:\n{}", path.display(), lines.join("\n")))
    })?;
    if let Some(k) = snapshots {
        cfg.output.snapshot_every = k;
    }
    Ok(cfg)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn out_dir(cli: &Cli, path: &Path, suffix: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        cli.out_root.join(format!("{stem}{suffix}"))
    })
}

fn run_error(e: RunError) -> Failure {
    Failure(e.exit_code() as u8, e.to_string())
}

fn study_error(e: Box<dyn std::error::Error + Send + Sync>) -> Failure {
    let code = match e.downcast_ref::<StudyError>() {
        Some(StudyError::Run(StepError::NonConvergence { .. } | StepError::SolverFailure { .. })) => {
            EXIT_NONCONVERGENCE
        }
        Some(StudyError::Invalid(_) | StudyError::Hypothesis(_)) => EXIT_VALIDATION,
        _ => EXIT_IO,
    };
    Failure(code, e.to_string())
}

fn print_json(value: Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("serializable"));
}

fn dispatch(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Check { config: path } => {
            let cfg = load_config(path, cli.snapshots)?;
            println!("{}", config::emit(&cfg));
            Ok(0)
        }
        Command::Run { config: path } => {
            let cfg = load_config(path, cli.snapshots)?;
            let out = out_dir(cli, path, "");
            let outcome = experiment::run(&cfg, &out, &base_dir(path)).map_err(run_error)?;
            let m = &outcome.manifest;
            println!("status: {:?}", m.status);
            if let Some(msg) = &m.message {
                println!("message: {msg}");
            }
            if let Some(b) = outcome.verdict.boundedness {
                println!("sup u: {:.6e} (bounded: {})", b.sup_all, b.bounded);
            }
            println!("steps: {}, wall time: {:.2} s", outcome.verdict.steps, m.wall_seconds);
            println!("artifacts in {}", out.display());
            Ok(m.status.exit_code() as u8)
        }
        Command::Sweep { base, overrides } => {
            let base_doc = parse_json(base)?;
            let list = match parse_json(overrides)? {
                Value::Array(items) => items,
                _ => return Err(Failure(EXIT_VALIDATION, "overrides must be a JSON list of objects".into())),
            };
            let mut base_doc = base_doc;
            if let Some(k) = cli.snapshots {
                config::merge(&mut base_doc, &serde_json::json!({"output": {"snapshot_every": k}}));
            }
            let out = out_dir(cli, base, "_sweep");
            let summary = experiment::sweep(&base_doc, &list, &out, &base_dir(base)).map_err(run_error)?;
            for r in &summary.rows {
                println!(
                    "{}  m={}  m>d/2={}  status={}  sup_u={}  bounded={}",
                    r.dir,
                    r.m.map_or("-".into(), |m| m.to_string()),
                    r.above_threshold.map_or("-".into(), |b| b.to_string()),
                    r.status,
                    r.sup_u.map_or("-".into(), |s| format!("{s:.6e}")),
                    r.bounded.map_or("-".into(), |b| b.to_string()),
                );
            }
            println!("summary in {}", out.join("summary.json").display());
            Ok(summary.exit_code() as u8)
        }
        Command::EpsStudy { base } => {
            let cfg = load_config(base, cli.snapshots)?;
            let out = out_dir(cli, base, "_eps");
            let table = experiment::eps_study(&cfg, &out).map_err(study_error)?;
            print_json(serde_json::to_value(&table).expect("serializable"));
            Ok(0)
        }
        Command::Converge { base } => {
            let cfg = load_config(base, cli.snapshots)?;
            let out = out_dir(cli, base, "_converge");
            let report = experiment::converge(&cfg, &out).map_err(study_error)?;
            print_json(serde_json::to_value(&report).expect("serializable"));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("--workers must be at least 1");
            return ExitCode::from(EXIT_VALIDATION);
        }
        chemofv::exec::set_workers(n);
    }
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
