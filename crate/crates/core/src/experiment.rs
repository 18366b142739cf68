//! Experiment drivers: single runs, parameter sweeps and the verification
//! studies, each writing its artifacts into an output directory.
//!
//! A run directory holds
//!
//! * `config.json`: the normalized config,
//! * `monitor.csv`: one row of monitored functionals per output time,
//! * `diagnostics.csv`: step size, rejections and solver statistics per step,
//! * `snapshots/`: field snapshots,
//! * `verdict.json`: invariant ledger and boundedness verdict,
//! * `manifest.json`: config hash, wall times, status and the file list.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::config::{self, ConfigIssue, SimConfig};
use crate::exec;
use crate::monitors::{boundedness_verdict, BoundednessVerdict, InvariantLedger, MonitorSuite};
use crate::snapshot::{self, fmt_f64, Encoding};
use crate::stepper::{self, Observer, State, StepRecord};
use crate::verification::{self, ConvergenceReport, EpsTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    InvariantViolation,
    NonConvergence,
}

impl RunStatus {
    /// Process exit code for this status.
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Success => 0,
            RunStatus::NonConvergence => 3,
            RunStatus::InvariantViolation => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_seconds: f64,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Paths relative to the run directory; includes `manifest.json`.
    pub artifacts: Vec<String>,
}

#[derive(Debug)]
pub enum RunError {
    Validation(Vec<ConfigIssue>),
    Io(io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Validation(issues) => {
                writeln!(f, "invalid config:")?;
                for i in issues {
                    writeln!(f, "  {i}")?;
                }
                Ok(())
            }
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e)
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()
}

/// Writes snapshots and keeps the step records.
struct Recorder {
    dir: PathBuf,
    every: usize,
    encoding: Encoding,
    outputs: usize,
    steps: Vec<StepRecord>,
    written: Vec<String>,
    error: Option<io::Error>,
}

impl Recorder {
    fn write(&mut self, state: &State, index: usize) {
        if self.error.is_some() {
            return;
        }
        let ext = match self.encoding {
            Encoding::F64le => "bin",
            Encoding::Csv => "csv",
        };
        for (name, field) in [("u", &state.u), ("v", &state.v)] {
            let rel = format!("snapshots/{name}_{index:05}.{ext}");
            if self.written.contains(&rel) {
                continue;
            }
            match snapshot::save(&self.dir.join(&rel), field, self.encoding, Some(name), Some(state.t)) {
                Ok(()) => self.written.push(rel),
                Err(e) => {
                    self.error = Some(e);
                    return;
                }
            }
        }
    }
}

impl Observer for Recorder {
    fn on_output(&mut self, state: &State) {
        let k = self.outputs;
        self.outputs += 1;
        if k == 0 || (self.every > 0 && k % self.every == 0) {
            self.write(state, k);
        }
    }

    fn on_step(&mut self, _prev: &State, _next: &State, record: &StepRecord) {
        self.steps.push(*record);
    }
}

fn write_diagnostics(path: &Path, steps: &[StepRecord]) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "t,dt,rejections,cg_iterations,cg_residual,min_u,min_v,max_v")?;
    for s in steps {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(s.t),
            fmt_f64(s.dt),
            s.rejections,
            s.cg_iterations,
            fmt_f64(s.cg_residual),
            fmt_f64(s.min_u),
            fmt_f64(s.min_v),
            fmt_f64(s.max_v)
        )?;
    }
    w.flush()
}

/// Contents of `verdict.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunVerdict {
    pub ledger: Option<InvariantLedger>,
    pub mass_ok: bool,
    pub max_principle_ok: bool,
    pub energy_ok: bool,
    pub kappa_ok: bool,
    pub boundedness: Option<BoundednessVerdict>,
    /// `m > d/2`, the regime where boundedness is expected.
    pub boundedness_regime: bool,
    pub final_time: f64,
    pub steps: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub dt_mean: f64,
}

/// Everything a run produced, for callers that want more than the files.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub verdict: RunVerdict,
    pub monitor_csv: PathBuf,
}

/// Runs `config` and writes its artifacts into `out`. Relative file paths
/// in the config resolve against `base_dir`.
///
/// Solver failures and invariant violations are reported through the
/// manifest status; only validation and I/O problems are errors.
pub fn run(config: &SimConfig, out: &Path, base_dir: &Path) -> Result<RunOutcome, RunError> {
    let started = unix_now();
    let clock = Instant::now();
    let problem = config
        .build_in(base_dir)
        .map_err(|e| RunError::Validation(vec![ConfigIssue { path: "initial".into(), message: e.0 }]))?;
    fs::create_dir_all(out.join("snapshots"))?;
    fs::write(out.join("config.json"), config::emit(config) + "\n")?;
    let mut artifacts = vec!["config.json".to_string()];

    let suite = MonitorSuite::new(problem.params, problem.phi.clone(), problem.bounds, problem.monitors.clone())
        .map_err(|e| RunError::Validation(vec![ConfigIssue { path: "monitors".into(), message: e.to_string() }]))?;
    let recorder = Recorder {
        dir: out.to_path_buf(),
        every: config.output.snapshot_every,
        encoding: config.output.encoding,
        outputs: 0,
        steps: Vec::new(),
        written: Vec::new(),
        error: None,
    };
    let mut observers = (suite, recorder);
    let mut control = problem.control;
    let result = stepper::advance(
        problem.initial,
        &problem.params,
        &problem.phi,
        &mut control,
        problem.schedule,
        problem.horizon,
        &mut observers,
    );
    let (suite, mut recorder) = observers;
    let mut message = None;
    let mut status = RunStatus::Success;
    match &result {
        Ok(final_state) => {
            let k = recorder.outputs.saturating_sub(1);
            recorder.write(final_state, k);
        }
        Err(e) => {
            status = RunStatus::NonConvergence;
            message = Some(e.to_string());
        }
    }
    if let Some(e) = recorder.error.take() {
        return Err(e.into());
    }

    let monitor_csv = out.join("monitor.csv");
    suite.write_csv(BufWriter::new(fs::File::create(&monitor_csv)?))?;
    artifacts.push("monitor.csv".into());
    write_diagnostics(&out.join("diagnostics.csv"), &recorder.steps)?;
    artifacts.push("diagnostics.csv".into());
    artifacts.extend(recorder.written.iter().cloned());

    let ledger = suite.ledger;
    let dts: Vec<f64> = recorder.steps.iter().map(|s| s.dt).collect();
    let verdict = RunVerdict {
        ledger,
        mass_ok: ledger.is_none_or(|l| l.mass_ok()),
        max_principle_ok: ledger.is_none_or(|l| l.max_principle_ok()),
        energy_ok: ledger.is_none_or(|l| l.energy_ok()),
        kappa_ok: ledger.is_none_or(|l| l.kappa_always_ok),
        boundedness: boundedness_verdict(&suite.reports, config.study.horizon_split).ok(),
        boundedness_regime: problem.params.boundedness_regime(),
        final_time: suite.reports.last().map_or(0.0, |r| r.t),
        steps: dts.len(),
        dt_min: dts.iter().cloned().fold(f64::INFINITY, f64::min),
        dt_max: dts.iter().cloned().fold(0.0, f64::max),
        dt_mean: if dts.is_empty() { 0.0 } else { dts.iter().sum::<f64>() / dts.len() as f64 },
    };
    if status == RunStatus::Success && !ledger.is_none_or(|l| l.all_ok()) {
        status = RunStatus::InvariantViolation;
        message = Some("a conserved or monotone quantity left its tolerance; see verdict.json".into());
    }
    write_json(&out.join("verdict.json"), &verdict)?;
    artifacts.push("verdict.json".into());
    artifacts.push("manifest.json".into());

    let manifest = RunManifest {
        config_hash: config::config_hash(config),
        started_unix: started,
        finished_unix: unix_now(),
        wall_seconds: clock.elapsed().as_secs_f64(),
        status,
        message,
        artifacts,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunOutcome { manifest, verdict, monitor_csv })
}

/// One sweep member's summary line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub dir: String,
    pub overrides: Value,
    pub m: Option<f64>,
    /// `m > d/2`.
    pub above_threshold: Option<bool>,
    pub status: String,
    pub exit_code: i32,
    pub sup_u: Option<f64>,
    pub bounded: Option<bool>,
    pub steps: Option<usize>,
    pub dt_min: Option<f64>,
    pub dt_mean: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
}

impl SweepSummary {
    /// Worst exit code over all members.
    pub fn exit_code(&self) -> i32 {
        self.rows.iter().map(|r| r.exit_code).max().unwrap_or(0)
    }
}

/// Runs `base` once per override document, concurrently. Each member writes
/// into `out/member_NNN`; a failing member is recorded in its row and does
/// not stop the others. `summary.json` is written once at the end.
pub fn sweep(base: &Value, overrides: &[Value], out: &Path, base_dir: &Path) -> Result<SweepSummary, RunError> {
    fs::create_dir_all(out)?;
    let jobs: Vec<(usize, Value)> = overrides.iter().cloned().enumerate().collect();
    let rows = exec::map_jobs(jobs, |(index, patch)| {
        let dir = format!("member_{index:03}");
        let mut doc = base.clone();
        config::merge(&mut doc, &patch);
        let mut row = SweepRow {
            index,
            dir: dir.clone(),
            overrides: patch,
            m: None,
            above_threshold: None,
            status: String::new(),
            exit_code: 0,
            sup_u: None,
            bounded: None,
            steps: None,
            dt_min: None,
            dt_mean: None,
            error: None,
        };
        let cfg = match config::validate_value(&doc) {
            Ok(c) => c,
            Err(issues) => {
                row.status = "validation_error".into();
                row.exit_code = 2;
                row.error = Some(issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "));
                return row;
            }
        };
        row.m = Some(cfg.model.m);
        row.above_threshold = Some(cfg.params().boundedness_regime());
        match run(&cfg, &out.join(&dir), base_dir) {
            Ok(o) => {
                row.status = serde_json::to_value(o.manifest.status)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default();
                row.exit_code = o.manifest.status.exit_code();
                row.sup_u = o.verdict.boundedness.map(|b| b.sup_all);
                row.bounded = o.verdict.boundedness.map(|b| b.bounded);
                row.steps = Some(o.verdict.steps);
                row.dt_min = Some(o.verdict.dt_min);
                row.dt_mean = Some(o.verdict.dt_mean);
                row.error = o.manifest.message;
            }
            Err(e) => {
                row.status = "error".into();
                row.exit_code = e.exit_code();
                row.error = Some(e.to_string());
            }
        }
        row
    });
    let summary = SweepSummary { rows };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// [`sweep`] over the diffusion exponent.
pub fn sweep_m(base: &Value, m_list: &[f64], out: &Path, base_dir: &Path) -> Result<SweepSummary, RunError> {
    let overrides: Vec<Value> = m_list.iter().map(|m| serde_json::json!({"model": {"m": m}})).collect();
    sweep(base, &overrides, out, base_dir)
}

/// Runs the ε study of `config.study.eps_list` and writes `eps_study.json`.
pub fn eps_study(config: &SimConfig, out: &Path) -> Result<EpsTable, Box<dyn std::error::Error + Send + Sync>> {
    fs::create_dir_all(out)?;
    let table = verification::eps_limit_study(config, &config.study.eps_list)?;
    write_json(&out.join("eps_study.json"), &table)?;
    Ok(table)
}

/// Runs the refinement studies with `config.study.levels` levels and writes
/// `convergence.json`.
pub fn converge(
    config: &SimConfig,
    out: &Path,
) -> Result<ConvergenceReport, Box<dyn std::error::Error + Send + Sync>> {
    fs::create_dir_all(out)?;
    let report = verification::self_convergence(config, config.study.levels)?;
    write_json(&out.join("convergence.json"), &report)?;
    Ok(report)
}
