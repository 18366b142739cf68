//! Experiment configuration.
//!
//! A config is a JSON document. [`validate`] parses it, fills in defaults and
//! reports every problem it finds rather than stopping at the first one.
//! [`emit`] writes the normalized form, which validates back to the same
//! config.
//!
//! ```json
//! {
//!   "grid": {"dim": 2, "n": [64, 64], "l": [4.0, 4.0]},
//!   "model": {"m": 2.0, "eps": 0.001},
//!   "motility": {"name": "exp_decay", "params": [1.0]},
//!   "initial": {
//!     "u": {"profile": "gaussian", "center": [2.0, 2.0], "width": 0.5,
//!           "amplitude": 1.0, "background": 0.2},
//!     "v": {"profile": "constant", "value": 1.0}
//!   },
//!   "horizon": 10.0,
//!   "dt_out": 0.1
//! }
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::field::ScalarField;
use crate::grid::Grid;
use crate::monitors::MonitorConfig;
use crate::motility::{builtin_motility, compute_bounds, Motility, MotilityBounds, MotilitySpec};
use crate::snapshot::{self, Encoding};
use crate::stepper::{CgSettings, ModelParams, OutputSchedule, State, StepControl};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub dim: usize,
    pub n: Vec<usize>,
    pub l: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub m: f64,
    pub eps: f64,
}

/// Initial-data profile, sampled at cell centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum Profile {
    Constant { value: f64 },
    /// `background + amplitude · exp(−|x − center|² / width²)`.
    Gaussian { center: Vec<f64>, width: f64, amplitude: f64, background: f64 },
    /// `background + amplitude · ∏ cos(modes_k π x_k / L_k)`.
    Cosine { modes: Vec<u32>, amplitude: f64, background: f64 },
    /// Alternating `low`/`high` blocks of `block` cells per axis.
    Checkerboard { low: f64, high: f64, block: usize },
    /// Independent uniform samples in `[low, high]`, seeded by the config seed.
    Noise { low: f64, high: f64 },
    /// Pointwise sum of the listed profiles.
    Sum { terms: Vec<Profile> },
    /// A snapshot file on the same grid.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialConfig {
    pub u: Profile,
    pub v: Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub cfl_safety: f64,
    /// Undershoot tolerance relative to `sup u0`.
    pub tol_neg: f64,
    pub cg_tol: f64,
    pub dt_max: f64,
    pub dt_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorBlock {
    pub p_list: Vec<f64>,
    pub q: f64,
    pub alpha_list: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    /// Write field snapshots at every `k`-th output time; 0 writes only the
    /// initial and final fields.
    pub snapshot_every: usize,
    pub encoding: Encoding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub eps_list: Vec<f64>,
    pub levels: usize,
    pub horizon_split: f64,
}

/// A fully defaulted and checked experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub motility: MotilitySpec,
    pub initial: InitialConfig,
    pub horizon: f64,
    pub dt_out: f64,
    pub tolerances: Tolerances,
    pub monitors: MonitorBlock,
    pub output: OutputConfig,
    pub study: StudyConfig,
    pub seed: u64,
}

/// One validation problem, located by a dotted path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

struct Walker {
    issues: Vec<ConfigIssue>,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_owned()
    } else {
        format!("{path}.{key}")
    }
}

impl Walker {
    fn err(&mut self, path: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue { path: path.to_owned(), message: message.into() });
    }

    fn object<'a>(&mut self, v: &'a Value, path: &str, allowed: &[&str]) -> Option<&'a Map<String, Value>> {
        match v.as_object() {
            Some(map) => {
                for k in map.keys() {
                    if !allowed.contains(&k.as_str()) {
                        self.err(&join(path, k), "unknown key");
                    }
                }
                Some(map)
            }
            None => {
                self.err(path, "expected an object");
                None
            }
        }
    }

    fn f64_at(&mut self, v: Option<&Value>, path: &str, default: Option<f64>) -> Option<f64> {
        match v {
            None => {
                if default.is_none() {
                    self.err(path, "missing required number");
                }
                default
            }
            Some(x) => match x.as_f64() {
                Some(f) if f.is_finite() => Some(f),
                _ => {
                    self.err(path, "expected a finite number");
                    None
                }
            },
        }
    }

    fn usize_at(&mut self, v: Option<&Value>, path: &str, default: Option<usize>) -> Option<usize> {
        match v {
            None => {
                if default.is_none() {
                    self.err(path, "missing required integer");
                }
                default
            }
            Some(x) => match x.as_u64() {
                Some(n) => Some(n as usize),
                None => {
                    self.err(path, "expected a nonnegative integer");
                    None
                }
            },
        }
    }

    fn f64_list(&mut self, v: Option<&Value>, path: &str, default: Option<Vec<f64>>) -> Option<Vec<f64>> {
        match v {
            None => {
                if default.is_none() {
                    self.err(path, "missing required list");
                }
                default
            }
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                let mut ok = true;
                for (i, it) in items.iter().enumerate() {
                    match self.f64_at(Some(it), &format!("{path}[{i}]"), None) {
                        Some(f) => out.push(f),
                        None => ok = false,
                    }
                }
                ok.then_some(out)
            }
            Some(_) => {
                self.err(path, "expected a list of numbers");
                None
            }
        }
    }

    fn str_at<'a>(&mut self, v: Option<&'a Value>, path: &str) -> Option<&'a str> {
        match v.map(Value::as_str) {
            Some(Some(s)) => Some(s),
            Some(None) => {
                self.err(path, "expected a string");
                None
            }
            None => {
                self.err(path, "missing required string");
                None
            }
        }
    }

    fn profile(&mut self, v: &Value, path: &str, dim: Option<usize>, species: &str) -> Option<Profile> {
        let Some(kind) = v.get("profile").and_then(Value::as_str) else {
            self.err(&join(path, "profile"), "missing or non-string profile name");
            return None;
        };
        let nonneg = |w: &mut Walker, x: Option<f64>, p: &str| {
            if let Some(x) = x {
                if x < 0.0 {
                    w.err(&join(path, p), format!("{species}0 must be nonnegative; {p} = {x} is negative"));
                }
            }
        };
        match kind {
            "constant" => {
                let map = self.object(v, path, &["profile", "value"])?;
                let value = self.f64_at(map.get("value"), &join(path, "value"), None);
                nonneg(self, value, "value");
                Some(Profile::Constant { value: value? })
            }
            "gaussian" => {
                let map = self.object(v, path, &["profile", "center", "width", "amplitude", "background"])?;
                let center = self.f64_list(map.get("center"), &join(path, "center"), None);
                let width = self.f64_at(map.get("width"), &join(path, "width"), None);
                let amplitude = self.f64_at(map.get("amplitude"), &join(path, "amplitude"), None);
                let background = self.f64_at(map.get("background"), &join(path, "background"), Some(0.0));
                if let (Some(c), Some(d)) = (&center, dim) {
                    if c.len() != d {
                        self.err(&join(path, "center"), format!("expected {d} coordinates, got {}", c.len()));
                    }
                }
                if matches!(width, Some(w) if w <= 0.0) {
                    self.err(&join(path, "width"), "width must be positive");
                }
                nonneg(self, amplitude, "amplitude");
                nonneg(self, background, "background");
                Some(Profile::Gaussian {
                    center: center?,
                    width: width?,
                    amplitude: amplitude?,
                    background: background?,
                })
            }
            "cosine" => {
                let map = self.object(v, path, &["profile", "modes", "amplitude", "background"])?;
                let modes = self.f64_list(map.get("modes"), &join(path, "modes"), None);
                let amplitude = self.f64_at(map.get("amplitude"), &join(path, "amplitude"), None);
                let background = self.f64_at(map.get("background"), &join(path, "background"), Some(0.0));
                let modes: Option<Vec<u32>> = modes.and_then(|ms| {
                    let ok = ms.iter().all(|m| *m >= 0.0 && m.fract() == 0.0);
                    if !ok {
                        self.err(&join(path, "modes"), "modes must be nonnegative integers");
                    }
                    ok.then(|| ms.iter().map(|&m| m as u32).collect())
                });
                if let (Some(ms), Some(d)) = (&modes, dim) {
                    if ms.len() != d {
                        self.err(&join(path, "modes"), format!("expected {d} modes, got {}", ms.len()));
                    }
                }
                if let (Some(a), Some(b)) = (amplitude, background) {
                    if b - a.abs() < 0.0 {
                        self.err(
                            path,
                            format!("{species}0 must be nonnegative; background {b} < |amplitude| {}", a.abs()),
                        );
                    }
                }
                Some(Profile::Cosine { modes: modes?, amplitude: amplitude?, background: background? })
            }
            "checkerboard" => {
                let map = self.object(v, path, &["profile", "low", "high", "block"])?;
                let low = self.f64_at(map.get("low"), &join(path, "low"), None);
                let high = self.f64_at(map.get("high"), &join(path, "high"), None);
                let block = self.usize_at(map.get("block"), &join(path, "block"), Some(1));
                nonneg(self, low, "low");
                nonneg(self, high, "high");
                if block == Some(0) {
                    self.err(&join(path, "block"), "block must be at least 1");
                }
                Some(Profile::Checkerboard { low: low?, high: high?, block: block? })
            }
            "noise" => {
                let map = self.object(v, path, &["profile", "low", "high"])?;
                let low = self.f64_at(map.get("low"), &join(path, "low"), None);
                let high = self.f64_at(map.get("high"), &join(path, "high"), None);
                nonneg(self, low, "low");
                if let (Some(l), Some(h)) = (low, high) {
                    if h < l {
                        self.err(&join(path, "high"), "high must not be below low");
                    }
                }
                Some(Profile::Noise { low: low?, high: high? })
            }
            "sum" => {
                let map = self.object(v, path, &["profile", "terms"])?;
                let Some(Value::Array(items)) = map.get("terms") else {
                    self.err(&join(path, "terms"), "expected a list of profiles");
                    return None;
                };
                let terms: Vec<Option<Profile>> = items
                    .iter()
                    .enumerate()
                    .map(|(i, t)| self.profile(t, &format!("{path}.terms[{i}]"), dim, species))
                    .collect();
                Some(Profile::Sum { terms: terms.into_iter().collect::<Option<Vec<_>>>()? })
            }
            "file" => {
                let map = self.object(v, path, &["profile", "path"])?;
                let p = self.str_at(map.get("path"), &join(path, "path"))?;
                Some(Profile::File { path: PathBuf::from(p) })
            }
            other => {
                self.err(&join(path, "profile"), format!("unknown profile '{other}'"));
                None
            }
        }
    }
}

const TOP_KEYS: [&str; 11] = [
    "grid", "model", "motility", "initial", "horizon", "dt_out", "tolerances", "monitors", "output", "study",
    "seed",
];

/// Parses and checks a config document, materializing every default.
pub fn validate(text: &str) -> Result<SimConfig, Vec<ConfigIssue>> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| vec![ConfigIssue { path: String::new(), message: format!("not valid JSON: {e}") }])?;
    validate_value(&root)
}

/// [`validate`] on an already parsed document.
pub fn validate_value(root: &Value) -> Result<SimConfig, Vec<ConfigIssue>> {
    let mut w = Walker { issues: Vec::new() };
    let Some(top) = w.object(root, "", &TOP_KEYS) else {
        return Err(w.issues);
    };
    let empty = Value::Object(Map::new());

    // grid
    let grid = top.get("grid").unwrap_or_else(|| {
        w.err("grid", "missing required section");
        &empty
    });
    let mut dim = None;
    let grid_cfg = w.object(grid, "grid", &["dim", "n", "l"]).and_then(|g| {
        let d = w.usize_at(g.get("dim"), "grid.dim", None);
        if let Some(d) = d {
            if !(1..=3).contains(&d) {
                w.err("grid.dim", format!("dimension {d} not in 1..=3"));
            } else {
                dim = Some(d);
            }
        }
        let n = w.f64_list(g.get("n"), "grid.n", None).and_then(|ns| {
            let ok = ns.iter().all(|x| x.fract() == 0.0 && *x >= 2.0);
            if !ok {
                w.err("grid.n", "cell counts must be integers of at least 2");
            }
            ok.then(|| ns.iter().map(|&x| x as usize).collect::<Vec<_>>())
        });
        let l = w.f64_list(g.get("l"), "grid.l", None);
        if let Some(l) = &l {
            if l.iter().any(|x| *x <= 0.0) {
                w.err("grid.l", "side lengths must be positive");
            }
        }
        if let (Some(d), Some(n)) = (dim, &n) {
            if n.len() != d {
                w.err("grid.n", format!("expected {d} entries, got {}", n.len()));
            }
        }
        if let (Some(d), Some(l)) = (dim, &l) {
            if l.len() != d {
                w.err("grid.l", format!("expected {d} entries, got {}", l.len()));
            }
        }
        Some(GridConfig { dim: d?, n: n?, l: l? })
    });

    // model
    let model = top.get("model").unwrap_or_else(|| {
        w.err("model", "missing required section");
        &empty
    });
    let model_cfg = w.object(model, "model", &["m", "eps"]).and_then(|mm| {
        let m = w.f64_at(mm.get("m"), "model.m", None);
        let eps = w.f64_at(mm.get("eps"), "model.eps", Some(1e-3));
        if matches!(m, Some(m) if m <= 1.0) {
            w.err("model.m", "m must exceed 1");
        }
        if matches!(eps, Some(e) if !(0.0..1.0).contains(&e)) {
            w.err("model.eps", "eps must lie in [0, 1)");
        }
        Some(ModelConfig { m: m?, eps: eps? })
    });

    // motility
    let motility = match top.get("motility") {
        None => Some(MotilitySpec { name: "constant".into(), params: vec![1.0] }),
        Some(mv) => w.object(mv, "motility", &["name", "params"]).and_then(|mo| {
            let name = w.str_at(mo.get("name"), "motility.name").map(str::to_owned);
            let params = w.f64_list(mo.get("params"), "motility.params", Some(Vec::new()));
            let spec = MotilitySpec { name: name?, params: params? };
            if let Err(e) = builtin_motility(&spec.name, &spec.params) {
                w.err("motility", e.to_string());
            }
            Some(spec)
        }),
    };

    // initial data
    let initial = top.get("initial").unwrap_or_else(|| {
        w.err("initial", "missing required section");
        &empty
    });
    let initial_cfg = w.object(initial, "initial", &["u", "v"]).and_then(|ini| {
        let u = match ini.get("u") {
            Some(p) => w.profile(p, "initial.u", dim, "u"),
            None => {
                w.err("initial.u", "missing required profile");
                None
            }
        };
        let v = match ini.get("v") {
            Some(p) => w.profile(p, "initial.v", dim, "v"),
            None => {
                w.err("initial.v", "missing required profile");
                None
            }
        };
        Some(InitialConfig { u: u?, v: v? })
    });

    let horizon = w.f64_at(top.get("horizon"), "horizon", None);
    if matches!(horizon, Some(t) if t <= 0.0) {
        w.err("horizon", "horizon must be positive");
    }
    let dt_out = w.f64_at(top.get("dt_out"), "dt_out", horizon.map(|t| t / 100.0));
    if matches!(dt_out, Some(d) if d <= 0.0) {
        w.err("dt_out", "dt_out must be positive");
    }

    let tol = match top.get("tolerances") {
        Some(tv) => w.object(tv, "tolerances", &["cfl_safety", "tol_neg", "cg_tol", "dt_max", "dt_min"]),
        None => None,
    };
    let get = |k: &str| tol.and_then(|t| t.get(k));
    let cfl = w.f64_at(get("cfl_safety"), "tolerances.cfl_safety", Some(0.9));
    let tol_neg = w.f64_at(get("tol_neg"), "tolerances.tol_neg", Some(1e-10));
    let cg_tol = w.f64_at(get("cg_tol"), "tolerances.cg_tol", Some(1e-10));
    let dt_max = w.f64_at(get("dt_max"), "tolerances.dt_max", dt_out.or(Some(1.0)));
    let dt_min = w.f64_at(get("dt_min"), "tolerances.dt_min", Some(1e-14));
    if matches!(cfl, Some(c) if !(c > 0.0 && c <= 1.0)) {
        w.err("tolerances.cfl_safety", "cfl_safety must lie in (0, 1]");
    }
    if matches!(tol_neg, Some(t) if t < 0.0) {
        w.err("tolerances.tol_neg", "tol_neg must be nonnegative");
    }
    if matches!(cg_tol, Some(t) if t <= 0.0) {
        w.err("tolerances.cg_tol", "cg_tol must be positive");
    }
    if let (Some(lo), Some(hi)) = (dt_min, dt_max) {
        if !(lo > 0.0 && lo <= hi) {
            w.err("tolerances.dt_min", "need 0 < dt_min <= dt_max");
        }
    }

    let mon = match top.get("monitors") {
        Some(mv) => w.object(mv, "monitors", &["p_list", "q", "alpha_list"]),
        None => None,
    };
    let getm = |k: &str| mon.and_then(|t| t.get(k));
    let m_val = model_cfg.as_ref().map(|m| m.m);
    let defaults = match (m_val, dim) {
        (Some(m), Some(d)) => Some(MonitorConfig::defaults(&ModelParams { m, eps: 0.0, dim: d })),
        _ => None,
    };
    let p_list = w.f64_list(getm("p_list"), "monitors.p_list", defaults.as_ref().map(|d| d.p_list.clone()));
    let q = w.f64_at(getm("q"), "monitors.q", defaults.as_ref().map(|d| d.q));
    let alpha_list =
        w.f64_list(getm("alpha_list"), "monitors.alpha_list", defaults.as_ref().map(|d| d.alpha_list.clone()));
    if let Some(ps) = &p_list {
        if ps.iter().any(|p| *p < 1.0) {
            w.err("monitors.p_list", "every p must be at least 1");
        }
    }
    if let (Some(q), Some(d)) = (q, dim) {
        if q <= d as f64 {
            w.err("monitors.q", format!("q must exceed the dimension {d}"));
        }
    }
    if let (Some(al), Some(m)) = (&alpha_list, m_val) {
        if al.iter().any(|a| *a <= m / 2.0) {
            w.err("monitors.alpha_list", format!("every alpha must exceed m/2 = {}", m / 2.0));
        }
    }

    let out = match top.get("output") {
        Some(ov) => w.object(ov, "output", &["snapshot_every", "encoding"]),
        None => None,
    };
    let snapshot_every = w.usize_at(out.and_then(|o| o.get("snapshot_every")), "output.snapshot_every", Some(0));
    let encoding = match out.and_then(|o| o.get("encoding")) {
        None => Some(Encoding::F64le),
        Some(e) => match e.as_str() {
            Some("f64le") => Some(Encoding::F64le),
            Some("csv") => Some(Encoding::Csv),
            _ => {
                w.err("output.encoding", "expected \"f64le\" or \"csv\"");
                None
            }
        },
    };

    let st = match top.get("study") {
        Some(sv) => w.object(sv, "study", &["eps_list", "levels", "horizon_split"]),
        None => None,
    };
    let eps_list =
        w.f64_list(st.and_then(|s| s.get("eps_list")), "study.eps_list", Some(vec![1e-1, 1e-2, 1e-3, 1e-4]));
    let levels = w.usize_at(st.and_then(|s| s.get("levels")), "study.levels", Some(3));
    let split = w.f64_at(st.and_then(|s| s.get("horizon_split")), "study.horizon_split", Some(0.5));
    if let Some(el) = &eps_list {
        if el.len() < 3 || el.windows(2).any(|p| p[1] >= p[0]) || el.iter().any(|e| !(0.0..1.0).contains(e)) {
            w.err("study.eps_list", "need at least 3 strictly decreasing values in [0, 1)");
        }
    }
    if matches!(levels, Some(l) if l < 3) {
        w.err("study.levels", "need at least 3 levels");
    }
    if matches!(split, Some(s) if !(s > 0.0 && s < 1.0)) {
        w.err("study.horizon_split", "horizon_split must lie in (0, 1)");
    }

    let seed = match top.get("seed") {
        None => Some(0),
        Some(s) => match s.as_u64() {
            Some(x) => Some(x),
            None => {
                w.err("seed", "expected a nonnegative integer");
                None
            }
        },
    };

    if !w.issues.is_empty() {
        return Err(w.issues);
    }
    let cfg = SimConfig {
        grid: grid_cfg.expect("no issues implies present"),
        model: model_cfg.expect("no issues implies present"),
        motility: motility.expect("no issues implies present"),
        initial: initial_cfg.expect("no issues implies present"),
        horizon: horizon.expect("checked"),
        dt_out: dt_out.expect("checked"),
        tolerances: Tolerances {
            cfl_safety: cfl.expect("checked"),
            tol_neg: tol_neg.expect("checked"),
            cg_tol: cg_tol.expect("checked"),
            dt_max: dt_max.expect("checked"),
            dt_min: dt_min.expect("checked"),
        },
        monitors: MonitorBlock {
            p_list: p_list.expect("checked"),
            q: q.expect("checked"),
            alpha_list: alpha_list.expect("checked"),
        },
        output: OutputConfig { snapshot_every: snapshot_every.expect("checked"), encoding: encoding.expect("checked") },
        study: StudyConfig {
            eps_list: eps_list.expect("checked"),
            levels: levels.expect("checked"),
            horizon_split: split.expect("checked"),
        },
        seed: seed.expect("checked"),
    };
    if let Err(e) = Grid::new(&cfg.grid.n, &cfg.grid.l) {
        return Err(vec![ConfigIssue { path: "grid".into(), message: e.to_string() }]);
    }
    Ok(cfg)
}

/// Normalized pretty JSON for `config`; keys are sorted.
pub fn emit(config: &SimConfig) -> String {
    let value = serde_json::to_value(config).expect("config serializes");
    serde_json::to_string_pretty(&value).expect("value serializes")
}

/// SHA-256 of the compact normalized form, independent of key order in
/// the source document.
pub fn config_hash(config: &SimConfig) -> String {
    let value = serde_json::to_value(config).expect("config serializes");
    let digest = Sha256::digest(value.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Recursively merges `patch` into `base`; objects merge key by key, every
/// other value replaces.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Everything needed to start a simulation.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: Arc<Grid>,
    pub params: ModelParams,
    pub phi: Motility,
    pub bounds: MotilityBounds,
    pub initial: State,
    pub control: StepControl,
    pub schedule: OutputSchedule,
    pub horizon: f64,
    pub monitors: MonitorConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildError(pub String);

impl fmt::Display for BuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BuildError {}

fn sample(profile: &Profile, grid: &Arc<Grid>, rng: &mut ChaCha8Rng, base: &Path) -> Result<Vec<f64>, BuildError> {
    let n = grid.len();
    let dim = grid.dim();
    Ok(match profile {
        Profile::Constant { value } => vec![*value; n],
        Profile::Gaussian { center, width, amplitude, background } => (0..n)
            .map(|i| {
                let x = grid.center(i);
                let r2: f64 = (0..dim).map(|k| (x[k] - center[k]).powi(2)).sum();
                background + amplitude * (-r2 / (width * width)).exp()
            })
            .collect(),
        Profile::Cosine { modes, amplitude, background } => (0..n)
            .map(|i| {
                let x = grid.center(i);
                let prod: f64 = (0..dim)
                    .map(|k| (modes[k] as f64 * std::f64::consts::PI * x[k] / grid.lengths()[k]).cos())
                    .product();
                background + amplitude * prod
            })
            .collect(),
        Profile::Checkerboard { low, high, block } => (0..n)
            .map(|i| {
                let parity: usize = (0..dim).map(|k| grid.coord(i, k) / block).sum();
                if parity % 2 == 0 {
                    *low
                } else {
                    *high
                }
            })
            .collect(),
        Profile::Noise { low, high } => (0..n).map(|_| rng.random_range(*low..=*high)).collect(),
        Profile::Sum { terms } => {
            let mut acc = vec![0.0; n];
            for t in terms {
                for (a, b) in acc.iter_mut().zip(sample(t, grid, rng, base)?) {
                    *a += b;
                }
            }
            acc
        }
        Profile::File { path } => {
            let full = if path.is_absolute() { path.clone() } else { base.join(path) };
            let (_, field) = snapshot::load(&full)
                .map_err(|e| BuildError(format!("cannot read {}: {e}", full.display())))?;
            if !field.grid().same_as(grid) {
                return Err(BuildError(format!("{} is on a different grid", full.display())));
            }
            field.into_values()
        }
    })
}

impl SimConfig {
    pub fn grid(&self) -> Result<Grid, BuildError> {
        Grid::new(&self.grid.n, &self.grid.l).map_err(|e| BuildError(e.to_string()))
    }

    pub fn params(&self) -> ModelParams {
        ModelParams { m: self.model.m, eps: self.model.eps, dim: self.grid.dim }
    }

    /// Same config with every axis refined by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        let mut c = self.clone();
        c.grid.n.iter_mut().for_each(|n| *n *= factor);
        c
    }

    /// Samples the initial data and sets up the solver. Relative file paths
    /// resolve against `base_dir`.
    pub fn build_in(&self, base_dir: &Path) -> Result<Problem, BuildError> {
        let grid = Arc::new(self.grid()?);
        let params = ModelParams::new(self.model.m, self.model.eps, self.grid.dim)
            .map_err(|e| BuildError(e.to_string()))?;
        let phi = Motility::from_spec(&self.motility).map_err(|e| BuildError(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let u0 = sample(&self.initial.u, &grid, &mut rng, base_dir)?;
        let v0 = sample(&self.initial.v, &grid, &mut rng, base_dir)?;
        for (name, vals) in [("u0", &u0), ("v0", &v0)] {
            if let Some(x) = vals.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(BuildError(format!("{name} must be finite and nonnegative, found {x}")));
            }
        }
        let u0 = ScalarField::new(grid.clone(), u0).map_err(|e| BuildError(e.to_string()))?;
        let v0 = ScalarField::new(grid.clone(), v0).map_err(|e| BuildError(e.to_string()))?;
        let bounds = compute_bounds(&phi, v0.max()).map_err(|e| BuildError(e.to_string()))?;
        let t = &self.tolerances;
        let control = StepControl {
            dt_current: t.dt_max,
            cfl_safety: t.cfl_safety,
            dt_max: t.dt_max,
            dt_min: t.dt_min,
            tol_neg: t.tol_neg * u0.max(),
            cg: CgSettings { tol: t.cg_tol, max_iter: None },
        };
        let monitors = MonitorConfig {
            p_list: self.monitors.p_list.clone(),
            q: self.monitors.q,
            alpha_list: self.monitors.alpha_list.clone(),
        };
        Ok(Problem {
            grid,
            params,
            phi,
            bounds,
            initial: State { u: u0, v: v0, t: 0.0 },
            control,
            schedule: OutputSchedule { dt_out: self.dt_out },
            horizon: self.horizon,
            monitors,
        })
    }

    pub fn build(&self) -> Result<Problem, BuildError> {
        self.build_in(Path::new("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "grid": {"dim": 1, "n": [16], "l": [1.0]},
        "model": {"m": 2.0},
        "initial": {"u": {"profile": "constant", "value": 0.5},
                    "v": {"profile": "constant", "value": 1.0}},
        "horizon": 1.0
    }"#;

    #[test]
    fn minimal_config_materializes_defaults() {
        let c = validate(MINIMAL).unwrap();
        assert_eq!(c.model.eps, 1e-3);
        assert_eq!(c.motility, MotilitySpec { name: "constant".into(), params: vec![1.0] });
        assert_eq!(c.dt_out, 0.01);
        assert_eq!(c.tolerances.cfl_safety, 0.9);
        assert_eq!(c.tolerances.tol_neg, 1e-10);
        assert_eq!(c.tolerances.cg_tol, 1e-10);
        assert_eq!(c.monitors.p_list, vec![2.0, 3.0, 4.0]);
        assert_eq!(c.monitors.q, 2.0);
        assert_eq!(c.monitors.alpha_list, vec![1.25, 2.0, 3.0]);
        assert_eq!(c.study.eps_list, vec![1e-1, 1e-2, 1e-3, 1e-4]);
        let echoed = emit(&c);
        assert!(echoed.contains("\"cfl_safety\": 0.9"));
    }

    #[test]
    fn small_m_is_named() {
        let text = MINIMAL.replace("\"m\": 2.0", "\"m\": 0.9");
        let issues = validate(&text).unwrap_err();
        assert!(issues.iter().any(|i| i.path == "model.m" && i.message.contains("m must exceed 1")));
    }

    #[test]
    fn negative_amplitude_cites_nonnegativity() {
        let text = MINIMAL.replace(
            r#""u": {"profile": "constant", "value": 0.5}"#,
            r#""u": {"profile": "gaussian", "center": [0.5], "width": 0.1, "amplitude": -1.0}"#,
        );
        let issues = validate(&text).unwrap_err();
        assert!(
            issues.iter().any(|i| i.path == "initial.u.amplitude" && i.message.contains("nonnegative")),
            "{issues:?}"
        );
    }

    #[test]
    fn reports_every_issue() {
        let text = r#"{
            "grid": {"dim": 4, "n": [1], "l": [-1.0], "extra": 1},
            "model": {"m": 1.0, "eps": 2.0},
            "initial": {"u": {"profile": "nope"}},
            "horizon": -1.0,
            "bogus": true
        }"#;
        let issues = validate(text).unwrap_err();
        let paths: Vec<&str> = issues.iter().map(|i| i.path.as_str()).collect();
        for expected in [
            "bogus",
            "grid.extra",
            "grid.dim",
            "grid.n",
            "grid.l",
            "model.m",
            "model.eps",
            "initial.u.profile",
            "initial.v",
            "horizon",
        ] {
            assert!(paths.contains(&expected), "missing {expected} in {paths:?}");
        }
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = validate(MINIMAL).unwrap();
        let reordered = r#"{
            "horizon": 1.0,
            "initial": {"v": {"value": 1.0, "profile": "constant"},
                        "u": {"value": 0.5, "profile": "constant"}},
            "model": {"m": 2.0},
            "grid": {"l": [1.0], "n": [16], "dim": 1}
        }"#;
        let b = validate(reordered).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn emit_round_trips() {
        let text = MINIMAL.replace(
            r#""v": {"profile": "constant", "value": 1.0}"#,
            r#""v": {"profile": "sum", "terms": [
                {"profile": "cosine", "modes": [1], "amplitude": 0.5, "background": 1.0},
                {"profile": "noise", "low": 0.0, "high": 0.1},
                {"profile": "checkerboard", "low": 0.0, "high": 0.2, "block": 2}]}"#,
        );
        let c = validate(&text).unwrap();
        assert_eq!(validate(&emit(&c)).unwrap(), c);
    }

    #[test]
    fn merge_overrides_nested_keys() {
        let mut base: Value = serde_json::from_str(MINIMAL).unwrap();
        merge(&mut base, &serde_json::json!({"model": {"m": 3.0}, "seed": 4}));
        let c = validate_value(&base).unwrap();
        assert_eq!((c.model.m, c.model.eps, c.seed), (3.0, 1e-3, 4));
    }

    #[test]
    fn noise_profile_is_seeded() {
        let text = MINIMAL.replace(
            r#""v": {"profile": "constant", "value": 1.0}"#,
            r#""v": {"profile": "noise", "low": 0.0, "high": 1.0}"#,
        );
        let c = validate(&text).unwrap();
        let a = c.build().unwrap();
        let b = c.build().unwrap();
        assert_eq!(a.initial.v.values(), b.initial.v.values());
        let mut c2 = c.clone();
        c2.seed = 9;
        assert_ne!(c2.build().unwrap().initial.v.values(), a.initial.v.values());
    }
}
