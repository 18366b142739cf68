//! Discrete a priori estimate monitors.
//!
//! A [`MonitorSuite`] rides along [`advance`](crate::stepper::advance) as an
//! observer. Time integrals (`∫|∇v|²`, `∫|∇(u+ε)^α|²`) are accumulated at
//! every accepted step; everything else is sampled at output times. The
//! trailing-window integral `∫_{t-1}^t ∫ u^{m+1}` uses the trapezoid rule on
//! the output-time samples, so its accuracy is limited by the output cadence.

use std::collections::VecDeque;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::HypothesisError;
use crate::exec::{self, Compensated};
use crate::field::{cell_gradient_norm, gradient_energy, lp_norm, pow_real, ScalarField};
use crate::motility::{Motility, MotilityBounds};
use crate::snapshot::fmt_f64;
use crate::stepper::{ModelParams, Observer, State, StepRecord};

/// Which norms and exponents to monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub p_list: Vec<f64>,
    pub q: f64,
    pub alpha_list: Vec<f64>,
}

impl MonitorConfig {
    /// `p ∈ {2, m+1, 4}`, `q = d + 1`, `α ∈ {m/2 + 1/4, m, m + 1}`.
    pub fn defaults(params: &ModelParams) -> Self {
        let m = params.m;
        Self {
            p_list: vec![2.0, m + 1.0, 4.0],
            q: params.dim as f64 + 1.0,
            alpha_list: vec![m / 2.0 + 0.25, m, m + 1.0],
        }
    }
}

/// Every monitored functional at one output time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorReport {
    pub t: f64,
    pub mass_u: f64,
    pub sup_u: f64,
    pub sup_v: f64,
    pub min_v: f64,
    /// `(p, ‖u‖_p)` for every configured `p`.
    pub lp_u: Vec<(f64, f64)>,
    pub grad_v_energy: f64,
    pub cum_grad_v: f64,
    /// `∫_{t−1}^{t} ∫ u^{m+1}` over the trailing window of length `min(1, t)`.
    pub window_lm1: f64,
    /// `(α, Σ dt ∫|∇(u+ε)^α|²)` for every configured `α`.
    pub grad_alpha_cum: Vec<(f64, f64)>,
    pub grad_v_lq: f64,
    pub kappa_ok: bool,
}

/// `dt ∫ |∇(u + ε)^α|²` at the end of a step. Requires `α > m/2`.
pub fn alpha_dissipation(
    _prev: &State,
    next: &State,
    params: &ModelParams,
    dt: f64,
    alpha: f64,
) -> Result<f64, HypothesisError> {
    if !(alpha > params.m / 2.0) {
        return Err(HypothesisError::AlphaTooSmall { alpha, half_m: params.m / 2.0 });
    }
    let eps = params.eps;
    let lifted = next.u.map(|u| pow_real(u.max(0.0) + eps, alpha));
    Ok(dt * gradient_energy(&lifted))
}

/// Whether `κ₁ <= φ(v) <= κ₂` in every cell.
pub fn kappa_check(v: &ScalarField, phi: &Motility, bounds: &MotilityBounds) -> bool {
    let vals = v.values();
    let worst = exec::max_by(vals.len(), |i| {
        let p = phi.eval(vals[i]);
        if bounds.kappa1 <= p && p <= bounds.kappa2 {
            0.0
        } else {
            1.0
        }
    });
    worst <= 0.0
}

/// Running time integrals plus the trailing-window buffer.
#[derive(Debug, Clone, Default)]
pub struct Accumulators {
    cum_grad_v: Compensated,
    alpha: Vec<(f64, Compensated)>,
    window: VecDeque<(f64, f64)>,
}

impl Accumulators {
    pub fn new(alpha_list: &[f64]) -> Self {
        Self {
            cum_grad_v: Compensated::default(),
            alpha: alpha_list.iter().map(|&a| (a, Compensated::default())).collect(),
            window: VecDeque::new(),
        }
    }

    pub fn cum_grad_v(&self) -> f64 {
        self.cum_grad_v.value()
    }

    /// Adds the contributions of one accepted step.
    pub fn record_step(
        &mut self,
        prev: &State,
        next: &State,
        params: &ModelParams,
        dt: f64,
    ) -> Result<(), HypothesisError> {
        self.cum_grad_v.add(dt * gradient_energy(&next.v));
        for (alpha, acc) in &mut self.alpha {
            acc.add(alpha_dissipation(prev, next, params, dt, *alpha)?);
        }
        Ok(())
    }

    /// Pushes a sample of `∫ u^{m+1}` and returns the trapezoid integral
    /// over `[t − min(1, t), t]`.
    fn push_window(&mut self, t: f64, value: f64) -> f64 {
        self.window.push_back((t, value));
        let start = (t - 1.0).max(0.0);
        while self.window.len() > 2 && self.window[1].0 <= start {
            self.window.pop_front();
        }
        let mut total = 0.0;
        for pair in self.window.iter().collect::<Vec<_>>().windows(2) {
            let (&(t0, f0), &(t1, f1)) = (pair[0], pair[1]);
            if t1 <= start {
                continue;
            }
            let (a, fa) = if t0 < start {
                let s = (start - t0) / (t1 - t0);
                (start, f0 + s * (f1 - f0))
            } else {
                (t0, f0)
            };
            total += 0.5 * (t1 - a) * (fa + f1);
        }
        total
    }
}

/// Computes a [`MonitorReport`] for `state` and advances the window buffer.
pub fn observe(
    state: &State,
    params: &ModelParams,
    phi: &Motility,
    bounds: &MotilityBounds,
    config: &MonitorConfig,
    acc: &mut Accumulators,
) -> MonitorReport {
    let u = &state.u;
    let v = &state.v;
    let grid = u.grid();
    let uv = u.values();
    let m = params.m;
    let power = exec::sum_by(uv.len(), |i| uv[i].max(0.0).powf(m + 1.0)) * grid.cell_volume();
    let window_lm1 = acc.push_window(state.t, power);
    let lp_u = config
        .p_list
        .iter()
        .map(|&p| (p, lp_norm(u, p).unwrap_or(f64::NAN)))
        .collect();
    let grad_v_lq = lp_norm(&cell_gradient_norm(v), config.q).unwrap_or(f64::NAN);
    MonitorReport {
        t: state.t,
        mass_u: lp_norm(u, 1.0).unwrap_or(f64::NAN),
        sup_u: u.max(),
        sup_v: v.max(),
        min_v: v.min(),
        lp_u,
        grad_v_energy: gradient_energy(v),
        cum_grad_v: acc.cum_grad_v(),
        window_lm1,
        grad_alpha_cum: acc.alpha.iter().map(|(a, c)| (*a, c.value())).collect(),
        grad_v_lq,
        kappa_ok: kappa_check(v, phi, bounds),
    }
}

/// Step-level invariant bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantLedger {
    pub initial_mass: f64,
    pub initial_half_v2: f64,
    pub initial_max_v: f64,
    /// Largest `|∫u(t) − ∫u₀| / ∫u₀` seen (absolute drift when `∫u₀ = 0`).
    pub max_mass_drift: f64,
    /// Largest step-to-step increase of `max v` (≤ 0 when monotone).
    pub max_v_increase: f64,
    pub min_v: f64,
    pub min_u: f64,
    /// Largest `½‖v‖² + Σ dt ∫|∇v|² − ½‖v₀‖²` seen.
    pub energy_excess: f64,
    pub kappa_always_ok: bool,
    pub steps: usize,
}

impl InvariantLedger {
    fn new(initial: &State) -> Self {
        let v = initial.v.values();
        Self {
            initial_mass: initial.mass(),
            initial_half_v2: 0.5 * exec::sum_by(v.len(), |i| v[i] * v[i]) * initial.v.grid().cell_volume(),
            initial_max_v: initial.v.max(),
            max_mass_drift: 0.0,
            max_v_increase: f64::NEG_INFINITY,
            min_v: initial.v.min(),
            min_u: initial.u.min(),
            energy_excess: f64::NEG_INFINITY,
            kappa_always_ok: true,
            steps: 0,
        }
    }

    /// Mass drift within `1e-12` relative.
    pub fn mass_ok(&self) -> bool {
        self.max_mass_drift <= 1e-12
    }

    /// `max v` non-increasing and `min v >= 0`, with a `1e-14` roundoff
    /// allowance relative to `max v₀`.
    pub fn max_principle_ok(&self) -> bool {
        let slack = 1e-14 * self.initial_max_v.max(f64::MIN_POSITIVE);
        self.max_v_increase <= slack && self.min_v >= -slack
    }

    /// Discrete energy inequality within `1e-10`.
    pub fn energy_ok(&self) -> bool {
        self.energy_excess <= 1e-10
    }

    pub fn all_ok(&self) -> bool {
        self.mass_ok() && self.max_principle_ok() && self.energy_ok() && self.kappa_always_ok
    }
}

/// Observer that accumulates monitors along a trajectory.
#[derive(Debug, Clone)]
pub struct MonitorSuite {
    pub params: ModelParams,
    pub phi: Motility,
    pub bounds: MotilityBounds,
    pub config: MonitorConfig,
    pub reports: Vec<MonitorReport>,
    pub ledger: Option<InvariantLedger>,
    acc: Accumulators,
    prev_max_v: f64,
    check_kappa_each_step: bool,
}

impl MonitorSuite {
    pub fn new(
        params: ModelParams,
        phi: Motility,
        bounds: MotilityBounds,
        config: MonitorConfig,
    ) -> Result<Self, HypothesisError> {
        for &alpha in &config.alpha_list {
            if !(alpha > params.m / 2.0) {
                return Err(HypothesisError::AlphaTooSmall { alpha, half_m: params.m / 2.0 });
            }
        }
        let acc = Accumulators::new(&config.alpha_list);
        Ok(Self {
            params,
            phi,
            bounds,
            config,
            reports: Vec::new(),
            ledger: None,
            acc,
            prev_max_v: f64::NAN,
            check_kappa_each_step: true,
        })
    }

    /// Only evaluate the κ check at output times.
    pub fn kappa_at_outputs_only(mut self) -> Self {
        self.check_kappa_each_step = false;
        self
    }

    pub fn ledger(&self) -> &InvariantLedger {
        self.ledger.as_ref().expect("monitor suite has not observed any state")
    }

    /// Writes the monitor CSV: one row per output time.
    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        write_monitor_csv(w, &self.config, &self.reports)
    }
}

impl Observer for MonitorSuite {
    fn on_output(&mut self, state: &State) {
        if self.ledger.is_none() {
            self.ledger = Some(InvariantLedger::new(state));
            self.prev_max_v = state.v.max();
        }
        let report = observe(state, &self.params, &self.phi, &self.bounds, &self.config, &mut self.acc);
        if let Some(l) = self.ledger.as_mut() {
            l.kappa_always_ok &= report.kappa_ok;
        }
        self.reports.push(report);
    }

    fn on_step(&mut self, prev: &State, next: &State, record: &StepRecord) {
        if self.ledger.is_none() {
            self.ledger = Some(InvariantLedger::new(prev));
            self.prev_max_v = prev.v.max();
        }
        self.acc
            .record_step(prev, next, &self.params, record.dt)
            .expect("alpha list validated at construction");
        let v = next.v.values();
        let half_v2 = 0.5 * exec::sum_by(v.len(), |i| v[i] * v[i]) * next.v.grid().cell_volume();
        let cum = self.acc.cum_grad_v();
        let kappa_ok = !self.check_kappa_each_step || kappa_check(&next.v, &self.phi, &self.bounds);
        let l = self.ledger.as_mut().expect("ledger initialised above");
        let mass = next.mass();
        let drift = if l.initial_mass != 0.0 {
            ((mass - l.initial_mass) / l.initial_mass).abs()
        } else {
            mass.abs()
        };
        l.max_mass_drift = l.max_mass_drift.max(drift);
        l.max_v_increase = l.max_v_increase.max(record.max_v - self.prev_max_v);
        l.min_v = l.min_v.min(record.min_v);
        l.min_u = l.min_u.min(record.min_u);
        l.energy_excess = l.energy_excess.max(half_v2 + cum - l.initial_half_v2);
        l.kappa_always_ok &= kappa_ok;
        l.steps += 1;
        self.prev_max_v = record.max_v;
    }
}

/// Summary of the long-time behaviour of `sup u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundednessVerdict {
    pub sup_all: f64,
    pub sup_early: f64,
    pub sup_late: f64,
    /// `sup_late / sup_early`; 1 when both vanish.
    pub growth_ratio: f64,
    pub bounded: bool,
    pub horizon: f64,
    pub split: f64,
}

/// Compares `sup u` over `[split·T, T]` with `sup u` over `[0, split·T)`.
pub fn boundedness_verdict(
    reports: &[MonitorReport],
    split: f64,
) -> Result<BoundednessVerdict, HypothesisError> {
    let last = reports
        .last()
        .ok_or_else(|| HypothesisError::Other("no monitor reports to judge".into()))?;
    if !(split > 0.0 && split < 1.0) {
        return Err(HypothesisError::Other(format!("split {split} must lie in (0, 1)")));
    }
    let t0 = reports[0].t;
    let horizon = last.t;
    let cut = t0 + split * (horizon - t0);
    let mut early = f64::NEG_INFINITY;
    let mut late = f64::NEG_INFINITY;
    for r in reports {
        if r.t < cut {
            early = early.max(r.sup_u);
        } else {
            late = late.max(r.sup_u);
        }
    }
    if early == f64::NEG_INFINITY {
        early = late;
    }
    let ratio = if early == 0.0 && late <= 0.0 {
        1.0
    } else if early <= 0.0 {
        f64::INFINITY
    } else {
        late / early
    };
    Ok(BoundednessVerdict {
        sup_all: early.max(late),
        sup_early: early,
        sup_late: late,
        growth_ratio: ratio,
        bounded: ratio <= 1.01,
        horizon,
        split,
    })
}

fn fmt_exp(x: f64) -> String {
    let s = format!("{x}");
    s.replace('.', "p")
}

/// Column names of the monitor CSV for `config`.
pub fn monitor_csv_header(config: &MonitorConfig) -> Vec<String> {
    let mut cols: Vec<String> =
        ["t", "mass_u", "sup_u", "sup_v", "min_v"].iter().map(|s| s.to_string()).collect();
    cols.extend(config.p_list.iter().map(|p| format!("lp_u@{}", fmt_exp(*p))));
    cols.extend(["grad_v_energy", "cum_grad_v", "window_Lm1", "grad_v_lq"].iter().map(|s| s.to_string()));
    cols.extend(config.alpha_list.iter().map(|a| format!("grad_alpha_cum@{}", fmt_exp(*a))));
    cols.push("kappa_ok".into());
    cols
}

pub fn write_monitor_csv<W: Write>(
    mut w: W,
    config: &MonitorConfig,
    reports: &[MonitorReport],
) -> io::Result<()> {
    writeln!(w, "{}", monitor_csv_header(config).join(","))?;
    for r in reports {
        let mut row = vec![
            fmt_f64(r.t),
            fmt_f64(r.mass_u),
            fmt_f64(r.sup_u),
            fmt_f64(r.sup_v),
            fmt_f64(r.min_v),
        ];
        row.extend(r.lp_u.iter().map(|(_, x)| fmt_f64(*x)));
        row.extend([r.grad_v_energy, r.cum_grad_v, r.window_lm1, r.grad_v_lq].map(fmt_f64));
        row.extend(r.grad_alpha_cum.iter().map(|(_, x)| fmt_f64(*x)));
        row.push(r.kappa_ok.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}
