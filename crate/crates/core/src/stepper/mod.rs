//! Time integration of the regularized system
//!
//! ```text
//! u_t = Δ((u + ε)^m φ(v)),    v_t = Δv − u v / (1 + ε u)
//! ```
//!
//! with zero-flux boundaries. Each step advances `u` explicitly in
//! divergence form (exactly conservative) and then `v` by backward Euler,
//! both from the time-`n` data. The backward-Euler matrix is an M-matrix,
//! so `0 <= v^{n+1} <= max v^n`.

pub mod cg;

use serde::{Deserialize, Serialize};

use crate::error::{HypothesisError, StepError};
use crate::exec;
use crate::field::{laplacian_into, pow_real, ScalarField};
use crate::motility::Motility;

pub use cg::{CgSettings, CgStats};

/// Diffusion exponent, regularization and spatial dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub m: f64,
    pub eps: f64,
    pub dim: usize,
}

impl ModelParams {
    pub fn new(m: f64, eps: f64, dim: usize) -> Result<Self, HypothesisError> {
        if !(m.is_finite() && m > 1.0) {
            return Err(HypothesisError::Other(format!("m must exceed 1, got {m}")));
        }
        if !(eps.is_finite() && (0.0..1.0).contains(&eps)) {
            return Err(HypothesisError::Other(format!("eps must lie in [0, 1), got {eps}")));
        }
        if !(1..=3).contains(&dim) {
            return Err(HypothesisError::Other(format!("dimension {dim} not in 1..=3")));
        }
        Ok(Self { m, eps, dim })
    }

    /// `m > d/2`, the range in which global boundedness is expected.
    pub fn boundedness_regime(&self) -> bool {
        self.m > self.dim as f64 / 2.0
    }
}

/// Cell density `u`, signal `v` and the time they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: ScalarField,
    pub v: ScalarField,
    pub t: f64,
}

impl State {
    pub fn new(u: ScalarField, v: ScalarField, t: f64) -> Result<Self, StepError> {
        u.check_same_grid(&v)?;
        Ok(Self { u, v, t })
    }

    /// Total cell mass `∫ u`.
    pub fn mass(&self) -> f64 {
        self.u.integral()
    }
}

/// Adaptive time-step controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub dt_current: f64,
    pub cfl_safety: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    /// Largest tolerated negative value of `u` before a step is rejected.
    pub tol_neg: f64,
    pub cg: CgSettings,
}

impl StepControl {
    /// Controller with the default safety factor 0.9 and CG settings.
    /// `tol_neg` is set to `1e-10 * sup u0`.
    pub fn for_initial(u0: &ScalarField, dt_max: f64, dt_min: f64) -> Self {
        Self {
            dt_current: dt_max,
            cfl_safety: 0.9,
            dt_max,
            dt_min,
            tol_neg: 1e-10 * u0.max().max(0.0),
            cg: CgSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), StepError> {
        let ok = self.cfl_safety > 0.0
            && self.cfl_safety <= 1.0
            && self.dt_min > 0.0
            && self.dt_min <= self.dt_max
            && self.dt_max.is_finite()
            && self.tol_neg >= 0.0
            && self.cg.tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(StepError::InvalidRequest(format!("inconsistent step control {self:?}")))
        }
    }
}

#[inline]
fn positive_part(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
fn shifted_pow(u: f64, eps: f64, m: f64) -> f64 {
    pow_real(positive_part(u) + eps, m)
}

/// `w = (max(u, 0) + ε)^m φ(v)`, the quantity whose Laplacian drives `u`.
pub fn mobility_field(
    u: &ScalarField,
    v: &ScalarField,
    params: &ModelParams,
    phi: &Motility,
) -> Result<ScalarField, StepError> {
    u.check_same_grid(v)?;
    let (uv, vv) = (u.values(), v.values());
    let (m, eps) = (params.m, params.eps);
    let mut bad = None;
    let phis = exec::collect(vv.len(), |i| phi.eval(vv[i]));
    if let Some((i, &p)) = phis.iter().enumerate().find(|(_, p)| !(**p > 0.0 && p.is_finite())) {
        bad = Some((vv[i], p));
    }
    if let Some((at, value)) = bad {
        return Err(HypothesisError::NonPositiveMotility { at, value }.into());
    }
    let w = exec::collect(uv.len(), |i| shifted_pow(uv[i], eps, m) * phis[i]);
    Ok(ScalarField::from_kernel(u.grid_arc().clone(), w))
}

/// Explicit conservative update `u + dt L_h w`.
///
/// Rejects the step when the result dips below `-tol_neg`.
pub fn step_u_explicit(
    state: &State,
    params: &ModelParams,
    phi: &Motility,
    dt: f64,
    tol_neg: f64,
) -> Result<ScalarField, StepError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(StepError::InvalidRequest(format!("dt = {dt} must be positive")));
    }
    let w = mobility_field(&state.u, &state.v, params, phi)?;
    let g = state.u.grid();
    let mut lap = vec![0.0; g.len()];
    laplacian_into(g, w.values(), &mut lap);
    let u = state.u.values();
    let next = exec::collect(u.len(), |i| u[i] + dt * lap[i]);
    let min_u = exec::min_by(next.len(), |i| next[i]);
    if min_u < -tol_neg || !min_u.is_finite() {
        return Err(StepError::Undershoot { min_u, tol: tol_neg });
    }
    Ok(ScalarField::from_kernel(state.u.grid_arc().clone(), next))
}

/// Backward-Euler signal update: solves `(I − dt L_h + dt R) v' = v` with
/// `R_i = u_i / (1 + ε u_i)`.
///
/// If the solve meets its residual target but the iterate leaves
/// `[0, max v]`, the iteration continues at a tighter tolerance, since the
/// exact solution of the M-matrix system lies in that interval.
pub fn step_v_implicit(
    state: &State,
    params: &ModelParams,
    dt: f64,
    settings: &CgSettings,
) -> Result<(ScalarField, CgStats), StepError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(StepError::InvalidRequest(format!("dt = {dt} must be positive")));
    }
    let g = state.v.grid();
    let u = state.u.values();
    let eps = params.eps;
    let reaction = exec::collect(u.len(), |i| {
        let ui = positive_part(u[i]);
        ui / (1.0 + eps * ui)
    });
    let op = cg::ImplicitOperator::new(g, dt, &reaction);
    let b = state.v.values();
    let mut x = b.to_vec();
    let upper = state.v.max();
    let mut local = *settings;
    let mut total = CgStats::default();
    loop {
        let stats = cg::solve(&op, b, &mut x, &local)?;
        total.iterations += stats.iterations;
        total.residual = stats.residual;
        let lo = exec::min_by(x.len(), |i| x[i]);
        let hi = exec::max_by(x.len(), |i| x[i]);
        if (lo >= 0.0 && hi <= upper) || local.tol <= 1e-15 {
            break;
        }
        local.tol = (local.tol * 1e-2).max(1e-15);
    }
    Ok((ScalarField::from_kernel(state.v.grid_arc().clone(), x), total))
}

/// Largest stable explicit step, `safety · min h² / (2 d D_max)` with
/// `D_max = max m (u + ε)^{m−1} φ(v)`, clipped to `[dt_min, dt_max]`.
pub fn stable_dt(state: &State, params: &ModelParams, phi: &Motility, control: &StepControl) -> f64 {
    let (u, v) = (state.u.values(), state.v.values());
    let (m, eps) = (params.m, params.eps);
    let d_max = exec::max_by(u.len(), |i| m * shifted_pow(u[i], eps, m - 1.0) * phi.eval(v[i]));
    if !(d_max > 0.0) {
        return control.dt_max;
    }
    let g = state.u.grid();
    let h2 = g.spacing().iter().map(|h| h * h).fold(f64::INFINITY, f64::min);
    let dt = control.cfl_safety * h2 / (2.0 * g.dim() as f64 * d_max);
    dt.clamp(control.dt_min, control.dt_max)
}

/// Diagnostics of one accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Time at the end of the step.
    pub t: f64,
    pub dt: f64,
    /// Rejected attempts before this step was accepted.
    pub rejections: u32,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub min_u: f64,
    pub min_v: f64,
    pub max_v: f64,
}

/// Receives accepted steps and output-time states from [`advance`].
pub trait Observer {
    fn on_output(&mut self, _state: &State) {}
    fn on_step(&mut self, _prev: &State, _next: &State, _record: &StepRecord) {}
}

impl Observer for () {}

impl<T: Observer + ?Sized> Observer for &mut T {
    fn on_output(&mut self, state: &State) {
        (**self).on_output(state)
    }
    fn on_step(&mut self, prev: &State, next: &State, record: &StepRecord) {
        (**self).on_step(prev, next, record)
    }
}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn on_output(&mut self, state: &State) {
        self.0.on_output(state);
        self.1.on_output(state);
    }
    fn on_step(&mut self, prev: &State, next: &State, record: &StepRecord) {
        self.0.on_step(prev, next, record);
        self.1.on_step(prev, next, record);
    }
}

/// Stores every output-time state and every step record.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub snapshots: Vec<State>,
    pub steps: Vec<StepRecord>,
}

impl Observer for Trajectory {
    fn on_output(&mut self, state: &State) {
        self.snapshots.push(state.clone());
    }
    fn on_step(&mut self, _prev: &State, _next: &State, record: &StepRecord) {
        self.steps.push(*record);
    }
}

impl Trajectory {
    pub fn initial(&self) -> Option<&State> {
        self.snapshots.first()
    }

    pub fn last(&self) -> Option<&State> {
        self.snapshots.last()
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }
}

/// Output times: every multiple of `dt_out` plus the final time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputSchedule {
    pub dt_out: f64,
}

impl OutputSchedule {
    fn next_after(&self, t: f64) -> f64 {
        let k = (t / self.dt_out).floor() + 1.0;
        let mut next = k * self.dt_out;
        if next <= t * (1.0 + 1e-14) + 1e-300 {
            next = (k + 1.0) * self.dt_out;
        }
        next
    }
}

/// Integrates from `state.t` to `t_end`.
///
/// The initial state, every multiple of `schedule.dt_out` and the final
/// state are passed to `observer.on_output`; every accepted step is passed
/// to `observer.on_step`. A step whose `u` update undershoots `-tol_neg` is
/// retried with half the step; falling below `dt_min` is a
/// [`StepError::NonConvergence`].
pub fn advance<O: Observer + ?Sized>(
    mut state: State,
    params: &ModelParams,
    phi: &Motility,
    control: &mut StepControl,
    schedule: OutputSchedule,
    t_end: f64,
    observer: &mut O,
) -> Result<State, StepError> {
    control.validate()?;
    if !(t_end > state.t) {
        return Err(StepError::InvalidRequest(format!(
            "t_end = {t_end} must exceed the current time {}",
            state.t
        )));
    }
    if !(schedule.dt_out > 0.0) {
        return Err(StepError::InvalidRequest("output cadence must be positive".into()));
    }
    observer.on_output(&state);
    let mut next_out = schedule.next_after(state.t).min(t_end);
    while state.t < t_end {
        let mut dt = stable_dt(&state, params, phi, control);
        let mut rejections = 0;
        let (u_next, t_next, dt_used) = loop {
            let (step, t_next) = snap(state.t, dt, next_out);
            match step_u_explicit(&state, params, phi, step, control.tol_neg) {
                Ok(u) => break (u, t_next, step),
                Err(StepError::Undershoot { .. }) => {
                    rejections += 1;
                    dt = step * 0.5;
                    if dt < control.dt_min {
                        return Err(StepError::NonConvergence {
                            t: state.t,
                            dt,
                            dt_min: control.dt_min,
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        };
        let (v_next, stats) = step_v_implicit(&state, params, dt_used, &control.cg)?;
        control.dt_current = dt_used;
        let next = State { u: u_next, v: v_next, t: t_next };
        let record = StepRecord {
            t: t_next,
            dt: dt_used,
            rejections,
            cg_iterations: stats.iterations,
            cg_residual: stats.residual,
            min_u: next.u.min(),
            min_v: next.v.min(),
            max_v: next.v.max(),
        };
        observer.on_step(&state, &next, &record);
        state = next;
        if state.t >= next_out {
            observer.on_output(&state);
            next_out = schedule.next_after(state.t).min(t_end);
        }
    }
    Ok(state)
}

/// Step size and landing time that never overshoot `target`; steps that
/// would stop just short of it are stretched onto it.
fn snap(t: f64, dt: f64, target: f64) -> (f64, f64) {
    if t + dt >= target - 1e-9 * dt {
        (target - t, target)
    } else {
        (dt, t + dt)
    }
}

/// Runs [`advance`] and returns the recorded trajectory.
pub fn simulate(
    state: State,
    params: &ModelParams,
    phi: &Motility,
    control: &mut StepControl,
    schedule: OutputSchedule,
    t_end: f64,
) -> Result<Trajectory, StepError> {
    let mut traj = Trajectory::default();
    advance(state, params, phi, control, schedule, t_end, &mut traj)?;
    Ok(traj)
}
