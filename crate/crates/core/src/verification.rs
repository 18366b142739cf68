//! Checks of the weak formulation, the `(u + ε)^p` testing identity, the
//! ε → 0 limit and self-convergence of the scheme.
//!
//! Test functions are closed-form with analytic derivatives, so quadrature
//! is the only error source besides the scheme. Space integrals use the
//! midpoint rule on cells (or faces, for gradient terms) and time integrals
//! the trapezoid rule on stored states.

use serde::Serialize;

use crate::config::SimConfig;
use crate::error::StudyError;
use crate::exec::{self, Compensated};
use crate::field::{face_sum, ScalarField};
use crate::grid::Grid;
use crate::motility::Motility;
use crate::stepper::{self, ModelParams, Observer, State, StepRecord, Trajectory};

/// Quintic smoothstep `6τ⁵ − 15τ⁴ + 10τ³`; C² at both ends.
fn smoothstep(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

fn smoothstep_deriv(tau: f64) -> f64 {
    if !(0.0..=1.0).contains(&tau) {
        return 0.0;
    }
    30.0 * tau * tau * (tau - 1.0) * (tau - 1.0)
}

/// Tensor-product bump `∏_k P(1 − |x_k − c_k| / r_k)`, supported in the
/// box of half-widths `r` around `c`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
}

impl Bump {
    pub fn new(center: &[f64], radius: &[f64]) -> Result<Self, StudyError> {
        if center.len() != radius.len() || center.is_empty() || center.len() > 3 {
            return Err(StudyError::Invalid("bump center and radius need matching lengths in 1..=3".into()));
        }
        if radius.iter().any(|r| !(*r > 0.0)) {
            return Err(StudyError::Invalid("bump radii must be positive".into()));
        }
        Ok(Self { center: center.to_vec(), radius: radius.to_vec() })
    }

    fn factor(&self, k: usize, x: f64) -> f64 {
        smoothstep(1.0 - (x - self.center[k]).abs() / self.radius[k])
    }

    fn factor_deriv(&self, k: usize, x: f64) -> f64 {
        let d = x - self.center[k];
        -smoothstep_deriv(1.0 - d.abs() / self.radius[k]) * d.signum() / self.radius[k]
    }

    pub fn value(&self, x: &[f64; 3]) -> f64 {
        (0..self.center.len()).map(|k| self.factor(k, x[k])).product()
    }

    /// Partial derivative along `axis`.
    pub fn grad(&self, x: &[f64; 3], axis: usize) -> f64 {
        (0..self.center.len())
            .map(|k| if k == axis { self.factor_deriv(k, x[k]) } else { self.factor(k, x[k]) })
            .product()
    }
}

/// `ψ(x, t) = s(t) b(x)` with `s(t) = 1 − P(t / T_ψ)`, so `ψ = 0` for
/// `t ≥ T_ψ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFunction {
    pub bump: Bump,
    pub t_support: f64,
}

impl TestFunction {
    pub fn new(bump: Bump, t_support: f64) -> Result<Self, StudyError> {
        if !(t_support > 0.0 && t_support.is_finite()) {
            return Err(StudyError::Invalid(format!("time support {t_support} must be positive")));
        }
        Ok(Self { bump, t_support })
    }

    pub fn time_profile(&self, t: f64) -> f64 {
        1.0 - smoothstep(t / self.t_support)
    }

    pub fn psi(&self, x: &[f64; 3], t: f64) -> f64 {
        self.time_profile(t) * self.bump.value(x)
    }

    pub fn psi_t(&self, x: &[f64; 3], t: f64) -> f64 {
        -smoothstep_deriv(t / self.t_support) / self.t_support * self.bump.value(x)
    }

    pub fn grad_psi(&self, x: &[f64; 3], t: f64, axis: usize) -> f64 {
        self.time_profile(t) * self.bump.grad(x, axis)
    }
}

/// Spatial weight for [`testing_identity_residual`].
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialWeight {
    One,
    Bump(Bump),
}

impl SpatialWeight {
    fn sample(&self, grid: &Grid) -> Vec<f64> {
        match self {
            SpatialWeight::One => vec![1.0; grid.len()],
            SpatialWeight::Bump(b) => exec::collect(grid.len(), |i| b.value(&grid.center(i))),
        }
    }
}

/// Residual of one integral identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    /// `|LHS − RHS|`.
    pub value: f64,
    /// Sum of the absolute values of all terms.
    pub normalizer: f64,
}

impl Residual {
    fn from_terms(lhs: &[f64], rhs: &[f64]) -> Self {
        let l: f64 = lhs.iter().sum();
        let r: f64 = rhs.iter().sum();
        let normalizer = lhs.iter().chain(rhs).map(|x| x.abs()).sum();
        Self { value: (l - r).abs(), normalizer }
    }

    /// `value / normalizer`, or 0 when every term vanishes.
    pub fn normalized(&self) -> f64 {
        if self.normalizer > 0.0 {
            self.value / self.normalizer
        } else {
            0.0
        }
    }
}

/// Both weak-formulation residuals of a trajectory for one test function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub r_u: Residual,
    pub r_v: Residual,
    pub h: f64,
    pub dt_max: f64,
    pub states: usize,
}

fn check_coverage(traj: &Trajectory, psi: &TestFunction) -> Result<(), StudyError> {
    let horizon = traj.snapshots.last().map(|s| s.t).unwrap_or(f64::NEG_INFINITY);
    if traj.snapshots.len() < 2 {
        return Err(StudyError::Invalid("trajectory needs at least two states".into()));
    }
    if horizon < psi.t_support {
        return Err(StudyError::Invalid(format!(
            "test function support {} exceeds the trajectory horizon {horizon}",
            psi.t_support
        )));
    }
    Ok(())
}

/// Trapezoid rule over the state times of `traj`.
fn trapezoid<F: Fn(&State) -> f64>(traj: &Trajectory, f: F) -> f64 {
    let vals: Vec<f64> = traj.snapshots.iter().map(&f).collect();
    let mut acc = Compensated::default();
    for (w, s) in vals.windows(2).zip(traj.snapshots.windows(2)) {
        acc.add(0.5 * (s[1].t - s[0].t) * (w[0] + w[1]));
    }
    acc.value()
}

fn face_center(grid: &Grid, lo: usize, axis: usize) -> [f64; 3] {
    let mut x = grid.center(lo);
    x[axis] += 0.5 * grid.spacing()[axis];
    x
}

fn cell_integral<F: Fn(usize) -> f64 + Sync>(grid: &Grid, f: F) -> f64 {
    exec::sum_by(grid.len(), f) * grid.cell_volume()
}

/// Residual of the weak identity for `u`,
/// `−∫∫ u ψ_t − ∫ u₀ ψ(0) = −∫∫ φ(v) ∇u^m·∇ψ − ∫∫ φ'(v) u^m ∇v·∇ψ`.
///
/// `u^m` uses the positive part of `u`, so regularized runs carry their
/// O(ε) defect into the residual.
pub fn weak_residual_u(
    traj: &Trajectory,
    psi: &TestFunction,
    phi: &Motility,
    m: f64,
) -> Result<Residual, StudyError> {
    check_coverage(traj, psi)?;
    let first = &traj.snapshots[0];
    let g = first.u.grid();
    let a = trapezoid(traj, |s| {
        let u = s.u.values();
        cell_integral(g, |i| u[i] * psi.psi_t(&g.center(i), s.t))
    });
    let u0 = first.u.values();
    let b = cell_integral(g, |i| u0[i] * psi.psi(&g.center(i), first.t));
    let vol = g.cell_volume();
    let c = trapezoid(traj, |s| {
        let (u, v) = (s.u.values(), s.v.values());
        face_sum(g, |k, lo, hi| {
            let h = g.spacing()[k];
            let um = |x: f64| x.max(0.0).powf(m);
            let phi_f = 0.5 * (phi.eval(v[lo]) + phi.eval(v[hi]));
            phi_f * (um(u[hi]) - um(u[lo])) / h * psi.grad_psi(&face_center(g, lo, k), s.t, k)
        }) * vol
    });
    let d = trapezoid(traj, |s| {
        let (u, v) = (s.u.values(), s.v.values());
        face_sum(g, |k, lo, hi| {
            let h = g.spacing()[k];
            let um = |x: f64| x.max(0.0).powf(m);
            let dphi_f = 0.5 * (phi.deriv(v[lo]) + phi.deriv(v[hi]));
            let um_f = 0.5 * (um(u[lo]) + um(u[hi]));
            dphi_f * um_f * (v[hi] - v[lo]) / h * psi.grad_psi(&face_center(g, lo, k), s.t, k)
        }) * vol
    });
    if ![a, b, c, d].iter().all(|x| x.is_finite()) {
        return Err(StudyError::Invalid("weak residual for u is not finite".into()));
    }
    Ok(Residual::from_terms(&[-a, -b], &[-c, -d]))
}

/// Residual of the weak identity for `v`,
/// `−∫∫ v ψ_t − ∫ v₀ ψ(0) = −∫∫ ∇v·∇ψ − ∫∫ u v ψ`.
///
/// The consumption term is always the limit form `u v`.
pub fn weak_residual_v(traj: &Trajectory, psi: &TestFunction) -> Result<Residual, StudyError> {
    check_coverage(traj, psi)?;
    let first = &traj.snapshots[0];
    let g = first.v.grid();
    let a = trapezoid(traj, |s| {
        let v = s.v.values();
        cell_integral(g, |i| v[i] * psi.psi_t(&g.center(i), s.t))
    });
    let v0 = first.v.values();
    let b = cell_integral(g, |i| v0[i] * psi.psi(&g.center(i), first.t));
    let vol = g.cell_volume();
    let c = trapezoid(traj, |s| {
        let v = s.v.values();
        face_sum(g, |k, lo, hi| {
            (v[hi] - v[lo]) / g.spacing()[k] * psi.grad_psi(&face_center(g, lo, k), s.t, k)
        }) * vol
    });
    let d = trapezoid(traj, |s| {
        let (u, v) = (s.u.values(), s.v.values());
        cell_integral(g, |i| u[i].max(0.0) * v[i] * psi.psi(&g.center(i), s.t))
    });
    if ![a, b, c, d].iter().all(|x| x.is_finite()) {
        return Err(StudyError::Invalid("weak residual for v is not finite".into()));
    }
    Ok(Residual::from_terms(&[-a, -b], &[-c, -d]))
}

/// Both weak residuals, with grid and step metadata.
pub fn weak_residuals(
    traj: &Trajectory,
    psi: &TestFunction,
    phi: &Motility,
    m: f64,
) -> Result<ResidualReport, StudyError> {
    let r_u = weak_residual_u(traj, psi, phi, m)?;
    let r_v = weak_residual_v(traj, psi)?;
    let g = traj.snapshots[0].u.grid();
    let h = g.spacing().iter().cloned().fold(0.0, f64::max);
    let dt_max = traj.snapshots.windows(2).map(|w| w[1].t - w[0].t).fold(0.0, f64::max);
    Ok(ResidualReport { r_u, r_v, h, dt_max, states: traj.snapshots.len() })
}

/// The identity for `(1/p) d/dt ∫ (u + ε)^p ψ` evaluated on one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResidual {
    pub residual: Residual,
    /// Discrete time derivative `(1/p)(∫(u'+ε)^p ψ − ∫(u+ε)^p ψ)/dt`.
    pub lhs: f64,
    /// The four right-hand side integrals, in the order `|∇u|²`, `∇u·∇v`,
    /// `∇u·∇ψ`, `∇v·∇ψ`.
    pub terms: [f64; 4],
}

/// `(a^q − b^q)/(a − b)`, or `q b^{q−1}` when `a == b`.
fn secant_pow(a: f64, b: f64, q: f64) -> f64 {
    if a == b {
        if q == 0.0 {
            0.0
        } else {
            q * b.powf(q - 1.0)
        }
    } else {
        (a.powf(q) - b.powf(q)) / (a - b)
    }
}

/// Residual of
///
/// ```text
/// (1/p) d/dt ∫(u+ε)^p ψ = −m(p−1) ∫(u+ε)^{m+p−3} φ(v) |∇u|² ψ
///                         −(p−1) ∫(u+ε)^{m+p−2} φ'(v) ψ ∇u·∇v
///                         −m     ∫(u+ε)^{m+p−2} φ(v) ∇u·∇ψ
///                         −      ∫(u+ε)^{m+p−1} φ'(v) ∇v·∇ψ
/// ```
///
/// over the step `prev → next`. Face coefficients are secants of the
/// powers, so the four terms sum exactly to the summation-by-parts form of
/// the scheme and the residual is pure time-discretization error. With
/// `p = 1` and `ψ ≡ 1` the right side vanishes and the residual is the
/// mass defect divided by `dt`.
pub fn testing_identity_residual(
    prev: &State,
    next: &State,
    params: &ModelParams,
    phi: &Motility,
    p: f64,
    weight: &SpatialWeight,
) -> Result<IdentityResidual, StudyError> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(StudyError::Invalid(format!("p = {p} must be positive")));
    }
    prev.u.check_same_grid(&next.u)?;
    let dt = next.t - prev.t;
    if !(dt > 0.0) {
        return Err(StudyError::Invalid("states must be consecutive in time".into()));
    }
    let g = prev.u.grid();
    let (m, eps) = (params.m, params.eps);
    let psi = weight.sample(g);
    let (u0, u1, v) = (prev.u.values(), next.u.values(), prev.v.values());
    let shifted = |x: f64| x.max(0.0) + eps;
    let vol = g.cell_volume();

    let change = |i: usize| {
        if p == 1.0 {
            u1[i].max(0.0) - u0[i].max(0.0)
        } else {
            (shifted(u1[i]).powf(p) - shifted(u0[i]).powf(p)) / p
        }
    };
    let lhs = exec::sum_by(g.len(), |i| change(i) * psi[i]) * vol / dt;
    let lhs_abs = exec::sum_by(g.len(), |i| (change(i) * psi[i]).abs()) * vol / dt;

    let face_terms = |k: usize, lo: usize, hi: usize| -> [f64; 4] {
        let inv_h2 = 1.0 / (g.spacing()[k] * g.spacing()[k]);
        let (a, b) = (shifted(u0[lo]), shifted(u0[hi]));
        let du = u0[hi] - u0[lo];
        let dv = v[hi] - v[lo];
        let dpsi = psi[hi] - psi[lo];
        let s_m = secant_pow(b, a, m);
        let s_p = secant_pow(b, a, p - 1.0);
        let (phi_a, phi_b) = (phi.eval(v[lo]), phi.eval(v[hi]));
        let phi_f = 0.5 * (phi_a + phi_b);
        let dphi = if dv == 0.0 { phi.deriv(v[lo]) } else { (phi_b - phi_a) / dv };
        let um = 0.5 * (a.powf(m) + b.powf(m));
        let up = 0.5 * (a.powf(p - 1.0) + b.powf(p - 1.0));
        let psi_f = 0.5 * (psi[lo] + psi[hi]);
        [
            -s_m * s_p * phi_f * psi_f * du * du * inv_h2,
            -um * dphi * s_p * psi_f * du * dv * inv_h2,
            -s_m * phi_f * up * du * dpsi * inv_h2,
            -um * dphi * up * dv * dpsi * inv_h2,
        ]
    };
    let mut terms = [0.0; 4];
    let mut abs_sum = 0.0;
    for (j, t) in terms.iter_mut().enumerate() {
        *t = face_sum(g, |k, lo, hi| face_terms(k, lo, hi)[j]) * vol;
        abs_sum += face_sum(g, |k, lo, hi| face_terms(k, lo, hi)[j].abs()) * vol;
    }
    let rhs: f64 = terms.iter().sum();
    let residual = Residual { value: (lhs - rhs).abs(), normalizer: lhs_abs + abs_sum };
    if !(residual.value.is_finite() && residual.normalizer.is_finite()) {
        return Err(StudyError::Invalid(format!(
            "identity residual is not finite for p = {p}; u + ε vanishes somewhere"
        )));
    }
    Ok(IdentityResidual { residual, lhs, terms })
}

/// Observer that stores the state after every accepted step.
#[derive(Debug, Clone, Default)]
pub struct DenseTrajectory(pub Trajectory);

impl Observer for DenseTrajectory {
    fn on_output(&mut self, state: &State) {
        if self.0.snapshots.is_empty() {
            self.0.snapshots.push(state.clone());
        }
    }
    fn on_step(&mut self, _prev: &State, next: &State, record: &StepRecord) {
        self.0.snapshots.push(next.clone());
        self.0.steps.push(*record);
    }
}

fn build_error(e: impl std::fmt::Display) -> StudyError {
    StudyError::Invalid(e.to_string())
}

/// Runs `config` to its horizon, keeping output-time states, or every
/// accepted state when `dense` is set.
pub fn run_trajectory(config: &SimConfig, dense: bool) -> Result<Trajectory, StudyError> {
    let problem = config.build().map_err(build_error)?;
    let mut control = problem.control;
    if dense {
        let mut obs = DenseTrajectory::default();
        stepper::advance(
            problem.initial,
            &problem.params,
            &problem.phi,
            &mut control,
            problem.schedule,
            problem.horizon,
            &mut obs,
        )?;
        Ok(obs.0)
    } else {
        Ok(stepper::simulate(
            problem.initial,
            &problem.params,
            &problem.phi,
            &mut control,
            problem.schedule,
            problem.horizon,
        )?)
    }
}

/// `‖a − b‖_{L²(Ω×(0,T))}` from aligned output states, trapezoid in time.
pub fn space_time_l2<F>(a: &Trajectory, b: &Trajectory, field: F) -> Result<f64, StudyError>
where
    F: Fn(&State) -> &ScalarField,
{
    if a.snapshots.len() != b.snapshots.len() || a.snapshots.len() < 2 {
        return Err(StudyError::Invalid(format!(
            "trajectories are not aligned: {} vs {} states",
            a.snapshots.len(),
            b.snapshots.len()
        )));
    }
    let mut acc = Compensated::default();
    let mut prev: Option<(f64, f64)> = None;
    for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
        let tol = 1e-9 * sa.t.abs().max(1.0);
        if (sa.t - sb.t).abs() > tol {
            return Err(StudyError::Invalid(format!("state times differ: {} vs {}", sa.t, sb.t)));
        }
        let (fa, fb) = (field(sa), field(sb));
        fa.check_same_grid(fb)?;
        let (x, y) = (fa.values(), fb.values());
        let sq = cell_integral(fa.grid(), |i| (x[i] - y[i]).powi(2));
        if let Some((t0, q0)) = prev {
            acc.add(0.5 * (sa.t - t0) * (q0 + sq));
        }
        prev = Some((sa.t, sq));
    }
    Ok(acc.value().max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsRow {
    pub eps: f64,
    pub eps_next: f64,
    pub delta: f64,
}

/// Consecutive space-time differences of `u` along a decreasing ε list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsTable {
    pub rows: Vec<EpsRow>,
    pub strictly_decreasing: bool,
}

fn check_eps_list(eps_list: &[f64]) -> Result<(), StudyError> {
    if eps_list.len() < 3 {
        return Err(StudyError::Invalid("need at least three ε values".into()));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(StudyError::Invalid("ε values must be strictly decreasing".into()));
    }
    if eps_list.iter().any(|e| !(0.0..1.0).contains(e)) {
        return Err(StudyError::Invalid("ε values must lie in [0, 1)".into()));
    }
    Ok(())
}

/// Runs `base` once per ε (concurrently) and tabulates
/// `δ_j = ‖u_{ε_j} − u_{ε_{j+1}}‖_{L²(Ω×(0,T))}` from output-time states.
pub fn eps_limit_study(base: &SimConfig, eps_list: &[f64]) -> Result<EpsTable, StudyError> {
    check_eps_list(eps_list)?;
    let runs = exec::map_jobs(eps_list.to_vec(), |eps| {
        let mut c = base.clone();
        c.model.eps = eps;
        run_trajectory(&c, false)
    });
    let trajs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(eps_list.len() - 1);
    for j in 0..eps_list.len() - 1 {
        rows.push(EpsRow {
            eps: eps_list[j],
            eps_next: eps_list[j + 1],
            delta: space_time_l2(&trajs[j], &trajs[j + 1], |s| &s.u)?,
        });
    }
    let strictly_decreasing = rows.windows(2).all(|w| w[1].delta < w[0].delta);
    Ok(EpsTable { rows, strictly_decreasing })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRow {
    pub level: usize,
    pub h: f64,
    pub dt: f64,
    /// Coarse-grid L² distance of the final `u` to the next level.
    pub diff_u: Option<f64>,
    pub diff_v: Option<f64>,
}

/// Richardson order estimates from consecutive-level differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderStudy {
    pub rows: Vec<LevelRow>,
    /// `log2(diff_l / diff_{l+1})`; `None` when a difference vanishes.
    pub order_u: Vec<Option<f64>>,
    pub order_v: Vec<Option<f64>>,
    /// Set when the differences of a nontrivial field fail to decrease.
    pub inconclusive: bool,
}

impl OrderStudy {
    /// Finest-level order of `u`.
    pub fn final_order_u(&self) -> Option<f64> {
        self.order_u.last().copied().flatten()
    }

    pub fn final_order_v(&self) -> Option<f64> {
        self.order_v.last().copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub spatial: OrderStudy,
    pub temporal: OrderStudy,
}

fn coarse_l2(a: &ScalarField, b: &ScalarField) -> Result<f64, StudyError> {
    a.check_same_grid(b)?;
    let (x, y) = (a.values(), b.values());
    Ok(cell_integral(a.grid(), |i| (x[i] - y[i]).powi(2)).sqrt())
}

fn orders(diffs: &[f64]) -> (Vec<Option<f64>>, bool) {
    let trivial = diffs.iter().all(|d| *d == 0.0);
    let orders = diffs
        .windows(2)
        .map(|w| (w[0] > 0.0 && w[1] > 0.0).then(|| (w[0] / w[1]).log2()))
        .collect();
    let monotone = diffs.windows(2).all(|w| w[1] < w[0]);
    (orders, !trivial && !monotone)
}

fn order_study(levels: Vec<(f64, f64, State)>, factor: impl Fn(usize) -> usize) -> Result<OrderStudy, StudyError> {
    let coarse: Vec<(ScalarField, ScalarField)> = levels
        .iter()
        .enumerate()
        .map(|(l, (_, _, s))| Ok((s.u.restrict(factor(l))?, s.v.restrict(factor(l))?)))
        .collect::<Result<_, StudyError>>()?;
    let mut du = Vec::new();
    let mut dv = Vec::new();
    for w in coarse.windows(2) {
        du.push(coarse_l2(&w[0].0, &w[1].0)?);
        dv.push(coarse_l2(&w[0].1, &w[1].1)?);
    }
    let rows = levels
        .iter()
        .enumerate()
        .map(|(l, (h, dt, _))| LevelRow {
            level: l,
            h: *h,
            dt: *dt,
            diff_u: du.get(l).copied(),
            diff_v: dv.get(l).copied(),
        })
        .collect();
    let (order_u, bad_u) = orders(&du);
    let (order_v, bad_v) = orders(&dv);
    Ok(OrderStudy { rows, order_u, order_v, inconclusive: bad_u || bad_v })
}

fn final_state(config: &SimConfig) -> Result<State, StudyError> {
    let traj = run_trajectory(config, false)?;
    traj.snapshots.last().cloned().ok_or_else(|| StudyError::Invalid("run produced no states".into()))
}

fn check_levels(levels: usize) -> Result<(), StudyError> {
    if levels < 3 {
        return Err(StudyError::Invalid(format!("need at least 3 levels, got {levels}")));
    }
    Ok(())
}

/// Spatial study: level `l` refines the grid by `2^l` and caps the step at
/// `dt_max / 4^l`.
pub fn spatial_convergence(base: &SimConfig, levels: usize) -> Result<OrderStudy, StudyError> {
    check_levels(levels)?;
    let dt0 = base.tolerances.dt_max;
    let h0 = base.grid.l.iter().zip(&base.grid.n).map(|(l, n)| l / *n as f64).fold(0.0, f64::max);
    let runs = exec::map_jobs((0..levels).collect(), |l| {
        let mut c = base.refined(1 << l);
        let dt = dt0 / 4f64.powi(l as i32);
        c.tolerances.dt_max = dt;
        c.tolerances.dt_min = c.tolerances.dt_min.min(dt * 1e-6);
        final_state(&c).map(|s| (h0 / (1 << l) as f64, dt, s))
    });
    order_study(runs.into_iter().collect::<Result<_, _>>()?, |l| 1 << l)
}

/// Temporal study on the base grid: level `l` caps the step at
/// `dt_max / 2^l`.
pub fn temporal_convergence(base: &SimConfig, levels: usize) -> Result<OrderStudy, StudyError> {
    check_levels(levels)?;
    let dt0 = base.tolerances.dt_max;
    let h0 = base.grid.l.iter().zip(&base.grid.n).map(|(l, n)| l / *n as f64).fold(0.0, f64::max);
    let runs = exec::map_jobs((0..levels).collect(), |l| {
        let mut c = base.clone();
        let dt = dt0 / (1u64 << l) as f64;
        c.tolerances.dt_max = dt;
        c.tolerances.dt_min = c.tolerances.dt_min.min(dt * 1e-6);
        final_state(&c).map(|s| (h0, dt, s))
    });
    order_study(runs.into_iter().collect::<Result<_, _>>()?, |_| 1)
}

/// Spatial and temporal Richardson order estimates from final-time fields
/// restricted to the base grid.
pub fn self_convergence(base: &SimConfig, levels: usize) -> Result<ConvergenceReport, StudyError> {
    Ok(ConvergenceReport {
        spatial: spatial_convergence(base, levels)?,
        temporal: temporal_convergence(base, levels)?,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::motility::builtin_motility;

    fn psi1() -> TestFunction {
        TestFunction::new(Bump::new(&[0.5], &[0.3]).unwrap(), 0.8).unwrap()
    }

    #[test]
    fn smoothstep_endpoints_and_derivative() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        for &t in &[0.1, 0.4, 0.77] {
            let fd = (smoothstep(t + 1e-6) - smoothstep(t - 1e-6)) / 2e-6;
            assert!((fd - smoothstep_deriv(t)).abs() < 1e-8);
        }
    }

    #[test]
    fn bump_gradient_matches_finite_differences() {
        let b = Bump::new(&[0.5, 0.4], &[0.3, 0.25]).unwrap();
        let x = [0.61, 0.33, 0.0];
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += 1e-6;
            xm[k] -= 1e-6;
            let fd = (b.value(&xp) - b.value(&xm)) / 2e-6;
            assert!((fd - b.grad(&x, k)).abs() < 1e-7);
        }
        assert_eq!(b.value(&[0.9, 0.4, 0.0]), 0.0);
    }

    #[test]
    fn test_function_vanishes_after_support() {
        let psi = psi1();
        assert_eq!(psi.psi(&[0.5, 0.0, 0.0], 0.8), 0.0);
        assert_eq!(psi.psi(&[0.5, 0.0, 0.0], 2.0), 0.0);
        assert_eq!(psi.psi(&[0.5, 0.0, 0.0], 0.0), 1.0);
    }

    fn traj_of(states: Vec<State>) -> Trajectory {
        Trajectory { snapshots: states, steps: Vec::new() }
    }

    #[test]
    fn zero_density_gives_zero_u_residual() {
        let g = Arc::new(Grid::new(&[16], &[1.0]).unwrap());
        let states = (0..=10)
            .map(|j| State {
                u: ScalarField::zeros(g.clone()),
                v: ScalarField::from_fn(g.clone(), |x| 1.0 + x[0] * j as f64),
                t: j as f64 * 0.1,
            })
            .collect();
        let phi = builtin_motility("exp_decay", &[1.0]).unwrap();
        let r = weak_residual_u(&traj_of(states), &psi1(), &phi, 2.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.normalized(), 0.0);
    }

    #[test]
    fn horizon_must_cover_support() {
        let g = Arc::new(Grid::new(&[8], &[1.0]).unwrap());
        let s = |t| State { u: ScalarField::zeros(g.clone()), v: ScalarField::zeros(g.clone()), t };
        let err = weak_residual_v(&traj_of(vec![s(0.0), s(0.5)]), &psi1());
        assert!(matches!(err, Err(StudyError::Invalid(_))));
    }

    #[test]
    fn identity_rejects_nonpositive_p() {
        let g = Arc::new(Grid::new(&[4], &[1.0]).unwrap());
        let s = State { u: ScalarField::zeros(g.clone()), v: ScalarField::zeros(g.clone()), t: 0.0 };
        let mut n = s.clone();
        n.t = 0.1;
        let p = ModelParams::new(2.0, 0.0, 1).unwrap();
        let phi = builtin_motility("constant", &[1.0]).unwrap();
        for bad in [0.0, -1.0] {
            assert!(testing_identity_residual(&s, &n, &p, &phi, bad, &SpatialWeight::One).is_err());
        }
    }

    #[test]
    fn identity_vanishes_on_constant_state() {
        let g = Arc::new(Grid::new(&[6, 5], &[1.0, 1.0]).unwrap());
        let s = State { u: ScalarField::constant(g.clone(), 0.7), v: ScalarField::constant(g.clone(), 1.2), t: 0.0 };
        let mut n = s.clone();
        n.t = 0.01;
        let p = ModelParams::new(2.5, 1e-3, 2).unwrap();
        let phi = builtin_motility("exp_decay", &[0.5]).unwrap();
        let w = SpatialWeight::Bump(Bump::new(&[0.5, 0.5], &[0.3, 0.3]).unwrap());
        let r = testing_identity_residual(&s, &n, &p, &phi, 1.5, &w).unwrap();
        assert_eq!(r.residual.value, 0.0);
        assert_eq!(r.terms, [0.0; 4]);
    }

    #[test]
    fn orders_flag_non_monotone_sequences() {
        let (o, bad) = orders(&[4.0, 1.0, 0.25]);
        assert_eq!(o, vec![Some(2.0), Some(2.0)]);
        assert!(!bad);
        assert!(orders(&[1.0, 2.0, 0.5]).1);
        let (o, bad) = orders(&[0.0, 0.0]);
        assert_eq!(o, vec![None]);
        assert!(!bad);
    }

    #[test]
    fn eps_list_checks() {
        assert!(check_eps_list(&[0.1, 0.01]).is_err());
        assert!(check_eps_list(&[0.1, 0.1, 0.01]).is_err());
        assert!(check_eps_list(&[0.1, 0.01, 0.001]).is_ok());
    }
}
