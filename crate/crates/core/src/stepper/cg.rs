//! Jacobi-preconditioned conjugate gradients for the backward-Euler signal
//! step `(I - dt L_h + dt R) x = b`.
//!
//! The operator is symmetric positive definite: `-L_h` is symmetric positive
//! semidefinite with zero-flux faces and `R >= 0` is diagonal.

use crate::error::StepError;
use crate::exec;
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    /// Relative residual target `|r| / |b|`.
    pub tol: f64,
    /// Iteration cap; `None` means `10 * cells`.
    pub max_iter: Option<usize>,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

/// `x - dt L_h x + dt R x` on a fixed grid.
pub struct ImplicitOperator<'a> {
    grid: &'a Grid,
    dt: f64,
    reaction: &'a [f64],
    inv_h2: Vec<f64>,
}

impl<'a> ImplicitOperator<'a> {
    pub fn new(grid: &'a Grid, dt: f64, reaction: &'a [f64]) -> Self {
        let inv_h2 = grid.spacing().iter().map(|h| 1.0 / (h * h)).collect();
        Self { grid, dt, reaction, inv_h2 }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let g = self.grid;
        let dt = self.dt;
        exec::fill(out, |i| {
            let xi = x[i];
            let mut lap = 0.0;
            for k in 0..g.dim() {
                let s = g.stride(k);
                let mut flux = 0.0;
                if g.has_upper(i, k) {
                    flux += x[i + s] - xi;
                }
                if g.has_lower(i, k) {
                    flux -= xi - x[i - s];
                }
                lap += flux * self.inv_h2[k];
            }
            xi - dt * lap + dt * self.reaction[i] * xi
        });
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let g = self.grid;
        exec::collect(g.len(), |i| {
            let mut d = 1.0 + self.dt * self.reaction[i];
            for k in 0..g.dim() {
                let faces = g.has_lower(i, k) as usize + g.has_upper(i, k) as usize;
                d += self.dt * faces as f64 * self.inv_h2[k];
            }
            d
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    exec::plain_sum_by(a.len(), |i| a[i] * b[i])
}

/// Solves `A x = b` starting from the contents of `x`.
pub fn solve(
    op: &ImplicitOperator<'_>,
    b: &[f64],
    x: &mut [f64],
    settings: &CgSettings,
) -> Result<CgStats, StepError> {
    let n = b.len();
    let max_iter = settings.max_iter.unwrap_or(10 * n).max(1);
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats::default());
    }
    let inv_diag: Vec<f64> = op.diagonal().iter().map(|d| 1.0 / d).collect();

    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut rel = dot(&r, &r).sqrt() / b_norm;
    if rel <= settings.tol {
        return Ok(CgStats { iterations: 0, residual: rel });
    }
    let mut z = exec::collect(n, |i| r[i] * inv_diag[i]);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);

    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(StepError::SolverFailure { iterations: it, residual: rel });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= settings.tol {
            return Ok(CgStats { iterations: it, residual: rel });
        }
        exec::fill(&mut z, |i| r[i] * inv_diag[i]);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(StepError::SolverFailure { iterations: max_iter, residual: rel })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_small_system_to_tolerance() {
        let g = Grid::new(&[6, 5], &[1.0, 1.0]).unwrap();
        let reaction: Vec<f64> = (0..g.len()).map(|i| (i % 3) as f64).collect();
        let op = ImplicitOperator::new(&g, 0.05, &reaction);
        let truth: Vec<f64> = (0..g.len()).map(|i| 1.0 + (i as f64 * 0.7).sin()).collect();
        let mut b = vec![0.0; g.len()];
        op.apply(&truth, &mut b);
        let mut x = vec![0.0; g.len()];
        let stats = solve(&op, &b, &mut x, &CgSettings { tol: 1e-13, max_iter: None }).unwrap();
        assert!(stats.residual <= 1e-13);
        for (a, t) in x.iter().zip(&truth) {
            assert!((a - t).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let g = Grid::new(&[4], &[1.0]).unwrap();
        let reaction = vec![0.0; 4];
        let op = ImplicitOperator::new(&g, 1.0, &reaction);
        let mut x = vec![3.0; 4];
        let stats = solve(&op, &[0.0; 4], &mut x, &CgSettings::default()).unwrap();
        assert_eq!(stats.iterations, 0);
        assert_eq!(x, vec![0.0; 4]);
    }

    #[test]
    fn iteration_cap_reports_failure() {
        let g = Grid::new(&[64], &[1.0]).unwrap();
        let reaction = vec![0.0; 64];
        let op = ImplicitOperator::new(&g, 10.0, &reaction);
        let b: Vec<f64> = (0..64).map(|i| (i as f64).cos()).collect();
        let mut x = vec![0.0; 64];
        let err = solve(&op, &b, &mut x, &CgSettings { tol: 1e-14, max_iter: Some(2) });
        assert!(matches!(err, Err(StepError::SolverFailure { iterations: 2, .. })));
    }
}
