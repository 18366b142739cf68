//! Cell-centered scalar fields and the finite-volume kernels built on them.
//!
//! Boundaries are homogeneous Neumann: the mirrored ghost value equals the
//! adjacent interior value, so every boundary face carries zero flux.

use std::sync::Arc;

use crate::error::FieldError;
use crate::exec;
use crate::grid::Grid;

/// One value per cell of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some((cell, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FieldError::NonFinite { cell, value });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.len();
        Self { grid, values: vec![c; n] }
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at cell centers.
    pub fn from_fn<F>(grid: Arc<Grid>, f: F) -> Self
    where
        F: Fn([f64; 3]) -> f64 + Sync,
    {
        let values = exec::collect(grid.len(), |i| f(grid.center(i)));
        Self { grid, values }
    }

    /// Wraps values produced by an internal kernel. Finiteness is checked
    /// in debug builds only.
    pub(crate) fn from_kernel(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        debug_assert!(values.iter().all(|v| v.is_finite()), "kernel produced a non-finite value");
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Pointwise image under `f`.
    pub fn map<F>(&self, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Sync,
    {
        let vals = &self.values;
        Self::from_kernel(self.grid.clone(), exec::collect(vals.len(), |i| f(vals[i])))
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map<F>(&self, other: &Self, f: F) -> Result<Self, FieldError>
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        self.check_same_grid(other)?;
        let (a, b) = (&self.values, &other.values);
        Ok(Self::from_kernel(self.grid.clone(), exec::collect(a.len(), |i| f(a[i], b[i]))))
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<(), FieldError> {
        if Arc::ptr_eq(&self.grid, &other.grid) || self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(FieldError::GridMismatch)
        }
    }

    pub fn max(&self) -> f64 {
        let v = &self.values;
        exec::max_by(v.len(), |i| v[i])
    }

    pub fn min(&self) -> f64 {
        let v = &self.values;
        exec::min_by(v.len(), |i| v[i])
    }

    /// Midpoint-rule integral over the domain.
    pub fn integral(&self) -> f64 {
        let v = &self.values;
        exec::sum_by(v.len(), |i| v[i]) * self.grid.cell_volume()
    }

    /// Averages blocks of `factor^d` cells onto the grid coarsened by `factor`.
    pub fn restrict(&self, factor: usize) -> Result<Self, FieldError> {
        let g = &self.grid;
        let mut coarse_n = Vec::with_capacity(g.dim());
        for &n in g.cells() {
            if n % factor != 0 || n / factor < 2 {
                return Err(FieldError::InvalidGrid(format!(
                    "{n} cells cannot be coarsened by {factor}"
                )));
            }
            coarse_n.push(n / factor);
        }
        let coarse = Arc::new(Grid::new(&coarse_n, g.lengths())?);
        let dim = g.dim();
        let weight = 1.0 / (factor.pow(dim as u32) as f64);
        let vals = &self.values;
        let out = exec::collect(coarse.len(), |c| {
            let mut base = [0usize; 3];
            for (k, b) in base.iter_mut().enumerate().take(dim) {
                *b = coarse.coord(c, k) * factor;
            }
            let mut acc = 0.0;
            let span = [factor, if dim > 1 { factor } else { 1 }, if dim > 2 { factor } else { 1 }];
            for a in 0..span[0] {
                for b in 0..span[1] {
                    for d in 0..span[2] {
                        let idx = [base[0] + a, base[1] + b, base[2] + d];
                        acc += vals[g.index(&idx[..dim])];
                    }
                }
            }
            acc * weight
        });
        Ok(Self::from_kernel(coarse, out))
    }
}

/// `x^a`, through repeated multiplication when `a` is a small integer.
#[inline]
pub(crate) fn pow_real(x: f64, a: f64) -> f64 {
    if a.fract() == 0.0 && a.abs() <= 8.0 {
        x.powi(a as i32)
    } else {
        x.powf(a)
    }
}

/// Two-point difference quotients on faces.
///
/// Entry `i` of axis `k` holds the gradient across the face between cell
/// `i` and its `+k` neighbour; for cells on the upper boundary that face is
/// a boundary face and the entry is zero.
#[derive(Debug, Clone)]
pub struct FaceGradient {
    grid: Arc<Grid>,
    axes: Vec<Vec<f64>>,
}

impl FaceGradient {
    pub fn of(f: &ScalarField) -> Self {
        let g = f.grid();
        let vals = f.values();
        let axes = (0..g.dim())
            .map(|k| {
                let s = g.stride(k);
                let h = g.spacing()[k];
                exec::collect(g.len(), |i| {
                    if g.has_upper(i, k) {
                        (vals[i + s] - vals[i]) / h
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        Self { grid: f.grid_arc().clone(), axes }
    }

    /// Gradient on the `+axis` face of `cell`.
    pub fn upper(&self, axis: usize, cell: usize) -> f64 {
        self.axes[axis][cell]
    }

    /// Gradient on the `-axis` face of `cell`.
    pub fn lower(&self, axis: usize, cell: usize) -> f64 {
        if self.grid.coord(cell, axis) == 0 {
            0.0
        } else {
            self.axes[axis][cell - self.grid.stride(axis)]
        }
    }

    pub fn axis(&self, axis: usize) -> &[f64] {
        &self.axes[axis]
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

/// Deterministic sum over all interior faces of `f(axis, lower_cell,
/// upper_cell)`. Each face is visited once, from its lower cell.
pub fn face_sum<F>(grid: &Grid, f: F) -> f64
where
    F: Fn(usize, usize, usize) -> f64 + Sync,
{
    exec::sum_by(grid.len(), |i| {
        let mut acc = 0.0;
        for k in 0..grid.dim() {
            if grid.has_upper(i, k) {
                acc += f(k, i, i + grid.stride(k));
            }
        }
        acc
    })
}

/// Writes the zero-flux Laplacian of `f` into `out`.
pub(crate) fn laplacian_into(grid: &Grid, f: &[f64], out: &mut [f64]) {
    let dim = grid.dim();
    exec::fill(out, |i| {
        let fi = f[i];
        let mut acc = 0.0;
        for k in 0..dim {
            let s = grid.stride(k);
            let inv_h2 = 1.0 / (grid.spacing()[k] * grid.spacing()[k]);
            let mut flux = 0.0;
            if grid.has_upper(i, k) {
                flux += f[i + s] - fi;
            }
            if grid.has_lower(i, k) {
                flux -= fi - f[i - s];
            }
            acc += flux * inv_h2;
        }
        acc
    });
}

/// Discrete Laplacian in divergence form with zero flux through the boundary.
pub fn laplacian_noflux(f: &ScalarField) -> ScalarField {
    let mut out = vec![0.0; f.len()];
    laplacian_into(f.grid(), f.values(), &mut out);
    ScalarField::from_kernel(f.grid_arc().clone(), out)
}

/// `L^p` norm with midpoint quadrature; `p = f64::INFINITY` gives the max norm.
pub fn lp_norm(f: &ScalarField, p: f64) -> Result<f64, FieldError> {
    if p.is_nan() || p < 1.0 {
        return Err(FieldError::InvalidExponent(p));
    }
    let v = f.values();
    if p.is_infinite() {
        return Ok(exec::max_by(v.len(), |i| v[i].abs()).max(0.0));
    }
    let vol = f.grid().cell_volume();
    let s = if p == 1.0 {
        exec::sum_by(v.len(), |i| v[i].abs())
    } else if p == 2.0 {
        exec::sum_by(v.len(), |i| v[i] * v[i])
    } else {
        exec::sum_by(v.len(), |i| v[i].abs().powf(p))
    };
    Ok((s * vol).powf(1.0 / p))
}

/// `∫ |∇f|²` from two-point face differences.
pub fn gradient_energy(f: &ScalarField) -> f64 {
    let g = f.grid();
    let v = f.values();
    let vol = g.cell_volume();
    let inv_h2: Vec<f64> = g.spacing().iter().map(|h| 1.0 / (h * h)).collect();
    face_sum(g, |k, a, b| {
        let d = v[b] - v[a];
        d * d * inv_h2[k]
    }) * vol
}

/// `∫ f g` with midpoint quadrature.
pub fn inner_product(f: &ScalarField, g: &ScalarField) -> Result<f64, FieldError> {
    f.check_same_grid(g)?;
    let (a, b) = (f.values(), g.values());
    Ok(exec::sum_by(a.len(), |i| a[i] * b[i]) * f.grid().cell_volume())
}

/// Cell-centered gradient magnitude: each component is the mean of the two
/// face gradients bounding the cell along that axis.
pub fn cell_gradient_norm(f: &ScalarField) -> ScalarField {
    let fg = FaceGradient::of(f);
    let g = f.grid();
    let out = exec::collect(g.len(), |i| {
        let mut s = 0.0;
        for k in 0..g.dim() {
            let c = 0.5 * (fg.upper(k, i) + fg.lower(k, i));
            s += c * c;
        }
        s.sqrt()
    });
    ScalarField::from_kernel(f.grid_arc().clone(), out)
}
