//! Rectangular cell-centered meshes.

use serde::{Deserialize, Serialize};

use crate::error::FieldError;

/// Uniform cell-centered mesh on the box `[0, L_1] x ... x [0, L_d]`.
///
/// Cells are stored in row-major order: axis 0 varies slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    dim: usize,
    cells: [usize; 3],
    lengths: [f64; 3],
    spacing: [f64; 3],
    strides: [usize; 3],
    len: usize,
    /// Per cell, bit `2k` is set when the `-k` neighbour exists and bit
    /// `2k + 1` when the `+k` neighbour exists.
    faces: Vec<u8>,
}

/// Wire form of a [`Grid`]: `{dim, n: [..], l: [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub n: Vec<usize>,
    pub l: Vec<f64>,
}

impl Grid {
    pub fn new(cells: &[usize], lengths: &[f64]) -> Result<Self, FieldError> {
        let dim = cells.len();
        if !(1..=3).contains(&dim) {
            return Err(FieldError::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if lengths.len() != dim {
            return Err(FieldError::InvalidGrid(format!(
                "{dim} cell counts but {} lengths",
                lengths.len()
            )));
        }
        let mut n = [1usize; 3];
        let mut l = [1.0; 3];
        let mut h = [1.0; 3];
        for k in 0..dim {
            if cells[k] < 2 {
                return Err(FieldError::InvalidGrid(format!(
                    "axis {k} has {} cells, need at least 2",
                    cells[k]
                )));
            }
            if !(lengths[k].is_finite() && lengths[k] > 0.0) {
                return Err(FieldError::InvalidGrid(format!(
                    "axis {k} length {} is not positive",
                    lengths[k]
                )));
            }
            n[k] = cells[k];
            l[k] = lengths[k];
            h[k] = lengths[k] / cells[k] as f64;
        }
        let mut strides = [0usize; 3];
        let mut s = 1;
        for k in (0..dim).rev() {
            strides[k] = s;
            s *= n[k];
        }
        let faces = (0..s)
            .map(|i| {
                let mut mask = 0u8;
                for k in 0..dim {
                    let c = (i / strides[k]) % n[k];
                    if c > 0 {
                        mask |= 1 << (2 * k);
                    }
                    if c + 1 < n[k] {
                        mask |= 1 << (2 * k + 1);
                    }
                }
                mask
            })
            .collect();
        Ok(Self { dim, cells: n, lengths: l, spacing: h, strides, len: s, faces })
    }

    /// Uniform grid with `n` cells per axis on the cube of side `side`.
    pub fn cube(dim: usize, n: usize, side: f64) -> Result<Self, FieldError> {
        Self::new(&vec![n; dim], &vec![side; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// Measure of the whole domain.
    pub fn volume(&self) -> f64 {
        self.lengths().iter().product()
    }

    /// Grid coordinate of `cell` along `axis`.
    #[inline]
    pub fn coord(&self, cell: usize, axis: usize) -> usize {
        (cell / self.strides[axis]) % self.cells[axis]
    }

    /// Whether `cell` has a neighbour on the `-axis` side.
    #[inline]
    pub fn has_lower(&self, cell: usize, axis: usize) -> bool {
        self.faces[cell] & (1 << (2 * axis)) != 0
    }

    /// Whether `cell` has a neighbour on the `+axis` side.
    #[inline]
    pub fn has_upper(&self, cell: usize, axis: usize) -> bool {
        self.faces[cell] & (1 << (2 * axis + 1)) != 0
    }

    /// Center of `cell` in physical coordinates; unused axes are 0.
    pub fn center(&self, cell: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        for (k, xk) in x.iter_mut().enumerate().take(self.dim) {
            *xk = (self.coord(cell, k) as f64 + 0.5) * self.spacing[k];
        }
        x
    }

    /// Index of the cell with the given per-axis coordinates.
    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// Grid with every axis refined by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        let n: Vec<usize> = self.cells().iter().map(|&c| c * factor).collect();
        Self::new(&n, self.lengths()).expect("refining a valid grid stays valid")
    }

    /// Whether two grids describe the same mesh.
    pub fn same_as(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.cells == other.cells && self.lengths == other.lengths
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { dim: self.dim, n: self.cells().to_vec(), l: self.lengths().to_vec() }
    }
}

impl TryFrom<GridSpec> for Grid {
    type Error = FieldError;

    fn try_from(spec: GridSpec) -> Result<Self, Self::Error> {
        if spec.n.len() != spec.dim {
            return Err(FieldError::InvalidGrid(format!(
                "dim {} but {} cell counts",
                spec.dim,
                spec.n.len()
            )));
        }
        Grid::new(&spec.n, &spec.l)
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        g.spec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_layout() {
        let g = Grid::new(&[3, 4], &[3.0, 2.0]).unwrap();
        assert_eq!(g.len(), 12);
        assert_eq!(g.stride(0), 4);
        assert_eq!(g.stride(1), 1);
        let c = g.index(&[2, 1]);
        assert_eq!(c, 9);
        assert_eq!(g.coord(c, 0), 2);
        assert_eq!(g.coord(c, 1), 1);
        assert_eq!(g.center(c), [2.5, 0.75, 0.0]);
        assert!((g.cell_volume() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_axes() {
        assert!(Grid::new(&[1], &[1.0]).is_err());
        assert!(Grid::new(&[4], &[0.0]).is_err());
        assert!(Grid::new(&[4, 4], &[1.0]).is_err());
        assert!(Grid::new(&[2, 2, 2, 2], &[1.0; 4]).is_err());
    }
}
