//! Uniform tensor grids on boxes in one or two dimensions with zero Dirichlet data.
//!
//! Unknowns live on interior nodes only. Every cell carries a forward-difference
//! gradient stencil anchored at its lower-left corner and a corner-averaging
//! stencil; together with midpoint quadrature these define every integral in the
//! crate, so the discrete energy, its gradient and its Hessian are exact
//! derivatives of one another.

use std::path::Path;

use arrayvec::ArrayVec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_check, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub extents: Vec<f64>,
    pub interior_counts: Vec<usize>,
}

impl GridSpec {
    pub fn interval(extent: f64, interior: usize) -> Self {
        Self {
            dim: 1,
            extents: vec![extent],
            interior_counts: vec![interior],
        }
    }

    pub fn rectangle(extents: [f64; 2], interior: [usize; 2]) -> Self {
        Self {
            dim: 2,
            extents: extents.to_vec(),
            interior_counts: interior.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 1 && self.dim != 2 {
            return Err(Error::Config(format!(
                "dim must be 1 or 2, got {}",
                self.dim
            )));
        }
        if self.extents.len() != self.dim || self.interior_counts.len() != self.dim {
            return Err(Error::Config(format!(
                "expected {} extents and interior counts, got {} and {}",
                self.dim,
                self.extents.len(),
                self.interior_counts.len()
            )));
        }
        for (axis, (&e, &n)) in self.extents.iter().zip(&self.interior_counts).enumerate() {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::Config(format!(
                    "extent on axis {axis} must be positive, got {e}"
                )));
            }
            if n == 0 {
                return Err(Error::Config(format!(
                    "interior count on axis {axis} must be at least 1"
                )));
            }
        }
        Ok(())
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.extents
            .iter()
            .zip(&self.interior_counts)
            .map(|(&e, &n)| e / (n as f64 + 1.0))
            .collect()
    }
}

/// One nonzero coefficient of a linear stencil acting on interior values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub dof: usize,
    pub coef: f64,
}

#[derive(Debug, Clone)]
pub struct Cell {
    /// Gradient stencil per axis; only the first `dim` entries are used.
    pub grad: [ArrayVec<Tap, 2>; 2],
    /// Cell average of the field from its corner values.
    pub avg: ArrayVec<Tap, 4>,
    pub center: [f64; 2],
}

impl Cell {
    #[inline]
    pub fn gradient(&self, dim: usize, u: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (axis, gk) in g.iter_mut().enumerate().take(dim) {
            *gk = self.grad[axis].iter().map(|t| t.coef * u[t.dof]).sum();
        }
        g
    }

    #[inline]
    pub fn average(&self, u: &[f64]) -> f64 {
        self.avg.iter().map(|t| t.coef * u[t.dof]).sum()
    }
}

/// Per-cell gradient vectors of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGradients {
    pub dim: usize,
    pub values: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct Grid {
    spec: GridSpec,
    spacing: Vec<f64>,
    cells: Vec<Cell>,
    cell_volume: f64,
    n_dofs: usize,
    bandwidth: usize,
    stiffness: BandedCholesky,
}

pub fn build_grid(spec: GridSpec) -> Result<Grid> {
    Grid::new(spec)
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let spacing = spec.spacing();
        let cells = match spec.dim {
            1 => cells_1d(spec.interior_counts[0], spacing[0]),
            _ => cells_2d(&spec.interior_counts, &spacing),
        };
        let n_dofs = spec.interior_counts.iter().product();
        let cell_volume = spacing.iter().product();
        let mut bandwidth = 0;
        for cell in &cells {
            let dofs: Vec<usize> = cell
                .grad
                .iter()
                .flatten()
                .chain(&cell.avg)
                .map(|t| t.dof)
                .collect();
            for &a in &dofs {
                for &b in &dofs {
                    bandwidth = bandwidth.max(a.abs_diff(b));
                }
            }
        }
        let mut grid = Self {
            spec,
            spacing,
            cells,
            cell_volume,
            n_dofs,
            bandwidth,
            stiffness: BandedCholesky::empty(),
        };
        let k = grid.stiffness_matrix();
        grid.stiffness = BandedCholesky::factor(&k, grid.bandwidth)?;
        Ok(grid)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    /// Largest |i - j| coupled by any cell stencil.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn measure(&self) -> f64 {
        self.spec.extents.iter().product()
    }

    pub fn diameter(&self) -> f64 {
        self.spec.extents.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Coordinates of interior node `dof`.
    pub fn node_coords(&self, dof: usize) -> Vec<f64> {
        match self.spec.dim {
            1 => vec![(dof as f64 + 1.0) * self.spacing[0]],
            _ => {
                let nx = self.spec.interior_counts[0];
                let (i, j) = (dof % nx, dof / nx);
                vec![
                    (i as f64 + 1.0) * self.spacing[0],
                    (j as f64 + 1.0) * self.spacing[1],
                ]
            }
        }
    }

    pub fn zeros(&self) -> DVector<f64> {
        DVector::zeros(self.n_dofs)
    }

    /// Nodal interpolant of `f` on the interior nodes.
    pub fn interpolate(&self, f: impl Fn(&[f64]) -> f64) -> DVector<f64> {
        DVector::from_iterator(
            self.n_dofs,
            (0..self.n_dofs).map(|d| f(&self.node_coords(d))),
        )
    }

    /// Interpolant of the Dirichlet Laplacian eigenfunction with the given
    /// per-axis wave numbers.
    pub fn sine_mode(&self, modes: &[usize]) -> DVector<f64> {
        let extents = self.spec.extents.clone();
        self.interpolate(|x| {
            x.iter()
                .zip(modes)
                .zip(&extents)
                .map(|((xi, &k), l)| (k as f64 * std::f64::consts::PI * xi / l).sin())
                .product()
        })
    }

    pub fn check_field(&self, u: &DVector<f64>) -> Result<()> {
        shape_check(self.n_dofs, u.len())
    }

    pub fn gradient_field(&self, u: &DVector<f64>) -> Result<CellGradients> {
        self.check_field(u)?;
        let dim = self.dim();
        let s = u.as_slice();
        Ok(CellGradients {
            dim,
            values: self.cells.iter().map(|c| c.gradient(dim, s)).collect(),
        })
    }

    /// Midpoint quadrature of one value per cell.
    pub fn integrate(&self, cell_values: &[f64]) -> Result<f64> {
        shape_check(self.cells.len(), cell_values.len())?;
        Ok(cell_values.iter().sum::<f64>() * self.cell_volume)
    }

    /// Stiffness matrix of -Δ, i.e. the Gram matrix of the H¹₀ product on the
    /// discrete space.
    pub fn stiffness_matrix(&self) -> DMatrix<f64> {
        let n = self.n_dofs;
        let mut k = DMatrix::zeros(n, n);
        let dim = self.dim();
        for cell in &self.cells {
            for stencil in cell.grad.iter().take(dim) {
                for a in stencil {
                    for b in stencil {
                        k[(a.dof, b.dof)] += self.cell_volume * a.coef * b.coef;
                    }
                }
            }
        }
        k
    }

    /// Mass matrix of the cell-average reconstruction weighted by one value per cell.
    pub fn weighted_mass(&self, weights: &[f64]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.n_dofs, self.n_dofs);
        self.add_weighted_mass(&mut m, weights)?;
        Ok(m)
    }

    /// Adds the weighted mass matrix to `m` in place.
    pub fn add_weighted_mass(&self, m: &mut DMatrix<f64>, weights: &[f64]) -> Result<()> {
        shape_check(self.cells.len(), weights.len())?;
        shape_check(self.n_dofs, m.nrows())?;
        shape_check(self.n_dofs, m.ncols())?;
        for (cell, &w) in self.cells.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let s = self.cell_volume * w;
            for a in &cell.avg {
                for b in &cell.avg {
                    m[(a.dof, b.dof)] += s * a.coef * b.coef;
                }
            }
        }
        Ok(())
    }

    /// Stiffness (discrete H¹₀) norm.
    pub fn stiffness_norm(&self, u: &DVector<f64>) -> f64 {
        let dim = self.dim();
        let s = u.as_slice();
        let sq: f64 = self
            .cells
            .iter()
            .map(|c| {
                let g = c.gradient(dim, s);
                g[0] * g[0] + g[1] * g[1]
            })
            .sum();
        (sq * self.cell_volume).sqrt()
    }

    /// K u without assembling K.
    pub fn stiffness_apply(&self, u: &DVector<f64>) -> DVector<f64> {
        let dim = self.dim();
        let s = u.as_slice();
        let mut out = DVector::zeros(self.n_dofs);
        for cell in &self.cells {
            let g = cell.gradient(dim, s);
            for (stencil, gk) in cell.grad.iter().zip(g).take(dim) {
                for t in stencil {
                    out[t.dof] += self.cell_volume * t.coef * gk;
                }
            }
        }
        out
    }

    pub fn stiffness_distance(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        self.stiffness_norm(&(u - v))
    }

    /// Solves K x = r with the stiffness matrix (the Riesz map of the H¹₀ product).
    pub fn stiffness_solve(&self, r: &DVector<f64>) -> DVector<f64> {
        self.stiffness.solve(r)
    }

    /// Dual norm sqrt(rᵀ K⁻¹ r) of a covector.
    pub fn dual_norm(&self, r: &DVector<f64>) -> f64 {
        r.dot(&self.stiffness_solve(r)).max(0.0).sqrt()
    }

    /// Gram matrix of the weighted scalar product at `base`:
    /// ∫(1+|∇ū|²)^{p-1}⟨∇v,∇w⟩ + 2(p-1)∫(1+|∇ū|²)^{p-2}⟨∇ū,∇v⟩⟨∇ū,∇w⟩.
    pub fn gram_matrix(&self, base: &DVector<f64>, p: f64) -> Result<GramMatrix> {
        self.check_field(base)?;
        check_exponent(p, self.dim())?;
        let n = self.n_dofs;
        let dim = self.dim();
        let s = base.as_slice();
        let mut b = DMatrix::zeros(n, n);
        for cell in &self.cells {
            let g = cell.gradient(dim, s);
            let q = 1.0 + g[0] * g[0] + g[1] * g[1];
            let w1 = pow_real(q, p - 1.0) * self.cell_volume;
            let w2 = 2.0 * (p - 1.0) * pow_real(q, p - 2.0) * self.cell_volume;
            for stencil in cell.grad.iter().take(dim) {
                for a in stencil {
                    for t in stencil {
                        b[(a.dof, t.dof)] += w1 * a.coef * t.coef;
                    }
                }
            }
            if w2 != 0.0 {
                // ⟨∇ū, ∇e_j⟩ for every dof j touched by this cell
                let mut proj: ArrayVec<(usize, f64), 4> = ArrayVec::new();
                for (axis, stencil) in cell.grad.iter().enumerate().take(dim) {
                    for t in stencil {
                        match proj.iter_mut().find(|(d, _)| *d == t.dof) {
                            Some(entry) => entry.1 += g[axis] * t.coef,
                            None => proj.push((t.dof, g[axis] * t.coef)),
                        }
                    }
                }
                for &(i, ci) in &proj {
                    for &(j, cj) in &proj {
                        b[(i, j)] += w2 * ci * cj;
                    }
                }
            }
        }
        Ok(GramMatrix {
            matrix: b,
            base: base.clone(),
        })
    }

    pub fn field_document(&self, u: &DVector<f64>) -> Result<FieldDocument> {
        self.check_field(u)?;
        Ok(FieldDocument {
            spec: self.spec.clone(),
            values: u.iter().copied().collect(),
        })
    }

    /// Writes `(coordinates..., value)` rows for every interior node.
    pub fn write_field_csv(&self, u: &DVector<f64>, path: &Path) -> Result<()> {
        self.check_field(u)?;
        let mut w = csv::Writer::from_path(path)?;
        let header: &[&str] = if self.dim() == 1 {
            &["x", "value"]
        } else {
            &["x", "y", "value"]
        };
        w.write_record(header)?;
        for (dof, v) in u.iter().enumerate() {
            let mut row: Vec<String> = self
                .node_coords(dof)
                .iter()
                .map(|c| format!("{c:e}"))
                .collect();
            row.push(format!("{v:e}"));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Symmetric positive-definite Gram matrix of the weighted product at a base point.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub matrix: DMatrix<f64>,
    pub base: DVector<f64>,
}

impl GramMatrix {
    pub fn norm_squared(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.matrix * v))
    }
}

/// JSON form of a field: `{spec, values}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDocument {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl FieldDocument {
    pub fn into_field(self) -> Result<(Grid, DVector<f64>)> {
        let grid = Grid::new(self.spec)?;
        let u = DVector::from_vec(self.values);
        grid.check_field(&u)?;
        Ok((grid, u))
    }
}

pub(crate) fn check_exponent(p: f64, dim: usize) -> Result<()> {
    if !(p.is_finite() && p > dim as f64 / 2.0) {
        return Err(Error::Config(format!(
            "exponent p = {p} must exceed dim/2 = {}",
            dim as f64 / 2.0
        )));
    }
    Ok(())
}

/// `base^e`, using integer powers when `e` is integral.
#[inline]
pub(crate) fn pow_real(base: f64, e: f64) -> f64 {
    if e == e.trunc() && e.abs() < 64.0 {
        base.powi(e as i32)
    } else {
        base.powf(e)
    }
}

fn cells_1d(n: usize, h: f64) -> Vec<Cell> {
    let interior = |full: usize| (1..=n).contains(&full).then(|| full - 1);
    (0..=n)
        .map(|c| {
            let mut gx = ArrayVec::new();
            let mut avg = ArrayVec::new();
            if let Some(d) = interior(c) {
                gx.push(Tap {
                    dof: d,
                    coef: -1.0 / h,
                });
                avg.push(Tap { dof: d, coef: 0.5 });
            }
            if let Some(d) = interior(c + 1) {
                gx.push(Tap {
                    dof: d,
                    coef: 1.0 / h,
                });
                avg.push(Tap { dof: d, coef: 0.5 });
            }
            Cell {
                grad: [gx, ArrayVec::new()],
                avg,
                center: [(c as f64 + 0.5) * h, 0.0],
            }
        })
        .collect()
}

fn cells_2d(counts: &[usize], h: &[f64]) -> Vec<Cell> {
    let (nx, ny) = (counts[0], counts[1]);
    let interior = |i: usize, j: usize| {
        ((1..=nx).contains(&i) && (1..=ny).contains(&j)).then(|| (j - 1) * nx + (i - 1))
    };
    let mut cells = Vec::with_capacity((nx + 1) * (ny + 1));
    for cy in 0..=ny {
        for cx in 0..=nx {
            let mut gx = ArrayVec::new();
            let mut gy = ArrayVec::new();
            let mut avg = ArrayVec::new();
            if let Some(d) = interior(cx, cy) {
                gx.push(Tap {
                    dof: d,
                    coef: -1.0 / h[0],
                });
                gy.push(Tap {
                    dof: d,
                    coef: -1.0 / h[1],
                });
            }
            if let Some(d) = interior(cx + 1, cy) {
                gx.push(Tap {
                    dof: d,
                    coef: 1.0 / h[0],
                });
            }
            if let Some(d) = interior(cx, cy + 1) {
                gy.push(Tap {
                    dof: d,
                    coef: 1.0 / h[1],
                });
            }
            for (i, j) in [(cx, cy), (cx + 1, cy), (cx, cy + 1), (cx + 1, cy + 1)] {
                if let Some(d) = interior(i, j) {
                    avg.push(Tap { dof: d, coef: 0.25 });
                }
            }
            cells.push(Cell {
                grad: [gx, gy],
                avg,
                center: [(cx as f64 + 0.5) * h[0], (cy as f64 + 0.5) * h[1]],
            });
        }
    }
    cells
}

/// Cholesky factor of a symmetric banded matrix, stored by rows of the lower band.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // l[i * (bw + 1) + (i - j)] = L[i][j] for i - bw <= j <= i
    l: Vec<f64>,
}

impl BandedCholesky {
    fn empty() -> Self {
        Self {
            n: 0,
            bw: 0,
            l: Vec::new(),
        }
    }

    pub fn factor(a: &DMatrix<f64>, bw: usize) -> Result<Self> {
        let n = a.nrows();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let mut s = a[(i, j)];
                for k in i.saturating_sub(bw)..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite(format!("pivot {i} is {s:e}")));
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut x = b.clone();
        for i in 0..n {
            let mut s = x[i];
            for j in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (i - j)] * x[j];
            }
            x[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n.min(i + bw + 1) {
                s -= self.l[k * w + (k - i)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
        x
    }
}

/// Solves A x = b for a general matrix whose nonzeros lie within `bw` of the
/// diagonal, by Gaussian elimination with partial pivoting restricted to the
/// band (row swaps widen the upper band to 2·bw). Returns `None` when a pivot
/// is negligible relative to the largest entry.
pub fn banded_lu_solve(mut a: DMatrix<f64>, bw: usize, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return None;
    }
    let scale = a.amax();
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    let mut x = b.clone();
    let mut mult_buf = vec![0.0; bw];
    for k in 0..n {
        let last_row = (k + bw).min(n - 1);
        let last_col = (k + 2 * bw).min(n - 1);
        let pivot = (k..=last_row)
            .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
            .unwrap();
        if a[(pivot, k)].abs() <= 1e-14 * scale {
            return None;
        }
        if pivot != k {
            for j in k..=last_col {
                a.swap((pivot, j), (k, j));
            }
            x.swap_rows(pivot, k);
        }
        let d = a[(k, k)];
        let mult = &mut mult_buf[..last_row - k];
        for (r, m) in mult.iter_mut().enumerate() {
            *m = a[(k + 1 + r, k)] / d;
            x[k + 1 + r] -= *m * x[k];
        }
        let data = a.as_mut_slice();
        for j in k + 1..=last_col {
            // column-major storage: column j is contiguous
            let col = &mut data[j * n..(j + 1) * n];
            let akj = col[k];
            if akj != 0.0 {
                for (r, m) in mult.iter().enumerate() {
                    col[k + 1 + r] -= m * akj;
                }
            }
        }
    }
    for k in (0..n).rev() {
        let last_col = (k + 2 * bw).min(n - 1);
        let mut s = x[k];
        for j in k + 1..=last_col {
            s -= a[(k, j)] * x[j];
        }
        x[k] = s / a[(k, k)];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Grid, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(grid.n_dofs(), |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn uniform_interval() {
        let g = build_grid(GridSpec::interval(1.0, 4)).unwrap();
        assert!((g.spacing()[0] - 0.2).abs() < 1e-15);
        assert_eq!(g.cell_count(), 5);
        assert_eq!(g.n_dofs(), 4);
    }

    #[test]
    fn unit_square_cells() {
        let g = build_grid(GridSpec::rectangle([1.0, 1.0], [3, 3])).unwrap();
        assert_eq!(g.cell_count(), 16);
        assert_eq!(g.n_dofs(), 9);
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(matches!(
            build_grid(GridSpec::interval(1.0, 0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_grid(GridSpec::interval(-1.0, 3)),
            Err(Error::Config(_))
        ));
        let bad = GridSpec {
            dim: 3,
            extents: vec![1.0; 3],
            interior_counts: vec![2; 3],
        };
        assert!(matches!(build_grid(bad), Err(Error::Config(_))));
    }

    #[test]
    fn zero_field_has_zero_gradients() {
        let g = build_grid(GridSpec::rectangle([1.0, 2.0], [4, 3])).unwrap();
        let cg = g.gradient_field(&g.zeros()).unwrap();
        assert!(cg.values.iter().all(|v| v == &[0.0, 0.0]));
    }

    #[test]
    fn single_node_hat() {
        let g = build_grid(GridSpec::interval(1.0, 1)).unwrap();
        let cg = g.gradient_field(&DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(cg.values.len(), 2);
        assert!((cg.values[0][0] - 2.0).abs() < 1e-15);
        assert!((cg.values[1][0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_is_linear() {
        for spec in [
            GridSpec::interval(1.0, 9),
            GridSpec::rectangle([1.0, 1.5], [5, 4]),
        ] {
            let g = build_grid(spec).unwrap();
            let u = random_field(&g, 1);
            let v = random_field(&g, 2);
            let (a, b) = (-1.7, 0.4);
            let lhs = g.gradient_field(&(&u * a + &v * b)).unwrap();
            let gu = g.gradient_field(&u).unwrap();
            let gv = g.gradient_field(&v).unwrap();
            for ((l, x), y) in lhs.values.iter().zip(&gu.values).zip(&gv.values) {
                for k in 0..2 {
                    assert!((l[k] - (a * x[k] + b * y[k])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let g = build_grid(GridSpec::interval(1.0, 4)).unwrap();
        assert!(matches!(
            g.gradient_field(&DVector::zeros(3)),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(g.integrate(&[1.0; 4]), Err(Error::Shape { .. })));
    }

    #[test]
    fn constant_integrals() {
        let g = build_grid(GridSpec::interval(1.0, 7)).unwrap();
        assert!((g.integrate(&vec![1.0; g.cell_count()]).unwrap() - 1.0).abs() < 1e-14);
        let g = build_grid(GridSpec::rectangle([1.0, 1.0], [6, 4])).unwrap();
        assert!((g.integrate(&vec![2.5; g.cell_count()]).unwrap() - 2.5).abs() < 1e-13);
    }

    fn sin_squared_error(n: usize) -> f64 {
        let g = build_grid(GridSpec::interval(1.0, n)).unwrap();
        let u = g.sine_mode(&[1]);
        let vals: Vec<f64> = g
            .cells()
            .iter()
            .map(|c| c.average(u.as_slice()).powi(2))
            .collect();
        (g.integrate(&vals).unwrap() - 0.5).abs()
    }

    #[test]
    fn quadrature_converges_at_second_order() {
        // ∫₀¹ sin²(πx) dx = 1/2
        let errs: Vec<f64> = [15, 31, 63].iter().map(|&n| sin_squared_error(n)).collect();
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!(slope > 1.9, "observed order {slope}, errors {errs:?}");
        }
    }

    #[test]
    fn gram_at_zero_is_stiffness() {
        for spec in [
            GridSpec::interval(1.0, 8),
            GridSpec::rectangle([1.0, 1.0], [4, 5]),
        ] {
            let g = build_grid(spec).unwrap();
            let k = g.stiffness_matrix();
            for p in [1.25, 1.5, 2.0, 3.0] {
                let b = g.gram_matrix(&g.zeros(), p).unwrap();
                assert_eq!(b.matrix, k);
            }
        }
    }

    #[test]
    fn stiffness_1d_is_tridiagonal() {
        let g = build_grid(GridSpec::interval(1.0, 4)).unwrap();
        let k = g.stiffness_matrix();
        let h = 0.2;
        for i in 0..4 {
            assert!((k[(i, i)] - 2.0 / h).abs() < 1e-12);
            if i + 1 < 4 {
                assert!((k[(i, i + 1)] + 1.0 / h).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_rejects_small_exponent() {
        let g = build_grid(GridSpec::rectangle([1.0, 1.0], [3, 3])).unwrap();
        assert!(matches!(
            g.gram_matrix(&g.zeros(), 1.0),
            Err(Error::Config(_))
        ));
        let g = build_grid(GridSpec::interval(1.0, 3)).unwrap();
        assert!(matches!(
            g.gram_matrix(&g.zeros(), 0.5),
            Err(Error::Config(_))
        ));
        assert!(g.gram_matrix(&g.zeros(), 0.6).is_ok());
    }

    #[test]
    fn gram_is_symmetric_positive_definite() {
        for (spec, p) in [
            (GridSpec::interval(1.0, 12), 2.0),
            (GridSpec::interval(2.0, 10), 0.75),
            (GridSpec::rectangle([1.0, 1.0], [5, 6]), 2.5),
        ] {
            let g = build_grid(spec).unwrap();
            let u = random_field(&g, 7) * 3.0;
            let b = g.gram_matrix(&u, p).unwrap().matrix;
            assert!((&b - b.transpose()).abs().max() < 1e-14 * b.abs().max());
            let min = b.clone().symmetric_eigen().eigenvalues.min();
            assert!(min > 0.0, "min eigenvalue {min}");
        }
    }

    /// Independent oracle: evaluates the weighted product of two nodal hat
    /// functions by fine midpoint quadrature of the exact piecewise-linear
    /// interpolants, using no grid stencils.
    fn gram_entry_oracle(nodal: &[f64], h: f64, p: f64, i: usize, j: usize) -> f64 {
        let n = nodal.len();
        let full = |k: usize| {
            if k == 0 || k == n + 1 {
                0.0
            } else {
                nodal[k - 1]
            }
        };
        let hat_slope = |node: usize, cell: usize| {
            // node is interior index (0-based); cell spans full nodes [cell, cell+1]
            let full_node = node + 1;
            if cell + 1 == full_node {
                1.0 / h
            } else if cell == full_node {
                -1.0 / h
            } else {
                0.0
            }
        };
        let sub = 2000;
        let mut acc = 0.0;
        for cell in 0..=n {
            let du = (full(cell + 1) - full(cell)) / h;
            let dv = hat_slope(i, cell);
            let dw = hat_slope(j, cell);
            let dx = h / sub as f64;
            for _ in 0..sub {
                let q: f64 = 1.0 + du * du;
                acc += (q.powf(p - 1.0) * dv * dw
                    + 2.0 * (p - 1.0) * q.powf(p - 2.0) * du * dv * du * dw)
                    * dx;
            }
        }
        acc
    }

    #[test]
    fn gram_matches_quadrature_oracle() {
        let g = build_grid(GridSpec::interval(1.0, 9)).unwrap();
        let u = g.interpolate(|x| x[0] * (1.0 - x[0]));
        let p = 2.0;
        let b = g.gram_matrix(&u, p).unwrap().matrix;
        let h = g.spacing()[0];
        for i in 0..g.n_dofs() {
            for j in 0..g.n_dofs() {
                let o = gram_entry_oracle(u.as_slice(), h, p, i, j);
                assert!(
                    (b[(i, j)] - o).abs() < 1e-10,
                    "B[{i},{j}] = {} vs oracle {o}",
                    b[(i, j)]
                );
            }
        }
    }

    #[test]
    fn banded_solve_matches_dense() {
        let g = build_grid(GridSpec::rectangle([1.0, 2.0], [6, 5])).unwrap();
        let k = g.stiffness_matrix();
        let r = random_field(&g, 3);
        let x = g.stiffness_solve(&r);
        assert!((&k * &x - &r).norm() < 1e-10);
        let dense = k.clone().cholesky().unwrap().solve(&r);
        assert!((x - dense).norm() < 1e-10);
    }

    #[test]
    fn banded_lu_matches_dense_on_indefinite_band() {
        let g = build_grid(GridSpec::rectangle([1.0, 1.0], [5, 4])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = g.n_dofs();
        let bw = g.bandwidth();
        // stiffness minus a large diagonal shift: symmetric, banded, indefinite
        let mut a = g.stiffness_matrix();
        for i in 0..n {
            a[(i, i)] -= 30.0 + rng.gen_range(0.0..5.0);
        }
        a[(3, 3 + bw)] += 0.7;
        let b = random_field(&g, 2);
        let x = banded_lu_solve(a.clone(), bw, &b).unwrap();
        let dense = a.clone().lu().solve(&b).unwrap();
        assert!((&x - dense).amax() < 1e-10 * x.amax().max(1.0));
        assert!(banded_lu_solve(DMatrix::zeros(n, n), bw, &b).is_none());
    }

    #[test]
    fn stiffness_norm_matches_matrix() {
        let g = build_grid(GridSpec::rectangle([1.0, 1.0], [4, 4])).unwrap();
        let u = random_field(&g, 11);
        let k = g.stiffness_matrix();
        assert!((g.stiffness_norm(&u).powi(2) - u.dot(&(&k * &u))).abs() < 1e-10);
        assert!((g.stiffness_apply(&u) - &k * &u).amax() < 1e-10);
    }

    #[test]
    fn field_document_roundtrip_and_csv() {
        let g = build_grid(GridSpec::rectangle([1.0, 1.0], [2, 3])).unwrap();
        let u = random_field(&g, 5);
        let doc = g.field_document(&u).unwrap();
        let json = serde_json::to_string(&doc).unwrap();
        let back: FieldDocument = serde_json::from_str(&json).unwrap();
        let (g2, u2) = back.into_field().unwrap();
        assert_eq!(g2.spec(), g.spec());
        assert_eq!(u2, u);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        g.write_field_csv(&u, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,value");
        assert_eq!(lines.len(), 1 + g.n_dofs());
    }
}
