//! B-spline representation of curves on `[0, 1]` and kernels on `[0, 1]²`.
//!
//! Estimators are evaluated on a moderate equidistant grid (21 points by
//! default) and the resulting grid values are turned into functions by
//! B-spline interpolation. The basis uses clamped boundary knots so the
//! interpolant passes through the endpoint values.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{linspace, trapezoid_weights};

/// Default number of equidistant knots (breakpoints, endpoints included).
pub const DEFAULT_KNOTS: usize = 20;
/// Default number of equidistant evaluation grid points.
pub const DEFAULT_GRID: usize = 21;
/// Spline order (polynomial degree + 1).
pub const SPLINE_ORDER: usize = 3;

const MAX_ORDER: usize = 4;

/// Clamped B-spline basis with equidistant breakpoints on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    breakpoints: Vec<f64>,
    knots: Vec<f64>,
    order: usize,
}

/// Nonzero basis values at a point: `values[i]` belongs to basis `first + i`.
#[derive(Debug, Clone, Copy)]
pub struct BasisRow {
    pub first: usize,
    values: [f64; MAX_ORDER],
    len: usize,
}

impl BasisRow {
    pub fn values(&self) -> &[f64] {
        &self.values[..self.len]
    }

    /// Inner product with a coefficient vector.
    pub fn dot(&self, coefs: &[f64]) -> f64 {
        self.values()
            .iter()
            .zip(&coefs[self.first..])
            .map(|(b, c)| b * c)
            .sum()
    }
}

/// Builds the default-order basis with `n_knots` equidistant knots.
///
/// The basis has `n_knots + 1` elements.
pub fn make_basis(n_knots: usize) -> Result<BSplineBasis> {
    BSplineBasis::with_order(n_knots, SPLINE_ORDER)
}

impl BSplineBasis {
    pub fn with_order(n_knots: usize, order: usize) -> Result<Self> {
        if n_knots < 4 {
            return Err(Error::invalid(format!("need at least 4 knots, got {n_knots}")));
        }
        if !(2..=MAX_ORDER).contains(&order) {
            return Err(Error::invalid(format!("unsupported spline order {order}")));
        }
        let breakpoints = linspace(0.0, 1.0, n_knots);
        let degree = order - 1;
        let mut knots = Vec::with_capacity(n_knots + 2 * degree);
        knots.extend(std::iter::repeat_n(0.0, degree));
        knots.extend_from_slice(&breakpoints);
        knots.extend(std::iter::repeat_n(1.0, degree));
        Ok(BSplineBasis { breakpoints, knots, order })
    }

    /// Distinct knots (breakpoints), strictly increasing from 0 to 1.
    #[allow(clippy::misnamed_getters)]
    pub fn knots(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn degree(&self) -> usize {
        self.order - 1
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.order
    }

    fn span(&self, x: f64) -> usize {
        let p = self.degree();
        let n = self.n_basis() - 1;
        if x >= self.knots[n + 1] {
            return n;
        }
        if x <= self.knots[p] {
            return p;
        }
        // Largest i in [p, n] with knots[i] <= x.
        let (mut lo, mut hi) = (p, n + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Cox-de Boor recursion for the `order` basis functions nonzero at `x`.
    pub fn row(&self, x: f64) -> BasisRow {
        let x = x.clamp(0.0, 1.0);
        let p = self.degree();
        let i = self.span(x);
        let t = &self.knots;
        let mut n = [0.0; MAX_ORDER];
        let mut left = [0.0; MAX_ORDER];
        let mut right = [0.0; MAX_ORDER];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[i + 1 - j];
            right[j] = t[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        BasisRow { first: i - p, values: n, len: p + 1 }
    }

    /// All basis values at `x` (dense).
    pub fn eval_all(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis()];
        let row = self.row(x);
        out[row.first..row.first + row.len].copy_from_slice(row.values());
        out
    }

    /// Evaluates the spline with coefficients `coefs` at `x` by de Boor's algorithm.
    pub fn eval(&self, coefs: &[f64], x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let p = self.degree();
        let k = self.span(x);
        let t = &self.knots;
        let mut d = [0.0; MAX_ORDER];
        for (j, dj) in d.iter_mut().enumerate().take(p + 1) {
            *dj = coefs[j + k - p];
        }
        for r in 1..=p {
            for j in (r..=p).rev() {
                let lo = t[j + k - p];
                let denom = t[j + 1 + k - r] - lo;
                let alpha = if denom > 0.0 { (x - lo) / denom } else { 0.0 };
                d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
            }
        }
        d[p]
    }
}

/// A basis together with its evaluation grid and the grid-to-coefficient map.
#[derive(Debug, Clone)]
pub struct SplineSpace {
    basis: BSplineBasis,
    grid: Vec<f64>,
    weights: Vec<f64>,
    design: DMatrix<f64>,
    solver: DMatrix<f64>,
}

impl SplineSpace {
    pub fn new(n_knots: usize, grid_size: usize) -> Result<Arc<Self>> {
        Self::from_basis(make_basis(n_knots)?, grid_size)
    }

    /// 20 knots, 21 grid points.
    pub fn standard() -> Arc<Self> {
        Self::new(DEFAULT_KNOTS, DEFAULT_GRID).expect("standard spline space is well posed")
    }

    pub fn from_basis(basis: BSplineBasis, grid_size: usize) -> Result<Arc<Self>> {
        let nb = basis.n_basis();
        if grid_size < nb {
            return Err(Error::invalid(format!(
                "grid of {grid_size} points cannot determine {nb} coefficients"
            )));
        }
        let grid = linspace(0.0, 1.0, grid_size);
        let weights = trapezoid_weights(&grid);
        let design = DMatrix::from_fn(grid_size, nb, |i, k| basis.eval_all(grid[i])[k]);
        let normal = if grid_size == nb { design.clone() } else { design.transpose() * &design };
        let lu = normal.clone().lu();
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::numeric("singular B-spline interpolation system"))?;
        let cond = normal.norm() * inv.norm();
        if !cond.is_finite() || cond > 1e12 {
            return Err(Error::numeric(format!(
                "ill-conditioned B-spline interpolation system (cond ~ {cond:.2e})"
            )));
        }
        let solver = if grid_size == nb { inv } else { inv * design.transpose() };
        Ok(Arc::new(SplineSpace { basis, grid, weights, design, solver }))
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn grid_size(&self) -> usize {
        self.grid.len()
    }

    /// Trapezoid weights on the grid.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Basis values at the grid, `grid_size × n_basis`.
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// Linear map from grid values to interpolating coefficients, `n_basis × grid_size`.
    pub fn solver(&self) -> &DMatrix<f64> {
        &self.solver
    }

    /// Coefficients of the interpolant of `values`.
    pub fn coefs_of(&self, values: &[f64]) -> Vec<f64> {
        (&self.solver * DVector::from_column_slice(values)).as_slice().to_vec()
    }
}

/// A real function on `[0, 1]` held as grid values plus spline coefficients.
#[derive(Debug, Clone)]
pub struct Curve {
    space: Arc<SplineSpace>,
    values: Vec<f64>,
    coefs: Vec<f64>,
}

/// Interpolates grid values by a spline curve.
pub fn interpolate_curve(values: &[f64], space: &Arc<SplineSpace>) -> Result<Curve> {
    if values.len() != space.grid_size() {
        return Err(Error::invalid(format!(
            "expected {} grid values, got {}",
            space.grid_size(),
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite grid value"));
    }
    Ok(Curve { space: space.clone(), values: values.to_vec(), coefs: space.coefs_of(values) })
}

impl Curve {
    /// Curve with the given coefficients; grid values are obtained by evaluation.
    pub fn from_coefs(coefs: Vec<f64>, space: &Arc<SplineSpace>) -> Curve {
        let values = (space.design() * DVector::from_column_slice(&coefs)).as_slice().to_vec();
        Curve { space: space.clone(), values, coefs }
    }

    pub fn constant(c: f64, space: &Arc<SplineSpace>) -> Curve {
        Curve { space: space.clone(), values: vec![c; space.grid_size()], coefs: vec![c; space.basis.n_basis()] }
    }

    pub fn space(&self) -> &Arc<SplineSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn coefs(&self) -> &[f64] {
        &self.coefs
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.space.basis.row(x).dot(&self.coefs)
    }

    /// Trapezoid integral over the grid.
    pub fn integral(&self) -> f64 {
        self.values.iter().zip(self.space.weights()).map(|(v, w)| v * w).sum()
    }

    pub fn to_record(&self) -> CurveRecord {
        CurveRecord {
            knots: self.space.basis.knots().to_vec(),
            order: self.space.basis.order(),
            grid: self.space.grid().to_vec(),
            values: self.values.clone(),
            coefs: self.coefs.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,value")?;
        for (x, v) in self.space.grid().iter().zip(&self.values) {
            writeln!(w, "{x},{v}")?;
        }
        Ok(())
    }
}

/// A real kernel on `[0, 1]²` held as grid values plus tensor coefficients.
#[derive(Debug, Clone)]
pub struct Surface {
    space: Arc<SplineSpace>,
    values: DMatrix<f64>,
    coefs: DMatrix<f64>,
}

/// Tensor-product interpolation of a `grid × grid` matrix.
pub fn interpolate_surface(values: DMatrix<f64>, space: &Arc<SplineSpace>) -> Result<Surface> {
    let g = space.grid_size();
    if values.nrows() != g || values.ncols() != g {
        return Err(Error::invalid(format!(
            "expected {g}x{g} grid values, got {}x{}",
            values.nrows(),
            values.ncols()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite surface value"));
    }
    let coefs = &space.solver * &values * space.solver.transpose();
    Ok(Surface { space: space.clone(), values, coefs })
}

impl Surface {
    pub fn space(&self) -> &Arc<SplineSpace> {
        &self.space
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn coefs(&self) -> &DMatrix<f64> {
        &self.coefs
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let basis = &self.space.basis;
        self.eval_rows(&basis.row(x), &basis.row(y))
    }

    /// Evaluates with precomputed basis rows.
    pub fn eval_rows(&self, rx: &BasisRow, ry: &BasisRow) -> f64 {
        let mut acc = 0.0;
        for (i, bx) in rx.values().iter().enumerate() {
            let mut inner = 0.0;
            for (j, by) in ry.values().iter().enumerate() {
                inner += self.coefs[(rx.first + i, ry.first + j)] * by;
            }
            acc += bx * inner;
        }
        acc
    }

    pub fn transpose(&self) -> Surface {
        Surface {
            space: self.space.clone(),
            values: self.values.transpose(),
            coefs: self.coefs.transpose(),
        }
    }

    pub fn to_record(&self) -> SurfaceRecord {
        SurfaceRecord {
            knots: self.space.basis.knots().to_vec(),
            order: self.space.basis.order(),
            grid: self.space.grid().to_vec(),
            values: row_major(&self.values),
            coefs: row_major(&self.coefs),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,value")?;
        let grid = self.space.grid();
        for (i, x) in grid.iter().enumerate() {
            for (j, y) in grid.iter().enumerate() {
                writeln!(w, "{x},{y},{}", self.values[(i, j)])?;
            }
        }
        Ok(())
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// JSON form of a curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRecord {
    pub knots: Vec<f64>,
    pub order: usize,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub coefs: Vec<f64>,
}

/// JSON form of a surface; matrices are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceRecord {
    pub knots: Vec<f64>,
    pub order: usize,
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub coefs: Vec<Vec<f64>>,
}

impl SurfaceRecord {
    pub fn values_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.values.len();
        if self.values.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("surface values are not square"));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| self.values[i][j]))
    }
}
