//! Bartlett-weighted local-linear estimation of spectral density kernels.
//!
//! Kernel-weighted sums of raw covariances are accumulated once per lag
//! (they do not depend on the frequency). Pooling the design sums over lags
//! reduces the estimator at every node to a fixed set of lag coefficients
//! `c_h(x, y)`, so that
//!
//! ```text
//! f̂_ω(x, y) = (1 / 2π) Σ_{|h| < L} W_h e^{-ihω} c_h(x, y),
//! ```
//!
//! which makes evaluation on dense frequency grids cheap and makes the
//! inversion back to lag `h` return exactly `W_h c_h`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix};

use crate::basis::{interpolate_surface, BasisRow, SplineSpace, Surface};
use crate::dataset::SparseFtsDataset;
use crate::error::{Error, Result};
use crate::par;
use crate::quadrature::trapezoid_weights;
use crate::smoothing::{
    check_bandwidth, lag_pair_sums, MeanEstimate, PairSums, Residuals, Window, S00, S02, S20,
};

pub type C64 = Complex<f64>;

/// Relative threshold on the Cramer denominator.
const DENOMINATOR_TOL: f64 = 1e-12;
/// Largest tolerated imaginary part of an inverted autocovariance, relative to its scale.
const IMAG_RESIDUE_TOL: f64 = 1e-6;

/// Bartlett weight `W_h = max(0, 1 - |h|/L)`.
#[inline]
pub fn bartlett_weight(span: usize, h: isize) -> f64 {
    let a = h.unsigned_abs();
    if a >= span {
        0.0
    } else {
        1.0 - a as f64 / span as f64
    }
}

/// Weights `W_h` for `h = -L..=L`.
pub fn bartlett_weights(span: usize) -> Result<Vec<f64>> {
    if span < 1 {
        return Err(Error::invalid("Bartlett span L must be at least 1"));
    }
    let l = span as isize;
    Ok((-l..=l).map(|h| bartlett_weight(span, h)).collect())
}

/// `2·max(256, 8L) + 1` equidistant frequencies on `[-π, π]`, exactly
/// antisymmetric about the centre (which is 0).
pub fn frequency_grid(span: usize) -> Vec<f64> {
    symmetric_grid(256usize.max(8 * span))
}

fn symmetric_grid(half: usize) -> Vec<f64> {
    let h = half as f64;
    let mut g: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let k = i as f64 - h;
            PI * k / h
        })
        .collect();
    g[0] = -PI;
    g[2 * half] = PI;
    g
}

/// Nodes at which lag sums are accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeSet {
    /// All `G × G` grid nodes.
    Full,
    /// Only the diagonal nodes `(x_i, x_i)`, enough for the trace.
    Diagonal,
}

/// Normalized, kernel-weighted lag sums `S_pq^{(h)}` and `Q_pq^{(h)}` for
/// `0 <= h < L`; negative lags follow by transposition.
#[derive(Debug, Clone)]
pub struct LagPrecomputation {
    space: Arc<SplineSpace>,
    span: usize,
    bandwidth: f64,
    nodes: NodeSet,
    /// `sums[h][node]`, scaled by `1 / (𝒩_h B_R²)`.
    sums: Vec<Vec<PairSums>>,
    normalizers: Vec<f64>,
}

/// Pair-count normalizations `𝒩_h` for `h = 0..L`.
pub fn lag_normalizers(data: &SparseFtsDataset, span: usize) -> Vec<f64> {
    let t = data.horizon() as f64;
    let nbar = data.mean_count();
    (0..span)
        .map(|h| if h == 0 { t * (data.mean_squared_count() - nbar) } else { (t - h as f64) * nbar * nbar })
        .collect()
}

impl LagPrecomputation {
    pub fn span(&self) -> usize {
        self.span
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn nodes(&self) -> NodeSet {
        self.nodes
    }

    pub fn space(&self) -> &Arc<SplineSpace> {
        &self.space
    }

    pub fn normalizers(&self) -> &[f64] {
        &self.normalizers
    }

    fn node_index(&self, a: usize, b: usize) -> Option<usize> {
        let g = self.space.grid_size();
        match self.nodes {
            NodeSet::Full => Some(a * g + b),
            NodeSet::Diagonal => (a == b).then_some(a),
        }
    }

    /// Normalized sums at lag `h` (possibly negative) and node `(a, b)`.
    pub fn sums(&self, h: isize, a: usize, b: usize) -> Option<PairSums> {
        let k = h.unsigned_abs();
        if k >= self.span {
            return Some(PairSums::default());
        }
        if h >= 0 {
            self.node_index(a, b).map(|i| self.sums[k][i])
        } else {
            self.node_index(b, a).map(|i| self.sums[k][i].transposed())
        }
    }

    /// Grid matrix of `S_pq^{(h)}` with `(p, q)` given by the moment index
    /// `0..6` in the order `00, 10, 01, 11, 20, 02` (full node set only).
    pub fn s_matrix(&self, h: isize, moment: usize) -> Option<DMatrix<f64>> {
        self.grid_matrix(|s| s.s[moment], h)
    }

    /// Grid matrix of `Q_pq^{(h)}` for `(p, q)` in `00, 10, 01`.
    pub fn q_matrix(&self, h: isize, moment: usize) -> Option<DMatrix<f64>> {
        self.grid_matrix(|s| s.q[moment], h)
    }

    fn grid_matrix(&self, f: impl Fn(&PairSums) -> f64, h: isize) -> Option<DMatrix<f64>> {
        if self.nodes != NodeSet::Full {
            return None;
        }
        let g = self.space.grid_size();
        let mut m = DMatrix::zeros(g, g);
        for a in 0..g {
            for b in 0..g {
                m[(a, b)] = f(&self.sums(h, a, b)?);
            }
        }
        Some(m)
    }

    /// Design sums pooled over lags, `(1/L) Σ_h W_h S^{(h)}`.
    fn pooled(&self, a: usize, b: usize) -> PairSums {
        let mut p = PairSums::default();
        let l = self.span as isize;
        for h in 0..l {
            let w = bartlett_weight(self.span, h);
            let mut add = |s: PairSums| {
                for (acc, v) in p.s.iter_mut().zip(s.s) {
                    *acc += w * v;
                }
            };
            if h == 0 {
                add(self.sums(0, a, b).unwrap_or_default());
            } else {
                let pos = self.sums(h, a, b).unwrap_or_default();
                let neg = self.sums(-h, a, b).unwrap_or_default();
                let mut both = PairSums::default();
                for i in 0..6 {
                    both.s[i] = pos.s[i] + neg.s[i];
                }
                add(both);
            }
        }
        p.scale(1.0 / self.span as f64);
        p
    }

    /// Lag coefficients `c_h` for `h = -(L-1)..=L-1` at node `(a, b)`.
    fn lag_coefficients(&self, a: usize, b: usize) -> Result<Vec<f64>> {
        let grid = self.space.grid();
        let pooled = self.pooled(a, b);
        let (a1, a2, a3, den) = pooled.cofactors();
        let scale = (pooled.s[S00] * pooled.s[S20] * pooled.s[S02]).abs();
        if !(den.abs() > DENOMINATOR_TOL * scale) || scale == 0.0 {
            return Err(Error::numeric(format!(
                "spectral smoother denominator vanishes at node ({:.4}, {:.4}); increase b_r",
                grid[a], grid[b]
            )));
        }
        let l = self.span as isize;
        Ok((-(l - 1)..l)
            .map(|h| {
                let q = self.sums(h, a, b).unwrap_or_default().q;
                (a1 * q[0] - a2 * q[1] - a3 * q[2]) / den
            })
            .collect())
    }
}

fn check_span(data: &SparseFtsDataset, span: usize) -> Result<()> {
    if span < 1 {
        return Err(Error::invalid("Bartlett span L must be at least 1"));
    }
    if span > data.horizon() {
        return Err(Error::invalid(format!("Bartlett span {span} exceeds the horizon {}", data.horizon())));
    }
    Ok(())
}

/// Accumulates lag sums on every grid node.
pub fn precompute_lag_sums(
    data: &SparseFtsDataset,
    mean: &MeanEstimate,
    span: usize,
    b_r: f64,
    space: &Arc<SplineSpace>,
) -> Result<LagPrecomputation> {
    precompute(data, mean, span, b_r, space, NodeSet::Full)
}

/// Accumulates lag sums on the diagonal nodes only (trace computations with large `L`).
pub fn precompute_diagonal_lag_sums(
    data: &SparseFtsDataset,
    mean: &MeanEstimate,
    span: usize,
    b_r: f64,
    space: &Arc<SplineSpace>,
) -> Result<LagPrecomputation> {
    precompute(data, mean, span, b_r, space, NodeSet::Diagonal)
}

fn precompute(
    data: &SparseFtsDataset,
    mean: &MeanEstimate,
    span: usize,
    b_r: f64,
    space: &Arc<SplineSpace>,
    nodes: NodeSet,
) -> Result<LagPrecomputation> {
    check_span(data, span)?;
    check_bandwidth("b_r", b_r)?;
    let res = Residuals::new(data, mean);
    let normalizers = lag_normalizers(data, span);
    let g = space.grid_size();
    let grid = space.grid();
    let node_pairs: Vec<(usize, usize)> = match nodes {
        NodeSet::Full => (0..g).flat_map(|a| (0..g).map(move |b| (a, b))).collect(),
        NodeSet::Diagonal => (0..g).map(|i| (i, i)).collect(),
    };
    let n_nodes = node_pairs.len();
    // Lag 0 on the full node set is computed on a <= b and mirrored.
    let flat = par::map_range(span * n_nodes, |task| {
        let (h, n) = (task / n_nodes, task % n_nodes);
        let (a, b) = node_pairs[n];
        if h == 0 && nodes == NodeSet::Full && a > b {
            return None;
        }
        let mut win = Window::default();
        let mut s = lag_pair_sums(&res, grid[a], grid[b], h, b_r, &mut win);
        let nh = normalizers[h];
        s.scale(if nh > 0.0 { 1.0 / (nh * b_r * b_r) } else { 0.0 });
        Some(s)
    });
    let mut sums: Vec<Vec<PairSums>> = flat
        .chunks(n_nodes)
        .map(|c| c.iter().map(|s| s.unwrap_or_default()).collect())
        .collect();
    if nodes == NodeSet::Full {
        for a in 0..g {
            for b in 0..a {
                sums[0][a * g + b] = sums[0][b * g + a].transposed();
            }
        }
    }
    Ok(LagPrecomputation { space: space.clone(), span, bandwidth: b_r, nodes, sums, normalizers })
}

/// Spectral density kernels on a symmetric frequency grid.
#[derive(Debug, Clone)]
pub struct SpectralDensityEstimate {
    space: Arc<SplineSpace>,
    freqs: Vec<f64>,
    kernels: Vec<DMatrix<C64>>,
    span: usize,
    bandwidth: f64,
    normalizers: Vec<f64>,
    truncated: bool,
}

impl SpectralDensityEstimate {
    /// Builds an estimate from explicit kernels on a symmetric grid.
    pub fn from_kernels(
        space: &Arc<SplineSpace>,
        freqs: Vec<f64>,
        kernels: Vec<DMatrix<C64>>,
        span: usize,
        bandwidth: f64,
    ) -> Result<Self> {
        check_symmetric(&freqs)?;
        let g = space.grid_size();
        if kernels.len() != freqs.len() || kernels.iter().any(|k| k.shape() != (g, g)) {
            return Err(Error::invalid("one G×G kernel per frequency is required"));
        }
        Ok(SpectralDensityEstimate {
            space: space.clone(),
            freqs,
            kernels,
            span,
            bandwidth,
            normalizers: Vec::new(),
            truncated: false,
        })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn kernels(&self) -> &[DMatrix<C64>] {
        &self.kernels
    }

    pub fn kernel(&self, i: usize) -> &DMatrix<C64> {
        &self.kernels[i]
    }

    pub fn span(&self) -> usize {
        self.span
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn normalizers(&self) -> &[f64] {
        &self.normalizers
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn space(&self) -> &Arc<SplineSpace> {
        &self.space
    }

    /// Writes `omega,xi,yi,re,im` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "omega,xi,yi,re,im")?;
        let grid = self.space.grid();
        for (omega, k) in self.freqs.iter().zip(&self.kernels) {
            for (a, xa) in grid.iter().enumerate() {
                for (b, xb) in grid.iter().enumerate() {
                    let v = k[(a, b)];
                    writeln!(w, "{omega},{xa},{xb},{},{}", v.re, v.im)?;
                }
            }
        }
        Ok(())
    }
}

fn check_symmetric(freqs: &[f64]) -> Result<usize> {
    let n = freqs.len();
    if n.is_multiple_of(2) || n < 3 {
        return Err(Error::invalid("frequency grid must have an odd number (>= 3) of points"));
    }
    let m = n / 2;
    let ok = freqs[m] == 0.0
        && (1..=m).all(|k| freqs[m + k] == -freqs[m - k] && freqs[m + k] > freqs[m + k - 1])
        && freqs[n - 1] <= PI + 1e-12;
    if !ok {
        return Err(Error::invalid("frequency grid must be increasing, within [-π, π] and symmetric about 0"));
    }
    Ok(m)
}

/// Evaluates the Bartlett-smoothed spectral density on `freqs`.
pub fn estimate_spectral_density(pre: &LagPrecomputation, freqs: &[f64]) -> Result<SpectralDensityEstimate> {
    if pre.nodes != NodeSet::Full {
        return Err(Error::invalid("kernel estimates need lag sums on the full node set"));
    }
    let m = check_symmetric(freqs)?;
    let g = pre.space.grid_size();
    let l = pre.span as isize;
    let upper: Vec<(usize, usize)> = (0..g).flat_map(|a| (a..g).map(move |b| (a, b))).collect();
    let coefs = par::try_map_range(upper.len(), |n| {
        let (a, b) = upper[n];
        pre.lag_coefficients(a, b)
    })?;
    // c[(a, b)][h + L - 1]; the lower triangle follows from c_{-h}(b, a) = c_h(a, b).
    let mut table = vec![Vec::new(); g * g];
    for (&(a, b), c) in upper.iter().zip(coefs) {
        if a != b {
            table[b * g + a] = c.iter().rev().copied().collect();
        }
        table[a * g + b] = c;
    }
    let weights: Vec<f64> = (-(l - 1)..l).map(|h| bartlett_weight(pre.span, h)).collect();
    let half = par::map_range(m + 1, |k| {
        let omega = freqs[m + k];
        let phases: Vec<C64> = (-(l - 1)..l)
            .zip(&weights)
            .map(|(h, w)| C64::from_polar(*w / (2.0 * PI), -(h as f64) * omega))
            .collect();
        DMatrix::from_fn(g, g, |a, b| {
            let c = &table[a * g + b];
            let mut acc = C64::new(0.0, 0.0);
            for (p, v) in phases.iter().zip(c) {
                acc += p * *v;
            }
            if k == 0 {
                C64::new(acc.re, 0.0)
            } else {
                acc
            }
        })
    });
    Ok(SpectralDensityEstimate {
        space: pre.space.clone(),
        freqs: freqs.to_vec(),
        kernels: mirror(half, m),
        span: pre.span,
        bandwidth: pre.bandwidth,
        normalizers: pre.normalizers.clone(),
        truncated: false,
    })
}

/// Expands kernels for `ω >= 0` to the full grid by conjugation.
fn mirror(half: Vec<DMatrix<C64>>, m: usize) -> Vec<DMatrix<C64>> {
    let mut out = Vec::with_capacity(2 * m + 1);
    for k in (1..=m).rev() {
        out.push(half[k].map(|v| v.conj()));
    }
    out.extend(half);
    out
}

/// Projects each kernel onto the positive semidefinite cone in the `L²` sense.
pub fn truncate_negative_eigenvalues(est: &SpectralDensityEstimate) -> Result<SpectralDensityEstimate> {
    let m = check_symmetric(&est.freqs)?;
    let w = est.space.weights();
    let half = par::try_map_range(m + 1, |k| psd_projection(&est.kernels[m + k], w, k == 0))?;
    Ok(SpectralDensityEstimate { kernels: mirror(half, m), truncated: true, ..est.clone() })
}

/// `W^{-1/2} P₊(W^{1/2} F W^{1/2}) W^{-1/2}`, Hermitian-symmetrized.
pub fn psd_projection(f: &DMatrix<C64>, weights: &[f64], real: bool) -> Result<DMatrix<C64>> {
    let g = f.nrows();
    let sq: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut a = DMatrix::from_fn(g, g, |i, j| f[(i, j)] * (sq[i] * sq[j]));
    a = (&a + a.adjoint()) * C64::new(0.5, 0.0);
    if a.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::numeric("non-finite spectral kernel"));
    }
    let eig = a.symmetric_eigen();
    let mut lam = eig.eigenvalues.clone();
    lam.iter_mut().for_each(|l| *l = l.max(0.0));
    let u = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(g, g, |i, j| u[(i, j)] * lam[j]);
    let p = &scaled * u.adjoint();
    Ok(DMatrix::from_fn(g, g, |i, j| {
        let v = (p[(i, j)] + p[(j, i)].conj()) * 0.5 / (sq[i] * sq[j]);
        if real {
            C64::new(v.re, 0.0)
        } else {
            v
        }
    }))
}

/// Autocovariance surfaces `R̃_h`, `h = 0..n`; negative lags by transposition.
#[derive(Debug, Clone)]
pub struct AutocovSequence {
    surfaces: Vec<Surface>,
}

impl AutocovSequence {
    pub fn new(surfaces: Vec<Surface>) -> Result<Self> {
        if surfaces.is_empty() {
            return Err(Error::invalid("an autocovariance sequence needs at least lag 0"));
        }
        Ok(AutocovSequence { surfaces })
    }

    /// Number of stored lags (`0..len`).
    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn surfaces(&self) -> &[Surface] {
        &self.surfaces
    }

    pub fn space(&self) -> &Arc<SplineSpace> {
        self.surfaces[0].space()
    }

    /// `R̃_h` for any integer lag; `None` beyond the stored range.
    pub fn get(&self, h: isize) -> Option<Surface> {
        let s = self.surfaces.get(h.unsigned_abs())?;
        Some(if h >= 0 { s.clone() } else { s.transpose() })
    }

    /// `R̃_h(x, y)` from precomputed basis rows; zero beyond the stored lags.
    #[inline]
    pub fn eval_rows(&self, h: isize, rx: &BasisRow, ry: &BasisRow) -> f64 {
        match self.surfaces.get(h.unsigned_abs()) {
            Some(s) if h >= 0 => s.eval_rows(rx, ry),
            Some(s) => s.eval_rows(ry, rx),
            None => 0.0,
        }
    }

    pub fn eval(&self, h: isize, x: f64, y: f64) -> f64 {
        let basis = self.space().basis();
        self.eval_rows(h, &basis.row(x), &basis.row(y))
    }

    /// Only lag 0 kept (the static model).
    pub fn truncated_to(&self, n: usize) -> Self {
        AutocovSequence { surfaces: self.surfaces[..n.clamp(1, self.surfaces.len())].to_vec() }
    }
}

/// Trapezoid inversion `R̃_h = ∫ f̂_ω e^{ihω} dω` for `h = 0..n_lags`.
pub fn invert_to_autocov(est: &SpectralDensityEstimate, n_lags: usize) -> Result<AutocovSequence> {
    if n_lags < 1 || n_lags > est.span.max(1) {
        return Err(Error::invalid(format!(
            "number of lags {n_lags} must lie in 1..={} (the Bartlett span)",
            est.span
        )));
    }
    let w = trapezoid_weights(&est.freqs);
    let g = est.space.grid_size();
    let mats = par::try_map_range(n_lags, |h| {
        let mut acc = DMatrix::<C64>::zeros(g, g);
        for ((omega, wk), k) in est.freqs.iter().zip(&w).zip(&est.kernels) {
            let e = C64::from_polar(*wk, h as f64 * omega);
            acc.zip_apply(k, |a, v| *a += v * e);
        }
        let scale = acc.iter().fold(1.0f64, |m, v| m.max(v.re.abs()));
        let imag = acc.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
        if imag > IMAG_RESIDUE_TOL * scale {
            return Err(Error::numeric(format!(
                "imaginary residue {imag:.3e} at lag {h}: spectral kernels are not Hermitian"
            )));
        }
        Ok(acc.map(|v| v.re))
    })?;
    let surfaces = mats
        .into_iter()
        .map(|m| interpolate_surface(m, &est.space))
        .collect::<Result<Vec<_>>>()?;
    AutocovSequence::new(surfaces)
}

/// Quadrature-weighted trace of each kernel for `ω ∈ (0, π]`.
pub fn periodicity_chart(est: &SpectralDensityEstimate) -> Vec<(f64, f64)> {
    let w = est.space.weights();
    est.freqs
        .iter()
        .zip(&est.kernels)
        .filter(|(o, _)| **o > 0.0)
        .map(|(o, k)| (*o, (0..w.len()).map(|i| w[i] * k[(i, i)].re).sum()))
        .collect()
}

/// Trace spectrum `(1/2π) Σ_h W_h e^{-ihω} τ_h` for `ω ∈ (0, π]` from
/// diagonal (or full) lag sums, where `τ_h = ∫ c_h(x, x) dx`.
pub fn trace_spectrum(pre: &LagPrecomputation, freqs: &[f64]) -> Result<Vec<(f64, f64)>> {
    let g = pre.space.grid_size();
    let w = pre.space.weights();
    let diag = par::try_map_range(g, |i| pre.lag_coefficients(i, i))?;
    let l = pre.span as isize;
    let tau: Vec<f64> = (0..(2 * l - 1) as usize).map(|k| (0..g).map(|i| w[i] * diag[i][k]).sum()).collect();
    let positive: Vec<f64> = freqs.iter().copied().filter(|o| *o > 0.0).collect();
    Ok(par::map_range(positive.len(), |i| {
        let omega = positive[i];
        let v: f64 = (-(l - 1)..l)
            .zip(&tau)
            .map(|(h, t)| bartlett_weight(pre.span, h) * t * (h as f64 * omega).cos())
            .sum();
        (omega, v / (2.0 * PI))
    }))
}

pub fn write_chart_csv<W: Write>(chart: &[(f64, f64)], mut w: W) -> Result<()> {
    writeln!(w, "omega,trace")?;
    for (o, t) in chart {
        writeln!(w, "{o},{t}")?;
    }
    Ok(())
}
