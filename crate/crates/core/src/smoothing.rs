//! Kernel-regression estimators of the mean, the lag-`h` autocovariance
//! kernels and the measurement-error variance from sparse observations.
//!
//! All smoothers are evaluated independently at every grid node (no shared
//! accumulators), so results do not depend on the degree of parallelism.
//! When the local design at a node is singular the window at that node is
//! widened by a factor 1.5, at most three times, before giving up.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{interpolate_curve, interpolate_surface, Curve, SplineSpace, Surface};
use crate::dataset::{DomainMetric, SparseFtsDataset};
use crate::error::{Error, Result};
use crate::par;

pub(crate) const WIDEN_FACTOR: f64 = 1.5;
pub(crate) const MAX_WIDENINGS: usize = 3;
/// Relative determinant threshold for local normal equations.
const SINGULAR_TOL: f64 = 1e-10;
/// Floor on the noise variance relative to the mean of `V̂`.
pub const SIGMA2_RELATIVE_FLOOR: f64 = 1e-4;

/// Epanechnikov kernel `3/4 (1 - v²)` on `[-1, 1]`.
#[inline]
pub fn epanechnikov(v: f64) -> f64 {
    if v.abs() <= 1.0 {
        0.75 * (1.0 - v * v)
    } else {
        0.0
    }
}

/// Bandwidths for the mean (`b_mu`), covariance (`b_r`) and diagonal (`b_v`) smoothers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSet {
    pub b_mu: f64,
    pub b_r: f64,
    pub b_v: f64,
}

impl BandwidthSet {
    pub fn new(b_mu: f64, b_r: f64, b_v: f64) -> Result<Self> {
        for (name, b) in [("b_mu", b_mu), ("b_r", b_r), ("b_v", b_v)] {
            check_bandwidth(name, b)?;
        }
        Ok(BandwidthSet { b_mu, b_r, b_v })
    }
}

pub(crate) fn check_bandwidth(name: &str, b: f64) -> Result<()> {
    if b > 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {b}")))
    }
}

#[derive(Debug, Clone)]
pub struct MeanEstimate {
    pub curve: Curve,
    pub bandwidth: f64,
    /// Bandwidth actually used at each grid node after widening.
    pub node_bandwidths: Vec<f64>,
}

impl MeanEstimate {
    pub fn eval(&self, x: f64) -> f64 {
        self.curve.eval(x)
    }
}

#[derive(Debug, Clone)]
pub struct AutocovEstimate {
    pub lag: usize,
    pub surface: Surface,
    pub bandwidth: f64,
    pub node_bandwidths: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct NoiseVarianceEstimate {
    /// Truncated estimate, `max(raw, floor)`.
    pub sigma2: f64,
    /// Untruncated integral, may be negative.
    pub raw: f64,
    pub floor: f64,
    /// Smoothed diagonal variance including the noise ridge.
    pub v_diag: Curve,
    /// Local-quadratic diagonal of the lag-0 covariance without the ridge.
    pub ridge_free_diag: Curve,
}

/// One raw covariance `G_{h,t}(x_a, x_b)`: product of centered measurements
/// at `(t + h, j)` and `(t, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawCovariance {
    /// Earlier time index, 1-based.
    pub t: usize,
    pub j: usize,
    pub k: usize,
    pub x_a: f64,
    pub x_b: f64,
    pub g: f64,
}

/// Centered measurements `(x, y - μ̂(x))` grouped by (0-based) time.
#[derive(Debug, Clone)]
pub struct Residuals {
    pub(crate) curves: Vec<Vec<(f64, f64)>>,
    pub(crate) metric: DomainMetric,
}

impl Residuals {
    pub fn new(data: &SparseFtsDataset, mean: &MeanEstimate) -> Self {
        let curves = data
            .curves()
            .iter()
            .map(|c| c.iter().map(|o| (o.x, o.y - mean.eval(o.x))).collect())
            .collect();
        Residuals { curves, metric: data.metric() }
    }

    pub fn horizon(&self) -> usize {
        self.curves.len()
    }

    pub fn curve(&self, t: usize) -> &[(f64, f64)] {
        &self.curves[t]
    }
}

/// Runs `fit` with the nominal bandwidth, widening on failure.
pub(crate) fn with_widening<T>(bw: f64, mut fit: impl FnMut(f64) -> Option<T>) -> Option<(T, f64)> {
    let mut b = bw;
    for _ in 0..=MAX_WIDENINGS {
        if let Some(v) = fit(b) {
            return Some((v, b));
        }
        b *= WIDEN_FACTOR;
    }
    None
}

/// Intercept of a weighted local-linear fit of `points` at `at`.
pub(crate) fn local_linear_1d(points: &[(f64, f64)], at: f64, bw: f64, metric: DomainMetric) -> Option<f64> {
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let u = metric.diff(x, at) / bw;
        let k = epanechnikov(u);
        if k > 0.0 {
            s0 += k;
            s1 += k * u;
            s2 += k * u * u;
            t0 += k * y;
            t1 += k * u * y;
        }
    }
    let det = s0 * s2 - s1 * s1;
    if s0 <= 0.0 || det <= SINGULAR_TOL * s0 * s2 {
        return None;
    }
    Some((s2 * t0 - s1 * t1) / det)
}

fn smooth_curve(
    points: &[(f64, f64)],
    bw: f64,
    metric: DomainMetric,
    space: &Arc<SplineSpace>,
    what: &str,
) -> Result<(Curve, Vec<f64>)> {
    let grid = space.grid();
    let fits = par::try_map_range(grid.len(), |i| {
        with_widening(bw, |b| local_linear_1d(points, grid[i], b, metric)).ok_or_else(|| {
            Error::InsufficientData(format!(
                "{what} smoother: fewer than two distinct locations near x = {:.4} even at bandwidth {:.4}",
                grid[i],
                bw * WIDEN_FACTOR.powi(MAX_WIDENINGS as i32)
            ))
        })
    })?;
    let (values, bws): (Vec<f64>, Vec<f64>) = fits.into_iter().unzip();
    Ok((interpolate_curve(&values, space)?, bws))
}

/// Local-linear estimate of the mean function.
pub fn estimate_mean(data: &SparseFtsDataset, b_mu: f64, space: &Arc<SplineSpace>) -> Result<MeanEstimate> {
    check_bandwidth("b_mu", b_mu)?;
    let points: Vec<(f64, f64)> = data.records().map(|(_, x, y)| (x, y)).collect();
    let (curve, node_bandwidths) = smooth_curve(&points, b_mu, data.metric(), space, "mean")?;
    Ok(MeanEstimate { curve, bandwidth: b_mu, node_bandwidths })
}

/// Raw covariances at lag `h` (`0 <= h < T`).
pub fn raw_covariances(
    data: &SparseFtsDataset,
    mean: &MeanEstimate,
    h: usize,
    exclude_diagonal: bool,
) -> Result<Vec<RawCovariance>> {
    let horizon = data.horizon();
    if h >= horizon {
        return Err(Error::invalid(format!("lag {h} must be below the horizon {horizon}")));
    }
    let res = Residuals::new(data, mean);
    let mut out = Vec::new();
    for t in 0..horizon - h {
        for (j, &(xa, ra)) in res.curve(t + h).iter().enumerate() {
            for (k, &(xb, rb)) in res.curve(t).iter().enumerate() {
                if h == 0 && exclude_diagonal && j == k {
                    continue;
                }
                out.push(RawCovariance { t: t + 1, j, k, x_a: xa, x_b: xb, g: ra * rb });
            }
        }
    }
    Ok(out)
}

/// Kernel-weighted moment sums for a local-linear surface fit.
///
/// `s` holds `Σ w uᵖ vᑫ` for `(p, q)` in `00, 10, 01, 11, 20, 02`; `q` holds
/// `Σ w g uᵖ vᑫ` for `00, 10, 01`, where `u, v` are the scaled displacements.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairSums {
    pub s: [f64; 6],
    pub q: [f64; 3],
}

pub(crate) const S00: usize = 0;
pub(crate) const S10: usize = 1;
pub(crate) const S01: usize = 2;
pub(crate) const S11: usize = 3;
pub(crate) const S20: usize = 4;
pub(crate) const S02: usize = 5;

impl PairSums {
    #[inline]
    pub(crate) fn add(&mut self, u: f64, v: f64, w: f64, g: f64) {
        let (wu, wv) = (w * u, w * v);
        self.s[S00] += w;
        self.s[S10] += wu;
        self.s[S01] += wv;
        self.s[S11] += wu * v;
        self.s[S20] += wu * u;
        self.s[S02] += wv * v;
        self.q[0] += w * g;
        self.q[1] += wu * g;
        self.q[2] += wv * g;
    }

    pub(crate) fn scale(&mut self, c: f64) {
        self.s.iter_mut().for_each(|v| *v *= c);
        self.q.iter_mut().for_each(|v| *v *= c);
    }

    /// Sums seen from the transposed node: roles of `u` and `v` swapped.
    pub fn transposed(&self) -> PairSums {
        let s = self.s;
        let q = self.q;
        PairSums { s: [s[S00], s[S01], s[S10], s[S11], s[S02], s[S20]], q: [q[0], q[2], q[1]] }
    }

    /// Cramer's-rule cofactors `(A1, A2, A3, B)` of the 3x3 normal system.
    pub fn cofactors(&self) -> (f64, f64, f64, f64) {
        cofactors(&self.s)
    }

    /// Intercept of the local-linear fit, `None` if the system is singular.
    pub fn intercept(&self) -> Option<f64> {
        let (a1, a2, a3, b) = self.cofactors();
        let scale = self.s[S00] * self.s[S20] * self.s[S02];
        if self.s[S00] <= 0.0 || b <= SINGULAR_TOL * scale {
            return None;
        }
        Some((a1 * self.q[0] - a2 * self.q[1] - a3 * self.q[2]) / b)
    }
}

#[inline]
pub(crate) fn cofactors(s: &[f64; 6]) -> (f64, f64, f64, f64) {
    let a1 = s[S20] * s[S02] - s[S11] * s[S11];
    let a2 = s[S10] * s[S02] - s[S01] * s[S11];
    let a3 = s[S01] * s[S20] - s[S10] * s[S11];
    let b = a1 * s[S00] - a2 * s[S10] - a3 * s[S01];
    (a1, a2, a3, b)
}

/// Scratch buffers for in-window observations.
#[derive(Default)]
pub(crate) struct Window {
    a: Vec<(usize, f64, f64, f64)>,
    b: Vec<(usize, f64, f64, f64)>,
}

fn fill_window(out: &mut Vec<(usize, f64, f64, f64)>, obs: &[(f64, f64)], at: f64, bw: f64, metric: DomainMetric) {
    out.clear();
    for (j, &(x, r)) in obs.iter().enumerate() {
        let u = metric.diff(x, at) / bw;
        let k = epanechnikov(u);
        if k > 0.0 {
            out.push((j, u, k, r));
        }
    }
}

/// Accumulates lag-`h` pair sums at node `(x, y)`: the first coordinate
/// belongs to time `t + h`, the second to time `t`. Diagonal pairs are
/// skipped at lag 0.
pub(crate) fn lag_pair_sums(
    res: &Residuals,
    x: f64,
    y: f64,
    h: usize,
    bw: f64,
    win: &mut Window,
) -> PairSums {
    let mut sums = PairSums::default();
    let horizon = res.horizon();
    if h >= horizon {
        return sums;
    }
    for t in 0..horizon - h {
        let (later, earlier) = (res.curve(t + h), res.curve(t));
        if later.is_empty() || earlier.is_empty() {
            continue;
        }
        fill_window(&mut win.a, later, x, bw, res.metric);
        if win.a.is_empty() {
            continue;
        }
        fill_window(&mut win.b, earlier, y, bw, res.metric);
        for &(j, u, ku, ra) in &win.a {
            for &(k, v, kv, rb) in &win.b {
                if h == 0 && j == k {
                    continue;
                }
                sums.add(u, v, ku * kv, ra * rb);
            }
        }
    }
    sums
}

/// Local-linear surface estimate of the lag-`h` autocovariance kernel.
///
/// At lag 0 the diagonal (same-measurement) raw covariances are excluded
/// and the estimate is exactly symmetric.
pub fn estimate_autocov(
    data: &SparseFtsDataset,
    mean: &MeanEstimate,
    h: usize,
    b_r: f64,
    space: &Arc<SplineSpace>,
) -> Result<AutocovEstimate> {
    check_bandwidth("b_r", b_r)?;
    if h >= data.horizon() {
        return Err(Error::invalid(format!("lag {h} must be below the horizon {}", data.horizon())));
    }
    let res = Residuals::new(data, mean);
    estimate_autocov_from_residuals(&res, h, b_r, space)
}

pub(crate) fn estimate_autocov_from_residuals(
    res: &Residuals,
    h: usize,
    b_r: f64,
    space: &Arc<SplineSpace>,
) -> Result<AutocovEstimate> {
    let grid = space.grid();
    let g = grid.len();
    let nodes: Vec<(usize, usize)> = (0..g)
        .flat_map(|a| (0..g).map(move |b| (a, b)))
        .filter(|&(a, b)| h > 0 || a <= b)
        .collect();
    let fits = par::try_map_range(nodes.len(), |n| {
        let (a, b) = nodes[n];
        let mut win = Window::default();
        with_widening(b_r, |bw| lag_pair_sums(res, grid[a], grid[b], h, bw, &mut win).intercept()).ok_or_else(
            || {
                Error::numeric(format!(
                    "lag-{h} covariance smoother singular at node ({:.4}, {:.4})",
                    grid[a], grid[b]
                ))
            },
        )
    })?;
    let mut values = DMatrix::zeros(g, g);
    let mut bws = DMatrix::zeros(g, g);
    for (&(a, b), (v, bw)) in nodes.iter().zip(fits) {
        values[(a, b)] = v;
        bws[(a, b)] = bw;
        if h == 0 {
            values[(b, a)] = v;
            bws[(b, a)] = bw;
        }
    }
    Ok(AutocovEstimate { lag: h, surface: interpolate_surface(values, space)?, bandwidth: b_r, node_bandwidths: bws })
}

/// Local-quadratic fit along the diagonal at `x` using off-diagonal lag-0
/// raw covariances projected to the diagonal midpoint.
pub(crate) fn ridge_free_diag_at(res: &Residuals, x: f64, bw: f64, win: &mut Window) -> Option<f64> {
    let mut s = [0.0; 5];
    let mut q = [0.0; 3];
    for c in &res.curves {
        if c.len() < 2 {
            continue;
        }
        fill_window(&mut win.a, c, x, bw, res.metric);
        for &(j, uj, kj, rj) in &win.a {
            for &(k, uk, kk, rk) in &win.a {
                if j == k {
                    continue;
                }
                let w = kj * kk;
                let p = 0.5 * (uj + uk);
                let g = rj * rk;
                let p2 = p * p;
                s[0] += w;
                s[1] += w * p;
                s[2] += w * p2;
                s[3] += w * p2 * p;
                s[4] += w * p2 * p2;
                q[0] += w * g;
                q[1] += w * p * g;
                q[2] += w * p2 * g;
            }
        }
    }
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let normal = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    let d = det(normal);
    if s[0] <= 0.0 || d <= SINGULAR_TOL * s[0] * s[2] * s[4] {
        return None;
    }
    let mut replaced = normal;
    for (row, qi) in replaced.iter_mut().zip(q) {
        row[0] = qi;
    }
    Some(det(replaced) / d)
}

/// Noise-variance estimate from the smoothed diagonal with and without the ridge.
///
/// `V̂` is the local-linear smoother of the squared centered measurements;
/// the ridge-free diagonal is a local-quadratic smoother of the off-diagonal
/// lag-0 raw covariances in the direction across the diagonal.
pub fn estimate_noise_variance(
    data: &SparseFtsDataset,
    mean: &MeanEstimate,
    b_v: f64,
    b_r: f64,
    space: &Arc<SplineSpace>,
) -> Result<NoiseVarianceEstimate> {
    check_bandwidth("b_v", b_v)?;
    check_bandwidth("b_r", b_r)?;
    let res = Residuals::new(data, mean);
    let v_diag = smooth_squares(&res, b_v, space)?;
    let grid = space.grid();
    let rbar = par::try_map_range(grid.len(), |i| {
        let mut win = Window::default();
        with_widening(b_r, |bw| ridge_free_diag_at(&res, grid[i], bw, &mut win))
            .map(|(v, _)| v)
            .ok_or_else(|| {
                Error::numeric(format!("diagonal local-quadratic smoother singular at x = {:.4}", grid[i]))
            })
    })?;
    let ridge_free_diag = interpolate_curve(&rbar, space)?;
    Ok(noise_variance_from_diagonals(v_diag, ridge_free_diag))
}

/// Local-linear smoother `V̂` of squared centered measurements (diagonal
/// variance including the noise ridge).
pub fn estimate_variance_diag(
    data: &SparseFtsDataset,
    mean: &MeanEstimate,
    b_v: f64,
    space: &Arc<SplineSpace>,
) -> Result<Curve> {
    check_bandwidth("b_v", b_v)?;
    smooth_squares(&Residuals::new(data, mean), b_v, space)
}

fn smooth_squares(res: &Residuals, b_v: f64, space: &Arc<SplineSpace>) -> Result<Curve> {
    let squares: Vec<(f64, f64)> = res.curves.iter().flatten().map(|&(x, r)| (x, r * r)).collect();
    Ok(smooth_curve(&squares, b_v, res.metric, space, "diagonal variance")?.0)
}

/// `σ̂² = max(∫ (V̂ - R̄₀), floor)` with trapezoid quadrature on the grid.
pub fn noise_variance_from_diagonals(v_diag: Curve, ridge_free_diag: Curve) -> NoiseVarianceEstimate {
    let w = v_diag.space().weights();
    let raw: f64 = v_diag
        .values()
        .iter()
        .zip(ridge_free_diag.values())
        .zip(w)
        .map(|((v, r), w)| (v - r) * w)
        .sum();
    let mean_v = v_diag.values().iter().sum::<f64>() / v_diag.values().len() as f64;
    let floor = SIGMA2_RELATIVE_FLOOR * mean_v.abs().max(f64::MIN_POSITIVE);
    NoiseVarianceEstimate { sigma2: raw.max(floor), raw, floor, v_diag, ridge_free_diag }
}
