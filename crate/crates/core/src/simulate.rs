//! Ground-truth generators: Gaussian functional moving-average and
//! autoregressive processes, their exact second-order structure, and the
//! sparse noisy sampling design.
//!
//! Processes are discretized on the spline grid: a curve is identified with
//! its grid values, an integral operator with the matrix mapping grid values
//! of `f` to grid values of `∫ K(·, y) f(y) dy` (where `f` is the spline
//! interpolant). Simulated curves are exact splines, so autocovariances and
//! spectral densities computed from these matrices are the true ones for the
//! simulated process.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{interpolate_curve, interpolate_surface, Curve, SplineSpace, Surface};
use crate::dataset::SparseFtsDataset;
use crate::error::{Error, Result};
use crate::par;
use crate::quadrature::{composite_gauss, linspace, trapezoid_weights};
use crate::spectral::{AutocovSequence, C64};

/// Relative Frobenius tail at which the stationary series is truncated.
const NEUMANN_TAIL: f64 = 1e-10;
const NEUMANN_MAX_TERMS: usize = 100_000;
const GAUSS_ORDER: usize = 8;

pub type KernelFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type CurveFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Integral operator `f ↦ ∫ K(·, y) f(y) dy` given by a smooth kernel.
#[derive(Clone)]
pub struct IntegralOperator {
    kernel: KernelFn,
}

impl fmt::Debug for IntegralOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("IntegralOperator")
    }
}

impl IntegralOperator {
    pub fn new(kernel: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        IntegralOperator { kernel: Arc::new(kernel) }
    }

    pub fn zero() -> Self {
        Self::new(|_, _| 0.0)
    }

    #[inline]
    pub fn kernel(&self, x: f64, y: f64) -> f64 {
        (self.kernel)(x, y)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let k = self.kernel.clone();
        Self::new(move |x, y| c * k(x, y))
    }

    /// Kernel values on the grid, interpolated.
    pub fn surface(&self, space: &Arc<SplineSpace>) -> Result<Surface> {
        interpolate_surface(self.grid_values(space), space)
    }

    pub fn grid_values(&self, space: &Arc<SplineSpace>) -> DMatrix<f64> {
        let g = space.grid();
        DMatrix::from_fn(g.len(), g.len(), |a, b| self.kernel(g[a], g[b]))
    }

    /// Matrix acting on grid values: `E Φ⁻¹`, where
    /// `E[i, m] = ∫ K(x_i, y) b_m(y) dy` by Gauss–Legendre on the knot panels.
    pub fn grid_matrix(&self, space: &Arc<SplineSpace>) -> DMatrix<f64> {
        let basis = space.basis();
        let (nodes, weights) = composite_gauss(basis.knots(), GAUSS_ORDER);
        let rows: Vec<_> = nodes.iter().map(|&y| basis.row(y)).collect();
        let grid = space.grid();
        let mut e = DMatrix::zeros(grid.len(), basis.n_basis());
        for (i, &x) in grid.iter().enumerate() {
            for ((y, w), row) in nodes.iter().zip(&weights).zip(&rows) {
                let kw = self.kernel(x, *y) * w;
                for (k, v) in row.values().iter().enumerate() {
                    e[(i, row.first + k)] += kw * v;
                }
            }
        }
        e * space.solver()
    }

    /// Applies the operator to a spline curve.
    pub fn apply(&self, f: &Curve) -> Result<Curve> {
        let m = self.grid_matrix(f.space());
        let v = &m * DVector::from_column_slice(f.values());
        interpolate_curve(v.as_slice(), f.space())
    }
}

/// Symmetrized discretization `W^{1/2} K W^{1/2}` on `n` trapezoid nodes.
fn weighted_matrix(op: &IntegralOperator, n: usize) -> DMatrix<f64> {
    let x = linspace(0.0, 1.0, n);
    let sq: Vec<f64> = trapezoid_weights(&x).iter().map(|w| w.sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| sq[i] * op.kernel(x[i], x[j]) * sq[j])
}

/// Largest singular value of the operator: trapezoid discretizations on 201
/// and 401 nodes combined by Richardson extrapolation.
pub fn operator_norm(op: &IntegralOperator) -> f64 {
    let coarse = discretized_norm(op, 201);
    let fine = discretized_norm(op, 401);
    ((4.0 * fine - coarse) / 3.0).max(0.0)
}

pub fn discretized_norm(op: &IntegralOperator, n: usize) -> f64 {
    weighted_matrix(op, n).singular_values().max()
}

/// Eigenvalues (descending) of a symmetric kernel's operator on `n` trapezoid nodes.
pub fn operator_eigenvalues(op: &IntegralOperator, n: usize) -> Vec<f64> {
    let mut ev: Vec<f64> = weighted_matrix(op, n).symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

#[derive(Debug, Clone)]
pub enum Dynamics {
    /// `X_t = μ + E_t + Σ_j B_j E_{t-j}`.
    MovingAverage(Vec<IntegralOperator>),
    /// `X_{t+1} - μ = A (X_t - μ) + E_{t+1}`.
    Autoregressive(IntegralOperator),
}

/// A Gaussian functional linear process with innovation covariance kernel `noise`.
#[derive(Clone)]
pub struct ProcessSpec {
    pub name: String,
    pub mean: CurveFn,
    pub noise: IntegralOperator,
    pub dynamics: Dynamics,
}

impl fmt::Debug for ProcessSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProcessSpec").field("name", &self.name).field("dynamics", &self.dynamics).finish()
    }
}

/// The benchmark processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcessName {
    #[serde(rename = "FMA2")]
    Fma2,
    #[serde(rename = "FMA4")]
    Fma4,
    #[serde(rename = "FMA8")]
    Fma8,
    #[serde(rename = "FAR07")]
    Far07,
    #[serde(rename = "FAR09")]
    Far09,
}

impl ProcessName {
    pub const ALL: [ProcessName; 5] =
        [ProcessName::Fma2, ProcessName::Fma4, ProcessName::Fma8, ProcessName::Far07, ProcessName::Far09];

    pub fn as_str(self) -> &'static str {
        match self {
            ProcessName::Fma2 => "FMA2",
            ProcessName::Fma4 => "FMA4",
            ProcessName::Fma8 => "FMA8",
            ProcessName::Far07 => "FAR07",
            ProcessName::Far09 => "FAR09",
        }
    }
}

impl fmt::Display for ProcessName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProcessName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProcessName::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown process `{s}` (expected FMA2, FMA4, FMA8, FAR07, FAR09)")))
    }
}

pub fn benchmark_mean() -> CurveFn {
    Arc::new(|x| 4.0 * (1.5 * PI * x).sin())
}

pub fn benchmark_noise() -> IntegralOperator {
    IntegralOperator::new(|x, y| {
        1.4 * (2.0 * PI * x).sin() * (2.0 * PI * y).sin() + 0.6 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos()
    })
}

/// Corner Gaussian kernels `5 exp(-(dx² + dy²))`, where `dx` is the distance
/// to 0 or 1 as selected by `(fx, fy)`.
fn corner_kernel(flip_x: bool, flip_y: bool) -> IntegralOperator {
    IntegralOperator::new(move |x, y| {
        let dx = if flip_x { 1.0 - x } else { x };
        let dy = if flip_y { 1.0 - y } else { y };
        5.0 * (-(dx * dx + dy * dy)).exp()
    })
}

/// `A_c = κ_c exp(-(x + 2y)²)` with `‖A_c‖ = c`.
pub fn far_operator(c: f64) -> IntegralOperator {
    let base = IntegralOperator::new(|x, y| (-(x + 2.0 * y).powi(2)).exp());
    let kappa = c / operator_norm(&base);
    base.scaled(kappa)
}

pub fn benchmark_process(name: ProcessName) -> ProcessSpec {
    let corners = [corner_kernel(false, false), corner_kernel(true, false), corner_kernel(false, true), corner_kernel(true, true)];
    let ma = |q: usize| Dynamics::MovingAverage((0..q).map(|j| corners[j % 4].clone()).collect());
    let dynamics = match name {
        ProcessName::Fma2 => ma(2),
        ProcessName::Fma4 => ma(4),
        ProcessName::Fma8 => ma(8),
        ProcessName::Far07 => Dynamics::Autoregressive(far_operator(0.7)),
        ProcessName::Far09 => Dynamics::Autoregressive(far_operator(0.9)),
    };
    ProcessSpec { name: name.to_string(), mean: benchmark_mean(), noise: benchmark_noise(), dynamics }
}

#[derive(Debug, Clone)]
enum GridDynamics {
    MovingAverage(Vec<DMatrix<f64>>),
    Autoregressive { m: DMatrix<f64>, stationary: DMatrix<f64> },
}

/// A process discretized on a spline space.
#[derive(Debug, Clone)]
pub struct DiscreteProcess {
    name: String,
    space: Arc<SplineSpace>,
    mean: Curve,
    noise_cov: DMatrix<f64>,
    noise_factor: DMatrix<f64>,
    dynamics: GridDynamics,
    initial_factor: Option<DMatrix<f64>>,
}

/// `U Λ₊^{1/2}` for a symmetric PSD matrix; errors if markedly indefinite.
pub fn psd_factor(cov: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.min();
    if min < -1e-8 * top.max(f64::MIN_POSITIVE) {
        return Err(Error::numeric(format!("{what} is not positive semidefinite (eigenvalue {min:.3e})")));
    }
    let n = cov.nrows();
    Ok(DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt()))
}

impl DiscreteProcess {
    pub fn new(spec: &ProcessSpec, space: &Arc<SplineSpace>) -> Result<Self> {
        let grid = space.grid();
        let mean_values: Vec<f64> = grid.iter().map(|&x| (spec.mean)(x)).collect();
        let mean = interpolate_curve(&mean_values, space)?;
        let noise_cov = spec.noise.grid_values(space);
        let noise_factor = psd_factor(&noise_cov, "innovation covariance")?;
        let (dynamics, initial_factor) = match &spec.dynamics {
            Dynamics::MovingAverage(ops) => {
                (GridDynamics::MovingAverage(ops.iter().map(|o| o.grid_matrix(space)).collect()), None)
            }
            Dynamics::Autoregressive(op) => {
                let m = op.grid_matrix(space);
                let stationary = stationary_covariance(&m, &noise_cov)?;
                let factor = psd_factor(&stationary, "stationary covariance")?;
                (GridDynamics::Autoregressive { m, stationary }, Some(factor))
            }
        };
        Ok(DiscreteProcess {
            name: spec.name.clone(),
            space: space.clone(),
            mean,
            noise_cov,
            noise_factor,
            dynamics,
            initial_factor,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn space(&self) -> &Arc<SplineSpace> {
        &self.space
    }

    pub fn mean(&self) -> &Curve {
        &self.mean
    }

    /// Largest lag with nonzero autocovariance, if finite.
    pub fn memory(&self) -> Option<usize> {
        match &self.dynamics {
            GridDynamics::MovingAverage(ms) => Some(ms.len()),
            GridDynamics::Autoregressive { .. } => None,
        }
    }

    /// Grid matrix of `R_h(x, y) = Cov(X_{t+h}(x), X_t(y))`, `h >= 0`.
    pub fn autocov_matrix(&self, h: usize) -> DMatrix<f64> {
        match &self.dynamics {
            GridDynamics::MovingAverage(ms) => {
                let g = self.space.grid_size();
                let op = |j: usize| if j == 0 { DMatrix::identity(g, g) } else { ms[j - 1].clone() };
                let q = ms.len();
                let mut acc = DMatrix::zeros(g, g);
                for j in 0..=q.saturating_sub(h) {
                    if j + h > q {
                        break;
                    }
                    acc += op(j + h) * &self.noise_cov * op(j).transpose();
                }
                acc
            }
            GridDynamics::Autoregressive { m, stationary } => m.pow(h as u32) * stationary,
        }
    }

    /// True autocovariance surfaces for lags `0..n_lags`.
    pub fn autocov(&self, n_lags: usize) -> Result<AutocovSequence> {
        let surfaces = (0..n_lags.max(1))
            .map(|h| interpolate_surface(self.autocov_matrix(h), &self.space))
            .collect::<Result<Vec<_>>>()?;
        AutocovSequence::new(surfaces)
    }

    /// `tr R_0` by trapezoid-weighted diagonal sum.
    pub fn trace_r0(&self) -> f64 {
        let r0 = self.autocov_matrix(0);
        self.space.weights().iter().enumerate().map(|(i, w)| w * r0[(i, i)]).sum()
    }

    /// Grid matrix of the spectral density kernel at `omega`.
    pub fn spectral_matrix(&self, omega: f64) -> Result<DMatrix<C64>> {
        let g = self.space.grid_size();
        let noise = self.noise_cov.map(|v| C64::new(v, 0.0));
        let phi = match &self.dynamics {
            GridDynamics::MovingAverage(ms) => {
                let mut phi = DMatrix::<C64>::identity(g, g);
                for (j, m) in ms.iter().enumerate() {
                    let e = C64::from_polar(1.0, -((j + 1) as f64) * omega);
                    phi += m.map(|v| C64::new(v, 0.0) * e);
                }
                phi
            }
            GridDynamics::Autoregressive { m, .. } => {
                let e = C64::from_polar(1.0, -omega);
                let resolvent = DMatrix::<C64>::identity(g, g) - m.map(|v| C64::new(v, 0.0) * e);
                resolvent
                    .try_inverse()
                    .ok_or_else(|| Error::numeric(format!("singular resolvent at ω = {omega}")))?
            }
        };
        let f = &phi * noise * phi.adjoint() / C64::new(2.0 * PI, 0.0);
        Ok((&f + f.adjoint()) * C64::new(0.5, 0.0))
    }

    /// True spectral kernels on `freqs`.
    pub fn true_spectral_density(&self, freqs: &[f64]) -> Result<Vec<DMatrix<C64>>> {
        par::try_map_range(freqs.len(), |i| self.spectral_matrix(freqs[i]))
    }

    /// Spectral density kernel at `omega` as a complex surface `(re, im)`.
    pub fn spectral_surface(&self, omega: f64) -> Result<(Surface, Surface)> {
        let f = self.spectral_matrix(omega)?;
        Ok((interpolate_surface(f.map(|v| v.re), &self.space)?, interpolate_surface(f.map(|v| v.im), &self.space)?))
    }

    fn innovation(&self, rng: &mut impl Rng) -> DVector<f64> {
        let g = self.space.grid_size();
        let z = DVector::from_iterator(g, (0..g).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.noise_factor * z
    }

    /// Simulates `X_1..X_T` started from the stationary law.
    pub fn simulate_path(&self, horizon: usize, rng: &mut impl Rng) -> Result<Vec<Curve>> {
        let mu = DVector::from_column_slice(self.mean.values());
        let mut values: Vec<DVector<f64>> = Vec::with_capacity(horizon);
        match &self.dynamics {
            GridDynamics::MovingAverage(ms) => {
                let q = ms.len();
                let mut past: Vec<DVector<f64>> = (0..q).map(|_| self.innovation(rng)).collect();
                for _ in 0..horizon {
                    let e = self.innovation(rng);
                    let mut x = &mu + &e;
                    // past[j] holds E_{t-1-j}.
                    for (m, e_lag) in ms.iter().zip(past.iter()) {
                        x += m * e_lag;
                    }
                    if q > 0 {
                        past.rotate_right(1);
                        past[0] = e;
                    }
                    values.push(x);
                }
            }
            GridDynamics::Autoregressive { m, .. } => {
                let g = self.space.grid_size();
                let factor = self.initial_factor.as_ref().expect("autoregressive processes carry a stationary factor");
                let z = DVector::from_iterator(g, (0..g).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let mut dev = factor * z;
                for t in 0..horizon {
                    if t > 0 {
                        dev = m * &dev + self.innovation(rng);
                    }
                    values.push(&mu + &dev);
                }
            }
        }
        values.iter().map(|v| interpolate_curve(v.as_slice(), &self.space)).collect()
    }
}

/// `Σ_j M^j S (M^j)ᵀ`, truncated at a relative Frobenius tail of 1e-10.
pub fn stationary_covariance(m: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut acc = s.clone();
    let mut term = s.clone();
    for _ in 0..NEUMANN_MAX_TERMS {
        term = m * &term * m.transpose();
        acc += &term;
        if term.norm() <= NEUMANN_TAIL * acc.norm() {
            return Ok((&acc + acc.transpose()) * 0.5);
        }
    }
    Err(Error::numeric("stationary covariance series does not converge (operator norm >= 1?)"))
}

/// Simulates `T` curves with the given seed.
pub fn simulate_path(process: &DiscreteProcess, horizon: usize, seed: u64) -> Result<Vec<Curve>> {
    process.simulate_path(horizon, &mut substream(seed, "path", 0))
}

/// Sparse noisy sampling design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub horizon: usize,
    pub n_max: usize,
    pub seed: u64,
}

/// Draws `N_t ~ U{0..n_max}` locations uniformly on `[0, 1]` per curve and
/// adds `N(0, σ²)` errors (`σ² = 0` gives exact values).
pub fn sparse_sample(path: &[Curve], n_max: usize, sigma2: f64, rng: &mut impl Rng) -> Result<SparseFtsDataset> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::invalid(format!("noise variance must be finite and nonnegative, got {sigma2}")));
    }
    let noise = Normal::new(0.0, sigma2.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut recs = Vec::new();
    for (t, curve) in path.iter().enumerate() {
        let n = rng.random_range(0..=n_max);
        for _ in 0..n {
            let x: f64 = rng.random();
            let eps = if sigma2 > 0.0 { noise.sample(rng) } else { 0.0 };
            recs.push((t + 1, x, curve.eval(x) + eps));
        }
    }
    SparseFtsDataset::new(path.len().max(1), recs)
}

/// `σ² = tr R_0 / snr`; infinite `snr` gives 0.
pub fn noise_variance_for(process: &DiscreteProcess, snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::invalid(format!("signal-to-noise ratio must be positive, got {snr}")));
    }
    Ok(if snr.is_infinite() { 0.0 } else { process.trace_r0() / snr })
}

/// A simulated latent path with its sparse noisy observations.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub path: Vec<Curve>,
    pub data: SparseFtsDataset,
    pub sigma2: f64,
}

/// Path and sample drawn from the `path` and `sample` substreams of `spec.seed`.
pub fn simulate_dataset(process: &DiscreteProcess, spec: &SamplingSpec, snr: f64) -> Result<SimulatedData> {
    if spec.horizon == 0 {
        return Err(Error::invalid("horizon T must be at least 1"));
    }
    let sigma2 = noise_variance_for(process, snr)?;
    let path = simulate_path(process, spec.horizon, spec.seed)?;
    let data = sparse_sample(&path, spec.n_max, sigma2, &mut substream(spec.seed, "sample", 0))?;
    Ok(SimulatedData { path, data, sigma2 })
}

/// Seed of the named substream `(seed, name, index)`.
pub fn derive_seed(seed: u64, name: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(splitmix(seed ^ h).wrapping_add(index))
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name, index))
}
