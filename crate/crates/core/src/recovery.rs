//! Recovery and forecasting of latent curves by best linear unbiased
//! prediction from all observations in a window of times, with pointwise and
//! simultaneous Gaussian confidence bands.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::{interpolate_curve, interpolate_surface, BasisRow, Curve, SplineSpace, Surface};
use crate::dataset::SparseFtsDataset;
use crate::error::{Error, Result};
use crate::par;
use crate::quadrature::linspace;
use crate::simulate::{substream, DiscreteProcess};
use crate::spectral::AutocovSequence;

pub const DEFAULT_MC_PATHS: usize = 20_000;
pub const DEFAULT_REFINED_GRID: usize = 101;
const MC_CHUNK: usize = 1_000;
/// Variances below this fraction of the largest one count as zero.
const ZERO_VARIANCE: f64 = 1e-12;
/// Eigenvalues below this fraction of the largest one are dropped.
const EIGEN_CUTOFF: f64 = 1e-12;
/// Tolerated negative eigenvalue of a correlation matrix, relative to the largest.
const PSD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Lagged covariances from the spectral estimate.
    Dynamic,
    /// Lag-0 covariance only.
    Static,
    /// Ground truth supplied by a simulator.
    Truth,
}

/// Fitted second-order dynamics: mean, noise variance and autocovariances.
#[derive(Debug, Clone)]
pub struct SecondOrderModel {
    pub mean: Curve,
    pub sigma2: f64,
    pub autocov: AutocovSequence,
    /// Bartlett span `L`; lags `0..L` may be nonzero.
    pub span: usize,
    pub kind: ModelKind,
}

impl SecondOrderModel {
    pub fn new(mean: Curve, sigma2: f64, autocov: AutocovSequence, span: usize, kind: ModelKind) -> Result<Self> {
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::invalid(format!("noise variance must be finite and nonnegative, got {sigma2}")));
        }
        if span < 1 {
            return Err(Error::invalid("span must be at least 1"));
        }
        Ok(SecondOrderModel { mean, sigma2, autocov, span, kind })
    }

    /// The same model restricted to lag 0 (`L = 1`).
    pub fn static_version(&self) -> Self {
        SecondOrderModel {
            mean: self.mean.clone(),
            sigma2: self.sigma2,
            autocov: self.autocov.truncated_to(1),
            span: 1,
            kind: ModelKind::Static,
        }
    }

    /// True dynamics of a simulated process with lags `0..n_lags`.
    pub fn from_process(process: &DiscreteProcess, sigma2: f64, n_lags: usize) -> Result<Self> {
        let n = process.memory().map_or(n_lags, |q| q + 1).max(1);
        Self::new(process.mean().clone(), sigma2, process.autocov(n)?, n, ModelKind::Truth)
    }

    pub fn space(&self) -> &Arc<SplineSpace> {
        self.mean.space()
    }

    /// Default half-width of the recovery window (`span 2L + 1`).
    pub fn default_half_width(&self) -> usize {
        self.span
    }
}

/// Observation window and the joint second moments needed for prediction.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    /// Target time (1-based, may exceed `T` for forecasts).
    pub s: usize,
    /// Times `t_lo..=t_hi` (1-based) in the window; `None` if it is empty.
    pub window: Option<(usize, usize)>,
    pub times: Vec<usize>,
    pub locations: Vec<f64>,
    /// Centered observations `Y - μ̂(x)`.
    pub residuals: DVector<f64>,
    /// `R̃_{t_a - t_b}(x_a, x_b) + σ² δ_ab`.
    pub obs_cov: DMatrix<f64>,
    /// `R̃_{s - t_b}(g, x_b)` for grid points `g`.
    pub cross_cov: DMatrix<f64>,
    /// `R̃_0` on the grid.
    pub prior_cov: DMatrix<f64>,
    pub prior_mean: Vec<f64>,
    space: Arc<SplineSpace>,
}

/// Assembles the prediction system for `X_s` from times within
/// `half_width` of `s`, clipped to `1..=T`.
pub fn build_stacked_system(
    data: &SparseFtsDataset,
    model: &SecondOrderModel,
    s: usize,
    half_width: usize,
) -> Result<StackedSystem> {
    if s == 0 {
        return Err(Error::invalid("target time must be at least 1"));
    }
    let space = model.space().clone();
    let basis = space.basis();
    let horizon = data.horizon();
    let lo = s.saturating_sub(half_width).max(1);
    let hi = (s + half_width).min(horizon);
    let window = (lo <= hi).then_some((lo, hi));
    let mut times = Vec::new();
    let mut locations = Vec::new();
    let mut resid = Vec::new();
    if let Some((lo, hi)) = window {
        for t in lo..=hi {
            for o in data.curve(t - 1) {
                times.push(t);
                locations.push(o.x);
                resid.push(o.y - model.mean.eval(o.x));
            }
        }
    }
    let n = times.len();
    let rows: Vec<BasisRow> = locations.iter().map(|&x| basis.row(x)).collect();
    let grid_rows: Vec<BasisRow> = space.grid().iter().map(|&x| basis.row(x)).collect();
    let ac = &model.autocov;
    let mut obs_cov = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..=a {
            let v = ac.eval_rows(times[a] as isize - times[b] as isize, &rows[a], &rows[b]);
            obs_cov[(a, b)] = v;
            obs_cov[(b, a)] = v;
        }
        obs_cov[(a, a)] += model.sigma2;
    }
    let g = grid_rows.len();
    let cross_cov =
        DMatrix::from_fn(g, n, |i, b| ac.eval_rows(s as isize - times[b] as isize, &grid_rows[i], &rows[b]));
    let r0 = &ac.surfaces()[0];
    let prior_cov = r0.values().clone();
    Ok(StackedSystem {
        s,
        window,
        times,
        locations,
        residuals: DVector::from_vec(resid),
        obs_cov,
        cross_cov,
        prior_cov,
        prior_mean: model.mean.values().to_vec(),
        space,
    })
}

impl StackedSystem {
    pub fn n_obs(&self) -> usize {
        self.times.len()
    }

    fn factor(&self) -> Result<Option<Cholesky<f64, nalgebra::Dyn>>> {
        if self.n_obs() == 0 {
            return Ok(None);
        }
        Cholesky::new(self.obs_cov.clone()).map(Some).ok_or_else(|| {
            Error::numeric(format!(
                "observation covariance at s = {} is not positive definite; use the eigen-truncated model",
                self.s
            ))
        })
    }

    /// Conditional mean on the grid.
    pub fn predict(&self) -> Result<Vec<f64>> {
        let Some(chol) = self.factor()? else {
            return Ok(self.prior_mean.clone());
        };
        let alpha = chol.solve(&self.residuals);
        let adj = &self.cross_cov * alpha;
        Ok(self.prior_mean.iter().zip(adj.iter()).map(|(m, a)| m + a).collect())
    }

    /// Conditional mean and covariance on the grid.
    pub fn condition(&self) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let Some(chol) = self.factor()? else {
            return Ok((self.prior_mean.clone(), self.prior_cov.clone()));
        };
        let alpha = chol.solve(&self.residuals);
        let adj = &self.cross_cov * alpha;
        let mean = self.prior_mean.iter().zip(adj.iter()).map(|(m, a)| m + a).collect();
        let v = chol
            .l()
            .solve_lower_triangular(&self.cross_cov.transpose())
            .ok_or_else(|| Error::numeric("singular Cholesky factor"))?;
        let cov = &self.prior_cov - v.transpose() * v;
        Ok((mean, (&cov + cov.transpose()) * 0.5))
    }
}

/// Monte Carlo settings for the simultaneous quantile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub refined_grid: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { n_paths: DEFAULT_MC_PATHS, refined_grid: DEFAULT_REFINED_GRID, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub s: usize,
    pub alpha: f64,
    pub window: Option<(usize, usize)>,
    pub n_obs: usize,
    pub predicted: Curve,
    pub cond_var: Curve,
    pub cond_cov: DMatrix<f64>,
    pub pointwise: (Curve, Curve),
    pub simultaneous: (Curve, Curve),
    pub z_pointwise: f64,
    /// Monte Carlo quantile of `sup |Z|`.
    pub z_mc: f64,
    /// Multiplier used for the simultaneous band, `max(z_mc, z_pointwise)`.
    pub z_simultaneous: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryManifest {
    pub s: usize,
    pub alpha: f64,
    pub window: Option<(usize, usize)>,
    pub n_obs: usize,
    pub z_pointwise: f64,
    pub z_mc: f64,
    pub z_simultaneous: f64,
}

impl RecoveryResult {
    pub fn manifest(&self) -> RecoveryManifest {
        RecoveryManifest {
            s: self.s,
            alpha: self.alpha,
            window: self.window,
            n_obs: self.n_obs,
            z_pointwise: self.z_pointwise,
            z_mc: self.z_mc,
            z_simultaneous: self.z_simultaneous,
        }
    }

    /// Adds `c` to the prediction and every band limit.
    pub fn shifted(&self, c: f64) -> Result<RecoveryResult> {
        let space = self.predicted.space();
        let add = |v: &Curve| interpolate_curve(&v.values().iter().map(|x| x + c).collect::<Vec<_>>(), space);
        Ok(RecoveryResult {
            predicted: add(&self.predicted)?,
            pointwise: (add(&self.pointwise.0)?, add(&self.pointwise.1)?),
            simultaneous: (add(&self.simultaneous.0)?, add(&self.simultaneous.1)?),
            ..self.clone()
        })
    }

    /// Writes `x,pred,var,pw_lo,pw_hi,sim_lo,sim_hi` on the grid.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,pred,var,pw_lo,pw_hi,sim_lo,sim_hi")?;
        let grid = self.predicted.space().grid();
        for (i, x) in grid.iter().enumerate() {
            writeln!(
                w,
                "{x},{},{},{},{},{},{}",
                self.predicted.values()[i],
                self.cond_var.values()[i],
                self.pointwise.0.values()[i],
                self.pointwise.1.values()[i],
                self.simultaneous.0.values()[i],
                self.simultaneous.1.values()[i]
            )?;
        }
        Ok(())
    }
}

/// `Φ⁻¹(1 - α/2)`.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let n = Normal::new(0.0, 1.0).map_err(|e| Error::numeric(e.to_string()))?;
    Ok(n.inverse_cdf(1.0 - alpha / 2.0))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Conditional correlation with the zero-variance case split.
pub fn correlation_matrix(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let d: Vec<f64> = cov.diagonal().iter().map(|v| v.max(0.0)).collect();
    let top = d.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<bool> = d.iter().map(|v| *v > ZERO_VARIANCE * top && *v > 0.0).collect();
    DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| {
        if keep[i] && keep[j] {
            cov[(i, j)] / (d[i] * d[j]).sqrt()
        } else {
            0.0
        }
    })
}

/// Recovers the curve at the system's target time with `(1 - α)` bands.
pub fn recover_curve(sys: &StackedSystem, alpha: f64, mc: &McConfig) -> Result<RecoveryResult> {
    check_alpha(alpha)?;
    let space = &sys.space;
    let (mean, cov) = sys.condition()?;
    let var: Vec<f64> = cov.diagonal().iter().map(|v| v.max(0.0)).collect();
    let corr = interpolate_surface(correlation_matrix(&cov), space)?;
    let z_pw = normal_quantile(alpha)?;
    let z_mc = simultaneous_quantile(&corr, alpha, mc.n_paths, mc.refined_grid, mc.seed)?;
    let z_sim = z_mc.max(z_pw);
    let band = |z: f64, sign: f64| -> Result<Curve> {
        let v: Vec<f64> = mean.iter().zip(&var).map(|(m, v)| m + sign * z * v.sqrt()).collect();
        interpolate_curve(&v, space)
    };
    Ok(RecoveryResult {
        s: sys.s,
        alpha,
        window: sys.window,
        n_obs: sys.n_obs(),
        predicted: interpolate_curve(&mean, space)?,
        cond_var: interpolate_curve(&var, space)?,
        cond_cov: cov,
        pointwise: (band(z_pw, -1.0)?, band(z_pw, 1.0)?),
        simultaneous: (band(z_sim, -1.0)?, band(z_sim, 1.0)?),
        z_pointwise: z_pw,
        z_mc,
        z_simultaneous: z_sim,
    })
}

/// `(1 - α)`-quantile of `sup |Z|` for a centred Gaussian process with
/// correlation `corr`, sampled on a refined grid of `refined` points.
pub fn simultaneous_quantile(corr: &Surface, alpha: f64, n_mc: usize, refined: usize, seed: u64) -> Result<f64> {
    if refined < 2 {
        return Err(Error::invalid("refined grid needs at least 2 points"));
    }
    let basis = corr.space().basis();
    let rows: Vec<BasisRow> = linspace(0.0, 1.0, refined).iter().map(|&x| basis.row(x)).collect();
    let mut m = DMatrix::zeros(refined, refined);
    for i in 0..refined {
        for j in 0..=i {
            let v = corr.eval_rows(&rows[i], &rows[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    sup_abs_quantile(&correlation_matrix(&m), alpha, n_mc, seed)
}

/// `(1 - α)`-quantile of `max_i |Z_i|` for `Z ~ N(0, cov)`: the
/// `⌈(1 - α) n⌉`-th order statistic of `n_mc` seeded draws.
pub fn sup_abs_quantile(cov: &DMatrix<f64>, alpha: f64, n_mc: usize, seed: u64) -> Result<f64> {
    check_alpha(alpha)?;
    if n_mc == 0 {
        return Err(Error::invalid("Monte Carlo needs at least one path"));
    }
    let eig = ((cov + cov.transpose()) * 0.5).symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return Ok(0.0);
    }
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * top {
        return Err(Error::numeric(format!("correlation kernel is not positive semidefinite (eigenvalue {min:.3e})")));
    }
    let kept: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&k| eig.eigenvalues[k] > EIGEN_CUTOFF * top).collect();
    let n = cov.nrows();
    let factor =
        DMatrix::from_fn(n, kept.len(), |i, c| eig.eigenvectors[(i, kept[c])] * eig.eigenvalues[kept[c]].sqrt());
    let chunks = n_mc.div_ceil(MC_CHUNK);
    let sups: Vec<Vec<f64>> = par::map_range(chunks, |c| {
        let mut rng = substream(seed, "sup-norm", c as u64);
        let len = MC_CHUNK.min(n_mc - c * MC_CHUNK);
        let mut z = DVector::zeros(kept.len());
        (0..len)
            .map(|_| {
                z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
                (&factor * &z).amax()
            })
            .collect()
    });
    let mut all: Vec<f64> = sups.into_iter().flatten().collect();
    all.sort_by(f64::total_cmp);
    let k = ((1.0 - alpha) * n_mc as f64).ceil() as usize;
    Ok(all[k.clamp(1, n_mc) - 1])
}

/// Recovers `X_s` with the default window.
pub fn recover(
    data: &SparseFtsDataset,
    model: &SecondOrderModel,
    s: usize,
    alpha: f64,
    mc: &McConfig,
) -> Result<RecoveryResult> {
    recover_window(data, model, s, model.default_half_width(), alpha, mc)
}

/// Recovers `X_s` from times within `half_width` of `s`.
pub fn recover_window(
    data: &SparseFtsDataset,
    model: &SecondOrderModel,
    s: usize,
    half_width: usize,
    alpha: f64,
    mc: &McConfig,
) -> Result<RecoveryResult> {
    let sys = build_stacked_system(data, model, s, half_width)?;
    let mc = McConfig { seed: crate::simulate::derive_seed(mc.seed, "recover", s as u64), ..*mc };
    recover_curve(&sys, alpha, &mc)
}

/// Recovers several times in parallel.
pub fn recover_many(
    data: &SparseFtsDataset,
    model: &SecondOrderModel,
    times: &[usize],
    alpha: f64,
    mc: &McConfig,
) -> Result<Vec<RecoveryResult>> {
    par::try_map_range(times.len(), |i| recover(data, model, times[i], alpha, mc))
}

/// Conditional means only (grid values) for `s = 1..=T`.
pub fn predict_all(data: &SparseFtsDataset, model: &SecondOrderModel) -> Result<Vec<Curve>> {
    let half = model.default_half_width();
    par::try_map_range(data.horizon(), |t| {
        let sys = build_stacked_system(data, model, t + 1, half)?;
        interpolate_curve(&sys.predict()?, model.space())
    })
}

/// Forecasts `X_{T+1}, …, X_{T+r}` with bands.
pub fn forecast(
    data: &SparseFtsDataset,
    model: &SecondOrderModel,
    horizon: usize,
    alpha: f64,
    mc: &McConfig,
) -> Result<Vec<RecoveryResult>> {
    if horizon < 1 {
        return Err(Error::invalid("forecast horizon must be at least 1"));
    }
    let stored = model.autocov.len();
    if horizon >= stored {
        log::warn!(
            "forecast steps {stored}..={horizon} exceed the available lags 0..{}; their cross-covariances are zero",
            stored - 1
        );
    }
    let t = data.horizon();
    let times: Vec<usize> = (1..=horizon).map(|r| t + r).collect();
    recover_many(data, model, &times, alpha, mc)
}
