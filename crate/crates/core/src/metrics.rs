//! Relative error metrics for spectral estimation and curve recovery, and
//! the simulation benchmark harness.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics, Statistics};

use crate::basis::Curve;
use crate::error::{Error, Result};
use crate::quadrature::trapezoid_weights;
use crate::spectral::{SpectralDensityEstimate, C64};

mod benchmark;

pub use benchmark::{
    run_benchmark, run_benchmark_grid, run_replicate, BenchmarkConfig, BenchmarkReport, GridReport,
    ReplicateFailure, ReplicateRun, ReplicateSummary,
};

/// Replicates with `σ̂` at or below this value are left out of recovery medians.
pub const SIGMA_FILTER: f64 = 0.05;

/// `∫∫∫ |f̂ - f|² / ∫∫∫ |f|²` with trapezoid quadrature in `ω`, `x` and `y`.
pub fn spectral_rmse(est: &SpectralDensityEstimate, truth: &[DMatrix<C64>]) -> Result<f64> {
    spectral_rmse_kernels(est.freqs(), est.kernels(), truth, est.space().weights())
}

/// [`spectral_rmse`] on raw kernels over `freqs` with spatial weights `w`.
pub fn spectral_rmse_kernels(
    freqs: &[f64],
    est: &[DMatrix<C64>],
    truth: &[DMatrix<C64>],
    w: &[f64],
) -> Result<f64> {
    if est.len() != freqs.len() || truth.len() != freqs.len() {
        return Err(Error::invalid(format!(
            "grid mismatch: {} frequencies, {} estimated and {} true kernels",
            freqs.len(),
            est.len(),
            truth.len()
        )));
    }
    let wf = trapezoid_weights(freqs);
    let (mut num, mut den) = (0.0, 0.0);
    for ((a, b), wk) in est.iter().zip(truth).zip(&wf) {
        if a.shape() != (w.len(), w.len()) || b.shape() != (w.len(), w.len()) {
            return Err(Error::invalid("kernel shape does not match the spatial grid"));
        }
        for j in 0..w.len() {
            for i in 0..w.len() {
                let ww = wk * w[i] * w[j];
                num += ww * (a[(i, j)] - b[(i, j)]).norm_sqr();
                den += ww * b[(i, j)].norm_sqr();
            }
        }
    }
    if !(den > 0.0) {
        return Err(Error::invalid("true spectral density is identically zero"));
    }
    Ok(num / den)
}

/// `(1/T) Σ_t ∫ (X̂_t - X_t)² / tr R_0`, trapezoid on the grid.
pub fn recovery_rmse(recovered: &[Curve], truth: &[Curve], trace_r0: f64) -> Result<f64> {
    if recovered.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} recovered curves but {} true curves",
            recovered.len(),
            truth.len()
        )));
    }
    if recovered.is_empty() {
        return Err(Error::invalid("no curves to compare"));
    }
    if !(trace_r0 > 0.0) {
        return Err(Error::invalid(format!("trace of R_0 must be positive, got {trace_r0}")));
    }
    let mut total = 0.0;
    for (a, b) in recovered.iter().zip(truth) {
        let w = a.space().weights();
        if b.values().len() != w.len() {
            return Err(Error::invalid("curves live on different grids"));
        }
        total += a.values().iter().zip(b.values()).zip(w).map(|((p, q), w)| w * (p - q).powi(2)).sum::<f64>();
    }
    Ok(total / (recovered.len() as f64 * trace_r0))
}

/// `(static / dynamic - 1) · 100`.
pub fn relative_gain(static_rmse_median: f64, dynamic_rmse_median: f64) -> Result<f64> {
    if !(dynamic_rmse_median > 0.0) {
        return Err(Error::invalid("dynamic error must be positive"));
    }
    Ok((static_rmse_median / dynamic_rmse_median - 1.0) * 100.0)
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let sd = if values.len() > 1 { values.std_dev() } else { 0.0 };
        Some(Spread { n: values.len(), mean: values.mean(), sd })
    }
}

/// Median with lower and upper quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut d = Data::new(values.to_vec());
        Some(Quartiles { n: values.len(), median: d.median(), q1: d.lower_quartile(), q3: d.upper_quartile() })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Least squares `log e = β₀ + β₁ log N^max + β₂ log T` over `(T, N^max, e)` cells.
pub fn log_log_regression(cells: &[(usize, usize, f64)]) -> Option<[f64; 3]> {
    let used: Vec<_> = cells.iter().filter(|(t, n, e)| *t > 0 && *n > 0 && *e > 0.0).collect();
    if used.len() < 3 {
        return None;
    }
    let x = DMatrix::from_fn(used.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => (used[i].1 as f64).ln(),
        _ => (used[i].0 as f64).ln(),
    });
    let y = DVector::from_iterator(used.len(), used.iter().map(|c| c.2.ln()));
    let beta = x.svd(true, true).solve(&y, 1e-12).ok()?;
    if beta.iter().all(|b| b.is_finite()) {
        Some([beta[0], beta[1], beta[2]])
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{interpolate_curve, SplineSpace};
    use crate::spectral::frequency_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kernels(freqs: &[f64], seed: u64) -> Vec<DMatrix<C64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        freqs
            .iter()
            .map(|_| DMatrix::from_fn(21, 21, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)))
            .collect()
    }

    #[test]
    fn spectral_rmse_examples() {
        let s = SplineSpace::standard();
        let f = frequency_grid(3);
        let truth = kernels(&f, 1);
        let w = s.weights();
        assert_eq!(spectral_rmse_kernels(&f, &truth, &truth, w).unwrap(), 0.0);
        let zero: Vec<_> = truth.iter().map(|k| k.map(|_| C64::new(0.0, 0.0))).collect();
        assert!((spectral_rmse_kernels(&f, &zero, &truth, w).unwrap() - 1.0).abs() < 1e-14);
        let scaled: Vec<_> = truth.iter().map(|k| k * C64::new(1.1, 0.0)).collect();
        assert!((spectral_rmse_kernels(&f, &scaled, &truth, w).unwrap() - 0.01).abs() < 1e-12);
        let phase = C64::from_polar(1.0, 0.7);
        let (pe, pt): (Vec<_>, Vec<_>) = scaled.iter().zip(&truth).map(|(a, b)| (a * phase, b * phase)).unzip();
        let r0 = spectral_rmse_kernels(&f, &scaled, &truth, w).unwrap();
        assert!((spectral_rmse_kernels(&f, &pe, &pt, w).unwrap() - r0).abs() < 1e-13);
        assert!(spectral_rmse_kernels(&f, &truth, &zero, w).is_err());
        assert!(spectral_rmse_kernels(&f[1..], &truth, &truth, w).is_err());
    }

    #[test]
    fn recovery_rmse_examples() {
        let s = SplineSpace::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth: Vec<Curve> = (0..5)
            .map(|_| interpolate_curve(&(0..21).map(|_| rng.random::<f64>()).collect::<Vec<_>>(), &s).unwrap())
            .collect();
        assert_eq!(recovery_rmse(&truth, &truth, 2.0).unwrap(), 0.0);
        let off: Vec<Curve> = truth
            .iter()
            .map(|c| interpolate_curve(&c.values().iter().map(|v| v + 0.3).collect::<Vec<_>>(), &s).unwrap())
            .collect();
        assert!((recovery_rmse(&off, &truth, 2.0).unwrap() - 0.09 / 2.0).abs() < 1e-12);
        let other: Vec<Curve> = truth.iter().rev().cloned().collect();
        let direct: f64 = other
            .iter()
            .zip(&truth)
            .map(|(a, b)| (0..21).map(|i| s.weights()[i] * (a.values()[i] - b.values()[i]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / (5.0 * 0.7);
        assert!((recovery_rmse(&other, &truth, 0.7).unwrap() - direct).abs() < 1e-14);
        assert!(recovery_rmse(&truth[1..], &truth, 1.0).is_err());
        assert!(recovery_rmse(&truth, &truth, 0.0).is_err());
    }

    #[test]
    fn gain_and_summaries() {
        assert_eq!(relative_gain(0.2, 0.2).unwrap(), 0.0);
        assert!((relative_gain(1.53, 1.0).unwrap() - 53.0).abs() < 1e-9);
        assert!(relative_gain(1.0, 0.0).is_err());
        let stat = [0.3, 0.1, 0.5, 0.2];
        let dynamic = [0.15, 0.05, 0.2, 0.1];
        let ms = Quartiles::of(&stat).unwrap().median;
        let md = Quartiles::of(&dynamic).unwrap().median;
        assert!((ms - 0.25).abs() < 1e-15);
        assert!((md - 0.125).abs() < 1e-15);
        assert!((relative_gain(ms, md).unwrap() - 100.0).abs() < 1e-9);
        let sp = Spread::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((sp.mean, sp.sd), (2.0, 1.0));
        assert!(Quartiles::of(&[]).is_none());
    }

    #[test]
    fn regression_recovers_exact_plane() {
        let cells: Vec<_> = [150usize, 300, 600]
            .iter()
            .flat_map(|&t| [5usize, 20].into_iter().map(move |n| (t, n, (1.98 - 0.32 * (n as f64).ln() - 0.57 * (t as f64).ln()).exp())))
            .collect();
        let b = log_log_regression(&cells).unwrap();
        assert!((b[0] - 1.98).abs() < 1e-9 && (b[1] + 0.32).abs() < 1e-9 && (b[2] + 0.57).abs() < 1e-9);
        assert!(log_log_regression(&cells[..2]).is_none());
    }
}
