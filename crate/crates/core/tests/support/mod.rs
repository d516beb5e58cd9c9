//! Strategies and property checks shared by the property tests and the
//! acceptance harness.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use sparse_fts::recovery::{build_stacked_system, SecondOrderModel};
use sparse_fts::simulate::{benchmark_process, DiscreteProcess, ProcessName};
use sparse_fts::smoothing::{estimate_autocov, estimate_mean};
use sparse_fts::spectral::{
    estimate_spectral_density, frequency_grid, invert_to_autocov, precompute_lag_sums,
    truncate_negative_eigenvalues, C64,
};
use sparse_fts::{Error, SparseFtsDataset, SplineSpace};

/// Tolerance for identities that hold by construction, relative to the largest entry.
pub const EXACT: f64 = 1e-10;
/// Smallest admissible weighted eigenvalue after truncation, relative to the largest.
pub const PSD_TOL: f64 = 1e-9;

pub fn space() -> Arc<SplineSpace> {
    SplineSpace::standard()
}

/// Datasets with `T` in 4..=8 and 4..=9 points per curve.
pub fn dataset() -> impl Strategy<Value = SparseFtsDataset> {
    (4usize..=8)
        .prop_flat_map(|t| prop::collection::vec(prop::collection::vec((0.0f64..=1.0, -3.0f64..3.0), 4..=9), t))
        .prop_map(|curves| {
            let t = curves.len();
            let recs =
                curves.into_iter().enumerate().flat_map(|(i, c)| c.into_iter().map(move |(x, y)| (i + 1, x, y)));
            SparseFtsDataset::new(t, recs).unwrap()
        })
}

pub fn weighted_min_eig(f: &DMatrix<C64>, w: &[f64]) -> (f64, f64) {
    let sq: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let a = DMatrix::from_fn(f.nrows(), f.ncols(), |i, j| f[(i, j)] * (sq[i] * sq[j]));
    let a = (&a + a.adjoint()) * C64::new(0.5, 0.0);
    let e = a.symmetric_eigen().eigenvalues;
    (e.min(), e.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

fn max_norm(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.norm()))
}

/// Hermitian and conjugate-frequency symmetry, PSD after truncation and
/// transposition of negative lags after inversion.
pub fn spectral_symmetries(data: &SparseFtsDataset, span: usize, b_r: f64) -> Result<(), TestCaseError> {
    let s = space();
    let span = span.min(data.horizon());
    let mean = estimate_mean(data, 0.4, &s).unwrap();
    let pre = precompute_lag_sums(data, &mean, span, b_r, &s).unwrap();
    // Designs with no usable pairs near some node have no estimate.
    let est = estimate_spectral_density(&pre, &frequency_grid(span));
    prop_assume!(!matches!(est, Err(Error::NumericFailure(_))));
    let est = est.unwrap();
    let f = est.kernels();
    let m = f.len() / 2;
    let scale = f.iter().map(max_norm).fold(1.0f64, f64::max);
    for k in 0..f.len() {
        let herm = max_norm(&(&f[k] - f[k].adjoint()));
        prop_assert!(herm <= EXACT * scale, "hermitian residue {herm}");
        let conj = max_norm(&(&f[2 * m - k] - f[k].map(|v| v.conj())));
        prop_assert!(conj <= EXACT * scale, "conjugate-frequency residue {conj}");
    }
    let tr = truncate_negative_eigenvalues(&est).unwrap();
    let w = s.weights();
    for k in (0..tr.kernels().len()).step_by(16) {
        let (min, top) = weighted_min_eig(tr.kernel(k), w);
        prop_assert!(min >= -PSD_TOL * top.max(1e-300), "eigenvalue {min} of {top}");
    }
    let ac = invert_to_autocov(&tr, span).unwrap();
    for h in 0..span as isize {
        let a = ac.get(-h).unwrap();
        let b = ac.get(h).unwrap().transpose();
        prop_assert_eq!(a.values(), b.values());
    }
    let r0 = ac.get(0).unwrap();
    let asym = (r0.values() - r0.values().transpose()).amax();
    prop_assert!(asym <= EXACT * r0.values().amax().max(1.0));
    Ok(())
}

/// The lag-`h` estimate of the time-reversed series is the transpose.
pub fn lag_transpose(data: &SparseFtsDataset, h: usize, b_r: f64) -> Result<(), TestCaseError> {
    let s = space();
    let h = h.min(data.horizon() - 1);
    let mean = estimate_mean(data, 0.4, &s).unwrap();
    let fwd = estimate_autocov(data, &mean, h, b_r, &s);
    let rev = estimate_autocov(&data.time_reversed(), &mean, h, b_r, &s);
    match (fwd, rev) {
        (Ok(a), Ok(b)) => {
            let d = (a.surface.values() - b.surface.values().transpose()).amax();
            prop_assert!(d <= 1e-9 * a.surface.values().amax().max(1.0), "transpose residue {d}");
        }
        (Err(_), Err(_)) => {}
        (a, b) => prop_assert!(false, "one direction failed: {:?} / {:?}", a.err(), b.err()),
    }
    Ok(())
}

/// Observation covariance symmetric; conditional covariance PSD and below the prior.
pub fn recovery_covariances(data: &SparseFtsDataset, sigma2: f64, at: usize) -> Result<(), TestCaseError> {
    let s = space();
    let p = DiscreteProcess::new(&benchmark_process(ProcessName::Fma2), &s).unwrap();
    let truth = SecondOrderModel::from_process(&p, sigma2, 3).unwrap();
    let at = at.clamp(1, data.horizon());
    let sys = build_stacked_system(data, &truth, at, 2).unwrap();
    prop_assert_eq!((&sys.obs_cov - sys.obs_cov.transpose()).amax(), 0.0);
    let (_, cov) = sys.condition().unwrap();
    for i in 0..cov.nrows() {
        prop_assert!(cov[(i, i)] <= sys.prior_cov[(i, i)] + 1e-9 * sys.prior_cov[(i, i)].abs().max(1.0));
    }
    let (min, top) = weighted_min_eig(&cov.map(|v| C64::new(v, 0.0)), s.weights());
    prop_assert!(min >= -1e-8 * top.max(1.0), "conditional covariance eigenvalue {min}");
    Ok(())
}

/// Hermitian and conjugate-frequency symmetry of the true spectral densities.
pub fn true_spectral_symmetries(omega: f64, which: usize) -> Result<(), TestCaseError> {
    let s = space();
    let p = DiscreteProcess::new(&benchmark_process(ProcessName::ALL[which]), &s).unwrap();
    let f = p.spectral_matrix(omega).unwrap();
    let g = p.spectral_matrix(-omega).unwrap();
    let scale = max_norm(&f).max(1.0);
    prop_assert!(max_norm(&(&f - f.adjoint())) <= EXACT * scale);
    prop_assert!(max_norm(&(&g - f.map(|v| v.conj()))) <= EXACT * scale);
    Ok(())
}
