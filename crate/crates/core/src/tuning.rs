//! Bandwidth selection by K-fold cross-validation over curves, and the
//! Bartlett span rule.
//!
//! Candidates are searched exhaustively on log-spaced grids. A candidate is
//! discarded when its smoother fails on any fold; ties (within a relative
//! 1e-9 of the minimum) go to the larger bandwidth.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::basis::SplineSpace;
use crate::dataset::SparseFtsDataset;
use crate::error::{Error, Result};
use crate::par;
use crate::simulate::substream;
use crate::smoothing::{
    estimate_autocov, estimate_mean, estimate_variance_diag, BandwidthSet, MeanEstimate, Residuals,
};

const TIE_TOL: f64 = 1e-9;
/// Losses below this fraction of the zero-predictor loss count as exact fits.
const EXACT_FIT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k_folds: usize,
    pub b_mu_grid: Vec<f64>,
    pub b_r_grid: Vec<f64>,
    pub b_v_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k_folds: 10,
            b_mu_grid: log_spaced(0.02, 0.5, 10),
            b_r_grid: log_spaced(0.05, 0.5, 10),
            b_v_grid: log_spaced(0.02, 0.5, 10),
            seed: 0,
        }
    }
}

impl CvConfig {
    pub fn with_seed(seed: u64) -> Self {
        CvConfig { seed, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::invalid("cross-validation needs at least 2 folds"));
        }
        for (name, g) in [("b_mu", &self.b_mu_grid), ("b_r", &self.b_r_grid), ("b_v", &self.b_v_grid)] {
            if g.is_empty() || g.iter().any(|b| !(*b > 0.0) || !b.is_finite()) || g.windows(2).any(|w| w[0] >= w[1])
            {
                return Err(Error::invalid(format!("{name} candidates must be positive and strictly increasing")));
            }
        }
        Ok(())
    }
}

/// `n` log-spaced points from `a` to `b` inclusive.
pub fn log_spaced(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    let mut v: Vec<f64> = (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect();
    v[0] = a;
    v[n - 1] = b;
    v
}

/// Fold of each curve: a seeded shuffle of `0..T` dealt round-robin.
pub fn fold_assignment(horizon: usize, k_folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..horizon).collect();
    order.shuffle(&mut substream(seed, "folds", 0));
    let mut fold = vec![0; horizon];
    for (pos, t) in order.into_iter().enumerate() {
        fold[t] = pos % k_folds;
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLoss {
    pub bandwidth: f64,
    /// Mean fold loss, `None` if the smoother failed on some fold.
    pub loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub selected: f64,
    pub losses: Vec<CandidateLoss>,
}

fn select(
    what: &str,
    data: &SparseFtsDataset,
    cfg: &CvConfig,
    grid: &[f64],
    zero_loss: f64,
    fold_loss: impl Fn(&SparseFtsDataset, &[bool], f64) -> Result<f64> + Sync,
) -> Result<CvSelection> {
    cfg.validate()?;
    let horizon = data.horizon();
    if horizon < cfg.k_folds {
        return Err(Error::invalid(format!("{} folds need at least as many curves (T = {horizon})", cfg.k_folds)));
    }
    let folds = fold_assignment(horizon, cfg.k_folds, cfg.seed);
    let k = cfg.k_folds;
    let results = par::map_range(grid.len() * k, |task| {
        let (c, f) = (task / k, task % k);
        let held: Vec<bool> = folds.iter().map(|&x| x == f).collect();
        fold_loss(&data.without(&held), &held, grid[c])
    });
    let losses: Vec<CandidateLoss> = results
        .chunks(k)
        .zip(grid)
        .map(|(chunk, &bandwidth)| match chunk.iter().find_map(|r| r.as_ref().err()) {
            Some(e) => CandidateLoss { bandwidth, loss: None, error: Some(e.to_string()) },
            None => {
                let total: f64 = chunk.iter().map(|r| *r.as_ref().unwrap()).sum();
                CandidateLoss { bandwidth, loss: Some(total / k as f64), error: None }
            }
        })
        .collect();
    let best = losses.iter().filter_map(|c| c.loss).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        let detail: Vec<String> =
            losses.iter().map(|c| format!("{:.4}: {}", c.bandwidth, c.error.as_deref().unwrap_or("non-finite loss"))).collect();
        return Err(Error::InsufficientData(format!("no {what} candidate could be fitted ({})", detail.join("; "))));
    }
    let selected = losses
        .iter()
        .filter(|c| c.loss.is_some_and(|l| l <= best + TIE_TOL * best.max(EXACT_FIT * zero_loss)))
        .map(|c| c.bandwidth)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CvSelection { selected, losses })
}

/// Selects `b_mu` by held-out squared prediction error.
pub fn select_b_mu(data: &SparseFtsDataset, cfg: &CvConfig, space: &Arc<SplineSpace>) -> Result<CvSelection> {
    let zero: f64 = data.records().map(|(_, _, y)| y * y).sum::<f64>() / cfg.k_folds as f64;
    select("b_mu", data, cfg, &cfg.b_mu_grid, zero, |train, held, b| {
        let m = estimate_mean(train, b, space)?;
        Ok(held_out(data, held)
            .flat_map(|c| c.iter())
            .map(|o| (o.y - m.eval(o.x)).powi(2))
            .sum())
    })
}

/// Selects `b_r` by the held-out error of off-diagonal within-curve raw
/// covariances against the lag-0 surface.
pub fn select_b_r(
    data: &SparseFtsDataset,
    mean: &MeanEstimate,
    cfg: &CvConfig,
    space: &Arc<SplineSpace>,
) -> Result<CvSelection> {
    let res = Residuals::new(data, mean);
    let basis = space.basis();
    let zero: f64 = res
        .curves
        .iter()
        .map(|c| c.iter().map(|a| c.iter().map(|b| (a.1 * b.1).powi(2)).sum::<f64>()).sum::<f64>())
        .sum::<f64>()
        / cfg.k_folds as f64;
    select("b_r", data, cfg, &cfg.b_r_grid, zero, |train, held, b| {
        let r0 = estimate_autocov(train, mean, 0, b, space)?.surface;
        let mut loss = 0.0;
        for t in (0..held.len()).filter(|&t| held[t]) {
            let c = res.curve(t);
            let rows: Vec<_> = c.iter().map(|&(x, _)| basis.row(x)).collect();
            for (i, &(_, ri)) in c.iter().enumerate() {
                for (j, &(_, rj)) in c.iter().enumerate() {
                    if i != j {
                        loss += (ri * rj - r0.eval_rows(&rows[i], &rows[j])).powi(2);
                    }
                }
            }
        }
        Ok(loss)
    })
}

/// Selects `b_v` by the held-out error of squared residuals against `V̂`.
pub fn select_b_v(
    data: &SparseFtsDataset,
    mean: &MeanEstimate,
    cfg: &CvConfig,
    space: &Arc<SplineSpace>,
) -> Result<CvSelection> {
    let res = Residuals::new(data, mean);
    let zero: f64 = res.curves.iter().flatten().map(|&(_, r)| r.powi(4)).sum::<f64>() / cfg.k_folds as f64;
    select("b_v", data, cfg, &cfg.b_v_grid, zero, |train, held, b| {
        let v = estimate_variance_diag(train, mean, b, space)?;
        let mut loss = 0.0;
        for t in (0..held.len()).filter(|&t| held[t]) {
            for &(x, r) in res.curve(t) {
                loss += (r * r - v.eval(x)).powi(2);
            }
        }
        Ok(loss)
    })
}

fn held_out<'a>(data: &'a SparseFtsDataset, held: &'a [bool]) -> impl Iterator<Item = &'a Vec<crate::dataset::Observation>> {
    data.curves().iter().zip(held).filter(|(_, h)| **h).map(|(c, _)| c)
}

/// All three selections in sequence (the mean is refitted on all data first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub bandwidths: BandwidthSet,
    pub b_mu: CvSelection,
    pub b_r: CvSelection,
    pub b_v: CvSelection,
}

pub fn tune_bandwidths(data: &SparseFtsDataset, cfg: &CvConfig, space: &Arc<SplineSpace>) -> Result<TuningReport> {
    let b_mu = select_b_mu(data, cfg, space)?;
    let mean = estimate_mean(data, b_mu.selected, space)?;
    let b_r = select_b_r(data, &mean, cfg, space)?;
    let b_v = select_b_v(data, &mean, cfg, space)?;
    Ok(TuningReport { bandwidths: BandwidthSet::new(b_mu.selected, b_r.selected, b_v.selected)?, b_mu, b_r, b_v })
}

/// `L = ⌊T^{1/3} n̄^{1/4}⌋`, at least 1.
pub fn bartlett_span_rule(horizon: usize, n_bar: f64) -> usize {
    if horizon == 0 || !(n_bar > 0.0) {
        return 1;
    }
    let v = (horizon as f64).cbrt() * n_bar.sqrt().sqrt();
    ((v + 1e-9).floor() as usize).max(1)
}
