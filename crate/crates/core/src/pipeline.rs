//! End-to-end model fitting shared by the command-line tool and the
//! benchmark harness.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{interpolate_curve, interpolate_surface, CurveRecord, SplineSpace, Surface, SurfaceRecord};
use crate::dataset::{DomainMetric, SparseFtsDataset};
use crate::error::{Error, Result};
use crate::par;
use crate::recovery::{ModelKind, SecondOrderModel};
use crate::smoothing::{
    estimate_mean, estimate_noise_variance, local_linear_1d, with_widening, BandwidthSet, MeanEstimate,
    NoiseVarianceEstimate,
};
use crate::spectral::{
    estimate_spectral_density, frequency_grid, invert_to_autocov, precompute_lag_sums,
    truncate_negative_eigenvalues, AutocovSequence, SpectralDensityEstimate,
};
use crate::tuning::{bartlett_span_rule, tune_bandwidths, CvConfig, TuningReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthChoice {
    Fixed(BandwidthSet),
    CrossValidated(CvConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanChoice {
    /// `⌊T^{1/3} n̄^{1/4}⌋` with `n̄` the mean count per curve.
    Rule,
    Fixed(usize),
}

/// Deterministic seasonal term `s_t` with the given period in time steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonalConfig {
    pub period: usize,
    /// Bandwidth on the phase scale `[0, 1)`.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub bandwidths: BandwidthChoice,
    pub span: SpanChoice,
    /// Project spectral kernels onto the positive semidefinite cone.
    pub truncate: bool,
    pub seasonal: Option<SeasonalConfig>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            bandwidths: BandwidthChoice::CrossValidated(CvConfig::default()),
            span: SpanChoice::Rule,
            truncate: true,
            seasonal: None,
        }
    }
}

impl FitConfig {
    /// Cross-validated bandwidths with folds drawn from `seed` and the span rule.
    pub fn seeded(seed: u64) -> Self {
        FitConfig { bandwidths: BandwidthChoice::CrossValidated(CvConfig::with_seed(seed)), ..Default::default() }
    }
}

/// Seasonal adjustment `s_t`, a circular local-linear smooth of centered
/// measurements over the phase of `t` within the period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalAdjustment {
    pub period: usize,
    pub bandwidth: f64,
    /// `s` at phases `0, 1/period, …`.
    pub values: Vec<f64>,
}

impl SeasonalAdjustment {
    /// `s_t` for a 1-based time index.
    pub fn at(&self, t: usize) -> f64 {
        self.values[(t.max(1) - 1) % self.period]
    }

    /// Subtracts `s_t` from every measurement.
    pub fn remove(&self, data: &SparseFtsDataset) -> SparseFtsDataset {
        data.map_values(|t0, _, y| y - self.at(t0 + 1))
    }
}

pub fn estimate_seasonal(
    data: &SparseFtsDataset,
    mean: &MeanEstimate,
    cfg: &SeasonalConfig,
) -> Result<SeasonalAdjustment> {
    if cfg.period < 2 {
        return Err(Error::invalid("seasonal period must be at least 2"));
    }
    if !(cfg.bandwidth > 0.0) {
        return Err(Error::invalid("seasonal bandwidth must be positive"));
    }
    let p = cfg.period as f64;
    let points: Vec<(f64, f64)> = data
        .records()
        .map(|(t, x, y)| (((t - 1) % cfg.period) as f64 / p, y - mean.eval(x)))
        .collect();
    let values = par::try_map_range(cfg.period, |k| {
        let at = k as f64 / p;
        with_widening(cfg.bandwidth, |b| local_linear_1d(&points, at, b, DomainMetric::Circular))
            .map(|(v, _)| v)
            .ok_or_else(|| Error::InsufficientData(format!("no data near seasonal phase {k}")))
    })?;
    Ok(SeasonalAdjustment { period: cfg.period, bandwidth: cfg.bandwidth, values })
}

/// Everything estimated from one dataset.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub bandwidths: BandwidthSet,
    pub tuning: Option<TuningReport>,
    pub mean: MeanEstimate,
    pub seasonal: Option<SeasonalAdjustment>,
    pub noise: NoiseVarianceEstimate,
    pub span: usize,
    /// Spectral estimate (PSD-projected when truncation is on).
    pub spectral: SpectralDensityEstimate,
    /// Dynamic model with lags `0..L`.
    pub model: SecondOrderModel,
    /// Model refitted with `L = 1`.
    pub static_model: SecondOrderModel,
}

impl FittedModel {
    /// The dataset the second-order model refers to (seasonality removed).
    pub fn working_data(&self, data: &SparseFtsDataset) -> SparseFtsDataset {
        match &self.seasonal {
            Some(s) => s.remove(data),
            None => data.clone(),
        }
    }
}

pub fn resolve_span(data: &SparseFtsDataset, choice: SpanChoice) -> Result<usize> {
    let t = data.horizon();
    let l = match choice {
        SpanChoice::Rule => bartlett_span_rule(t, data.mean_count()),
        SpanChoice::Fixed(l) => l,
    };
    if l < 1 || l > t {
        return Err(Error::invalid(format!("span {l} must lie in 1..={t}")));
    }
    Ok(l)
}

/// Spectral estimate at span `L` and the autocovariances it implies.
pub fn spectral_model(
    data: &SparseFtsDataset,
    mean: &MeanEstimate,
    sigma2: f64,
    span: usize,
    b_r: f64,
    truncate: bool,
    space: &Arc<SplineSpace>,
) -> Result<(SpectralDensityEstimate, SecondOrderModel)> {
    let pre = precompute_lag_sums(data, mean, span, b_r, space)?;
    let mut est = estimate_spectral_density(&pre, &frequency_grid(span))?;
    if truncate {
        est = truncate_negative_eigenvalues(&est)?;
    }
    let autocov = invert_to_autocov(&est, span)?;
    let kind = if span == 1 { ModelKind::Static } else { ModelKind::Dynamic };
    let model = SecondOrderModel::new(mean.curve.clone(), sigma2, autocov, span, kind)?;
    Ok((est, model))
}

pub fn fit_model(data: &SparseFtsDataset, cfg: &FitConfig, space: &Arc<SplineSpace>) -> Result<FittedModel> {
    let (bandwidths, tuning) = match &cfg.bandwidths {
        BandwidthChoice::Fixed(b) => (*b, None),
        BandwidthChoice::CrossValidated(cv) => {
            let report = tune_bandwidths(data, cv, space)?;
            (report.bandwidths, Some(report))
        }
    };
    let mean = estimate_mean(data, bandwidths.b_mu, space)?;
    let (seasonal, work) = match &cfg.seasonal {
        Some(sc) => {
            let s = estimate_seasonal(data, &mean, sc)?;
            let work = s.remove(data);
            (Some(s), work)
        }
        None => (None, data.clone()),
    };
    let noise = estimate_noise_variance(&work, &mean, bandwidths.b_v, bandwidths.b_r, space)?;
    let span = resolve_span(&work, cfg.span)?;
    let (spectral, model) = spectral_model(&work, &mean, noise.sigma2, span, bandwidths.b_r, cfg.truncate, space)?;
    let static_model = if span == 1 {
        model.static_version()
    } else {
        spectral_model(&work, &mean, noise.sigma2, 1, bandwidths.b_r, cfg.truncate, space)?.1
    };
    log::info!(
        "fitted T = {}, L = {span}, b = ({:.4}, {:.4}, {:.4}), sigma2 = {:.5}",
        data.horizon(),
        bandwidths.b_mu,
        bandwidths.b_r,
        bandwidths.b_v,
        noise.sigma2
    );
    Ok(FittedModel { bandwidths, tuning, mean, seasonal, noise, span, spectral, model, static_model })
}

/// JSON form of a fitted model; grid values round-trip exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub bandwidths: BandwidthSet,
    pub span: usize,
    pub sigma2: f64,
    pub mean: CurveRecord,
    /// Lags `0..L` of the dynamic model.
    pub autocov: Vec<SurfaceRecord>,
    /// Lag 0 of the model refitted with `L = 1`.
    pub static_autocov: SurfaceRecord,
    pub seasonal: Option<SeasonalAdjustment>,
}

impl FittedModel {
    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            bandwidths: self.bandwidths,
            span: self.span,
            sigma2: self.noise.sigma2,
            mean: self.mean.curve.to_record(),
            autocov: self.model.autocov.surfaces().iter().map(|s| s.to_record()).collect(),
            static_autocov: self.static_model.autocov.surfaces()[0].to_record(),
            seasonal: self.seasonal.clone(),
        }
    }
}

impl ModelFile {
    fn check_grid(&self, grid: &[f64], space: &Arc<SplineSpace>) -> Result<()> {
        if grid != space.grid() {
            return Err(Error::invalid("model file was written on a different grid"));
        }
        Ok(())
    }

    fn surface(&self, r: &SurfaceRecord, space: &Arc<SplineSpace>) -> Result<Surface> {
        self.check_grid(&r.grid, space)?;
        interpolate_surface(r.values_matrix()?, space)
    }

    /// Dynamic and static models.
    pub fn models(&self, space: &Arc<SplineSpace>) -> Result<(SecondOrderModel, SecondOrderModel)> {
        self.check_grid(&self.mean.grid, space)?;
        let mean = interpolate_curve(&self.mean.values, space)?;
        let lags = self.autocov.iter().map(|r| self.surface(r, space)).collect::<Result<Vec<_>>>()?;
        let kind = if self.span == 1 { ModelKind::Static } else { ModelKind::Dynamic };
        let dynamic = SecondOrderModel::new(mean.clone(), self.sigma2, AutocovSequence::new(lags)?, self.span, kind)?;
        let s0 = self.surface(&self.static_autocov, space)?;
        let stat = SecondOrderModel::new(mean, self.sigma2, AutocovSequence::new(vec![s0])?, 1, ModelKind::Static)?;
        Ok((dynamic, stat))
    }
}
