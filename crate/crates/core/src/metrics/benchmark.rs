use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{log_log_regression, recovery_rmse, relative_gain, spectral_rmse, Quartiles, Spread, SIGMA_FILTER};
use crate::basis::{Curve, SplineSpace};
use crate::error::{Error, Result};
use crate::par;
use crate::pipeline::{fit_model, FitConfig, FittedModel};
use crate::recovery::predict_all;
use crate::simulate::{
    derive_seed, benchmark_process, simulate_dataset, DiscreteProcess, ProcessName, SamplingSpec, SimulatedData,
};
use crate::smoothing::BandwidthSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub process: ProcessName,
    pub horizon: usize,
    pub n_max: usize,
    pub reps: usize,
    pub seed: u64,
    /// `tr R_0 / σ²`.
    pub snr: f64,
    /// Also run dynamic and static recovery.
    pub recovery: bool,
}

impl BenchmarkConfig {
    pub fn new(process: ProcessName, horizon: usize, n_max: usize, reps: usize, seed: u64) -> Self {
        BenchmarkConfig { process, horizon, n_max, reps, seed, snr: 20.0, recovery: true }
    }

    /// Seed of replicate `rep`; also the simulation and fold seed of that replicate.
    pub fn replicate_seed(&self, rep: usize) -> u64 {
        derive_seed(self.seed, "replicate", rep as u64)
    }
}

/// All intermediate results of one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateRun {
    pub seed: u64,
    pub sim: SimulatedData,
    pub fit: FittedModel,
    pub spectral_rmse: f64,
    pub dynamic: Option<Vec<Curve>>,
    pub static_: Option<Vec<Curve>>,
    pub dynamic_rmse: Option<f64>,
    pub static_rmse: Option<f64>,
}

/// Simulates with `seed`, fits with folds seeded by `seed`, and scores.
pub fn run_replicate(
    process: &DiscreteProcess,
    horizon: usize,
    n_max: usize,
    seed: u64,
    snr: f64,
    recovery: bool,
) -> Result<ReplicateRun> {
    let space = process.space();
    let sim = simulate_dataset(process, &SamplingSpec { horizon, n_max, seed }, snr)?;
    let fit = fit_model(&sim.data, &FitConfig::seeded(seed), space)?;
    let truth = process.true_spectral_density(fit.spectral.freqs())?;
    let spectral = spectral_rmse(&fit.spectral, &truth)?;
    let (mut dynamic, mut static_, mut dynamic_rmse, mut static_rmse) = (None, None, None, None);
    if recovery {
        let tr = process.trace_r0();
        let d = predict_all(&sim.data, &fit.model)?;
        let s = predict_all(&sim.data, &fit.static_model)?;
        dynamic_rmse = Some(recovery_rmse(&d, &sim.path, tr)?);
        static_rmse = Some(recovery_rmse(&s, &sim.path, tr)?);
        dynamic = Some(d);
        static_ = Some(s);
    }
    Ok(ReplicateRun { seed, sim, fit, spectral_rmse: spectral, dynamic, static_, dynamic_rmse, static_rmse })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub rep: usize,
    pub seed: u64,
    pub span: usize,
    pub bandwidths: BandwidthSet,
    pub sigma2_hat: f64,
    pub spectral_rmse: f64,
    pub dynamic_rmse: Option<f64>,
    pub static_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub rep: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub replicates: Vec<ReplicateSummary>,
    pub failures: Vec<ReplicateFailure>,
    /// Mean and standard deviation of the spectral error.
    pub spectral: Option<Spread>,
    /// Replicates with `σ̂ > 0.05` entering the recovery summaries.
    pub recovery_used: usize,
    pub dynamic: Option<Quartiles>,
    pub static_: Option<Quartiles>,
    /// Relative gain of dynamic over static recovery in percent.
    pub gain_percent: Option<f64>,
}

pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if cfg.reps < 1 {
        return Err(Error::invalid("at least one replicate is required"));
    }
    let space = SplineSpace::standard();
    let process = DiscreteProcess::new(&benchmark_process(cfg.process), &space)?;
    let outcomes = par::map_range(cfg.reps, |rep| {
        let seed = cfg.replicate_seed(rep);
        run_replicate(&process, cfg.horizon, cfg.n_max, seed, cfg.snr, cfg.recovery).map(|r| ReplicateSummary {
            rep,
            seed,
            span: r.fit.span,
            bandwidths: r.fit.bandwidths,
            sigma2_hat: r.fit.noise.sigma2,
            spectral_rmse: r.spectral_rmse,
            dynamic_rmse: r.dynamic_rmse,
            static_rmse: r.static_rmse,
        })
    });
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(s) => replicates.push(s),
            Err(e) => {
                log::warn!("replicate {rep} failed: {e}");
                failures.push(ReplicateFailure { rep, seed: cfg.replicate_seed(rep), error: e.to_string() });
            }
        }
    }
    let spectral = Spread::of(&replicates.iter().map(|r| r.spectral_rmse).collect::<Vec<_>>());
    let kept: Vec<&ReplicateSummary> = replicates.iter().filter(|r| r.sigma2_hat.sqrt() > SIGMA_FILTER).collect();
    let dyn_v: Vec<f64> = kept.iter().filter_map(|r| r.dynamic_rmse).collect();
    let sta_v: Vec<f64> = kept.iter().filter_map(|r| r.static_rmse).collect();
    let dynamic = Quartiles::of(&dyn_v);
    let static_ = Quartiles::of(&sta_v);
    let gain_percent = match (dynamic, static_) {
        (Some(d), Some(s)) => relative_gain(s.median, d.median).ok(),
        _ => None,
    };
    Ok(BenchmarkReport {
        config: cfg.clone(),
        replicates,
        failures,
        spectral,
        recovery_used: dyn_v.len(),
        dynamic,
        static_,
        gain_percent,
    })
}

impl BenchmarkReport {
    /// Per-replicate rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rep,seed,span,b_mu,b_r,b_v,sigma2_hat,spectral_rmse,dynamic_rmse,static_rmse")?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.replicates {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.rep,
                r.seed,
                r.span,
                r.bandwidths.b_mu,
                r.bandwidths.b_r,
                r.bandwidths.b_v,
                r.sigma2_hat,
                r.spectral_rmse,
                opt(r.dynamic_rmse),
                opt(r.static_rmse)
            )?;
        }
        Ok(())
    }
}

/// Benchmark cells over `T × N^max` with the log-log regression of mean
/// spectral error on the sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub process: ProcessName,
    pub cells: Vec<BenchmarkReport>,
    /// `(β₀, β₁, β₂)` for `log e = β₀ + β₁ log N^max + β₂ log T`.
    pub regression: Option<[f64; 3]>,
}

pub fn run_benchmark_grid(
    process: ProcessName,
    horizons: &[usize],
    n_maxes: &[usize],
    reps: usize,
    seed: u64,
    snr: f64,
    recovery: bool,
) -> Result<GridReport> {
    let mut cells = Vec::new();
    for &t in horizons {
        for &n in n_maxes {
            let cell_seed = derive_seed(seed, &format!("cell-{t}-{n}"), 0);
            let cfg = BenchmarkConfig { snr, recovery, ..BenchmarkConfig::new(process, t, n, reps, cell_seed) };
            cells.push(run_benchmark(&cfg)?);
        }
    }
    let points: Vec<_> = cells
        .iter()
        .filter_map(|c| c.spectral.map(|s| (c.config.horizon, c.config.n_max, s.mean)))
        .collect();
    Ok(GridReport { process, regression: log_log_regression(&points), cells })
}

impl GridReport {
    /// One row per cell: sizes, spectral mean/sd, recovery medians/IQR and gain.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "T,n_max,reps,failures,spectral_mean,spectral_sd,dynamic_median,dynamic_iqr,static_median,static_iqr,gain_percent,beta0,beta1,beta2"
        )?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let beta = self.regression.map(|b| b.map(|v| v.to_string())).unwrap_or_default();
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.config.horizon,
                c.config.n_max,
                c.config.reps,
                c.failures.len(),
                opt(c.spectral.map(|s| s.mean)),
                opt(c.spectral.map(|s| s.sd)),
                opt(c.dynamic.map(|q| q.median)),
                opt(c.dynamic.map(|q| q.iqr())),
                opt(c.static_.map(|q| q.median)),
                opt(c.static_.map(|q| q.iqr())),
                opt(c.gain_percent),
                beta[0],
                beta[1],
                beta[2]
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_replicate_is_deterministic() {
        let cfg = BenchmarkConfig { reps: 1, ..BenchmarkConfig::new(ProcessName::Fma2, 40, 6, 1, 7) };
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replicates.len() + a.failures.len(), 1);
        if let Some(r) = a.replicates.first() {
            assert!(r.spectral_rmse > 0.0 && r.dynamic_rmse.unwrap() > 0.0);
        }
    }

    #[test]
    fn zero_reps_rejected() {
        assert!(run_benchmark(&BenchmarkConfig::new(ProcessName::Fma2, 10, 5, 0, 1)).is_err());
    }
}
