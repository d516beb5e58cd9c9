use std::io::Write;
use std::path::Path;

use anyhow::Context;
use serde_json::json;
use sparse_fts::metrics::{run_benchmark, run_benchmark_grid, BenchmarkConfig};
use sparse_fts::pipeline::{fit_model, BandwidthChoice, FitConfig, ModelFile, SeasonalConfig, SpanChoice};
use sparse_fts::recovery::{forecast, recover_window, McConfig, RecoveryResult, DEFAULT_REFINED_GRID};
use sparse_fts::simulate::{benchmark_process, simulate_dataset, DiscreteProcess, SamplingSpec};
use sparse_fts::smoothing::{estimate_mean, BandwidthSet};
use sparse_fts::spectral::{frequency_grid, precompute_diagonal_lag_sums, trace_spectrum, write_chart_csv};
use sparse_fts::tuning::{tune_bandwidths, CvConfig};
use sparse_fts::{par, DomainMetric, Error, SparseFtsDataset, SplineSpace};

use crate::output::Output;
use crate::{
    BandwidthArgs, BenchmarkArgs, Cli, Command, DataArgs, EstimateArgs, ForecastArgs, PeriodogramArgs, RecoverArgs,
    SimulateArgs, TuneArgs,
};

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let out = Output::new(&cli.out_dir)?;
    match &cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Tune(a) => tune(a, out),
        Command::Estimate(a) => estimate(a, out),
        Command::Periodogram(a) => periodogram(a, out),
        Command::Recover(a) => recover(a, out),
        Command::Forecast(a) => forecast_cmd(a, out),
        Command::Benchmark(a) => benchmark(a, out),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

fn load_data(a: &DataArgs) -> anyhow::Result<SparseFtsDataset> {
    let data = SparseFtsDataset::read_csv_path(&a.input, a.domain, a.horizon)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let metric = if a.circular { DomainMetric::Circular } else { DomainMetric::Linear };
    log::info!("read {} records over T = {}", data.total_records(), data.horizon());
    Ok(data.with_metric(metric))
}

fn bandwidth_choice(b: &BandwidthArgs, seed: u64) -> anyhow::Result<BandwidthChoice> {
    Ok(match (b.b_mu, b.b_r, b.b_v) {
        (Some(m), Some(r), Some(v)) => BandwidthChoice::Fixed(BandwidthSet::new(m, r, v)?),
        (None, None, None) => {
            BandwidthChoice::CrossValidated(CvConfig { k_folds: b.folds, ..CvConfig::with_seed(seed) })
        }
        _ => return Err(usage("give all of --b-mu, --b-r, --b-v or none of them")),
    })
}

fn load_model(path: &Path) -> anyhow::Result<ModelFile> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let model: ModelFile = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(model)
}

fn simulate(a: &SimulateArgs, mut out: Output) -> anyhow::Result<()> {
    let space = SplineSpace::standard();
    let process = DiscreteProcess::new(&benchmark_process(a.process), &space)?;
    let spec = SamplingSpec { horizon: a.horizon, n_max: a.n_max, seed: a.seed };
    let sim = simulate_dataset(&process, &spec, a.snr)?;
    out.write("observations.csv", |w| sim.data.write_csv(w))?;
    if a.paths {
        out.write("paths.csv", |w| {
            writeln!(w, "t,x,value")?;
            for (t, c) in sim.path.iter().enumerate() {
                for (x, v) in space.grid().iter().zip(c.values()) {
                    writeln!(w, "{},{x},{v}", t + 1)?;
                }
            }
            Ok(())
        })?;
    }
    let truth = json!({
        "process": a.process,
        "seed": a.seed,
        "horizon": a.horizon,
        "n_max": a.n_max,
        "snr": a.snr,
        "sigma2": sim.sigma2,
        "trace_r0": process.trace_r0(),
        "records": sim.data.total_records(),
    });
    out.write_json("truth.json", &truth)?;
    out.finish("simulate", a, &[], truth)
}

fn tune(a: &TuneArgs, mut out: Output) -> anyhow::Result<()> {
    let data = load_data(&a.data)?;
    let cfg = CvConfig { k_folds: a.folds, ..CvConfig::with_seed(a.seed) };
    let report = tune_bandwidths(&data, &cfg, &SplineSpace::standard())?;
    let mut stdout = std::io::stdout().lock();
    for (name, sel) in [("b_mu", &report.b_mu), ("b_r", &report.b_r), ("b_v", &report.b_v)] {
        writeln!(stdout, "{name}")?;
        for c in &sel.losses {
            let mark = if c.bandwidth == sel.selected { " *" } else { "" };
            match (&c.loss, &c.error) {
                (Some(l), _) => writeln!(stdout, "  {:>10.5}  {l:.6e}{mark}", c.bandwidth)?,
                (None, e) => writeln!(stdout, "  {:>10.5}  failed: {}", c.bandwidth, e.as_deref().unwrap_or("?"))?,
            }
        }
    }
    out.write_json("tuning.json", &report)?;
    out.finish("tune", a, &[&a.data.input], json!({ "bandwidths": report.bandwidths }))
}

fn estimate(a: &EstimateArgs, mut out: Output) -> anyhow::Result<()> {
    let data = load_data(&a.data)?;
    let span = match a.span.as_str() {
        "auto" => SpanChoice::Rule,
        s => SpanChoice::Fixed(s.parse().map_err(|_| usage(format!("--span must be `auto` or an integer, got {s}")))?),
    };
    let seasonal = match (a.seasonal_period, a.seasonal_bandwidth) {
        (Some(period), Some(bandwidth)) => Some(SeasonalConfig { period, bandwidth }),
        _ => None,
    };
    let cfg = FitConfig { bandwidths: bandwidth_choice(&a.bandwidths, a.seed)?, span, truncate: !a.no_truncate, seasonal };
    let space = SplineSpace::standard();
    let fit = fit_model(&data, &cfg, &space)?;
    out.write("mean.csv", |w| fit.mean.curve.write_csv(w))?;
    out.write("variance.csv", |w| {
        writeln!(w, "x,v_diag,ridge_free_diag")?;
        for (i, x) in space.grid().iter().enumerate() {
            writeln!(w, "{x},{},{}", fit.noise.v_diag.values()[i], fit.noise.ridge_free_diag.values()[i])?;
        }
        Ok(())
    })?;
    out.write("spectral.csv", |w| fit.spectral.write_csv(w))?;
    for (h, s) in fit.model.autocov.surfaces().iter().enumerate() {
        out.write(&format!("autocov_lag{h}.csv"), |w| s.write_csv(w))?;
    }
    if let Some(s) = &fit.seasonal {
        out.write("seasonal.csv", |w| {
            writeln!(w, "phase,value")?;
            for (k, v) in s.values.iter().enumerate() {
                writeln!(w, "{k},{v}")?;
            }
            Ok(())
        })?;
    }
    if let Some(t) = &fit.tuning {
        out.write_json("tuning.json", t)?;
    }
    out.write_json("model.json", &fit.to_file())?;
    let selected = json!({
        "horizon": data.horizon(),
        "n_bar": data.mean_count(),
        "span": fit.span,
        "bandwidths": fit.bandwidths,
        "sigma2": fit.noise.sigma2,
        "sigma2_raw": fit.noise.raw,
        "sigma2_floor": fit.noise.floor,
        "truncated": fit.spectral.is_truncated(),
        "frequencies": fit.spectral.freqs().len(),
    });
    println!("{}", serde_json::to_string_pretty(&selected)?);
    out.finish("estimate", a, &[&a.data.input], selected)
}

fn periodogram(a: &PeriodogramArgs, mut out: Output) -> anyhow::Result<()> {
    let data = load_data(&a.data)?;
    let space = SplineSpace::standard();
    let b = match bandwidth_choice(&a.bandwidths, a.seed)? {
        BandwidthChoice::Fixed(b) => b,
        BandwidthChoice::CrossValidated(cv) => tune_bandwidths(&data, &cv, &space)?.bandwidths,
    };
    let mean = estimate_mean(&data, b.b_mu, &space)?;
    let pre = precompute_diagonal_lag_sums(&data, &mean, a.span, b.b_r, &space)?;
    let chart = trace_spectrum(&pre, &frequency_grid(a.span))?;
    out.write("periodogram.csv", |w| write_chart_csv(&chart, w))?;
    let peak = chart.iter().cloned().fold((0.0, f64::NEG_INFINITY), |m, c| if c.1 > m.1 { c } else { m });
    let selected = json!({ "span": a.span, "bandwidths": b, "peak_omega": peak.0, "peak_period": 2.0 * std::f64::consts::PI / peak.0 });
    out.finish("periodogram", a, &[&a.data.input], selected)
}

fn write_results(out: &mut Output, prefix: &str, results: &[RecoveryResult]) -> anyhow::Result<()> {
    for r in results {
        out.write(&format!("{prefix}_t{}.csv", r.s), |w| r.write_csv(w))?;
        out.write_json(&format!("{prefix}_t{}.json", r.s), &r.manifest())?;
    }
    Ok(())
}

fn add_seasonal(results: Vec<RecoveryResult>, model: &ModelFile) -> anyhow::Result<Vec<RecoveryResult>> {
    match &model.seasonal {
        Some(s) => Ok(results.iter().map(|r| r.shifted(s.at(r.s))).collect::<sparse_fts::Result<_>>()?),
        None => Ok(results),
    }
}

fn recover(a: &RecoverArgs, mut out: Output) -> anyhow::Result<()> {
    let data = load_data(&a.data)?;
    let file = load_model(&a.model)?;
    let space = SplineSpace::standard();
    let (dynamic, stat) = file.models(&space)?;
    let model = if a.static_ { stat } else { dynamic };
    let work = match &file.seasonal {
        Some(s) => s.remove(&data),
        None => data,
    };
    let t = work.horizon();
    let times: Vec<usize> = if a.all { (1..=t).collect() } else { a.at.clone() };
    if let Some(s) = times.iter().find(|&&s| s < 1 || s > t) {
        return Err(usage(format!("--at {s} outside 1..={t}; use `forecast` beyond T")));
    }
    let half = a.half_width.unwrap_or(model.default_half_width());
    let mc = McConfig { n_paths: a.mc_paths, refined_grid: DEFAULT_REFINED_GRID, seed: a.seed };
    let results = par::try_map_range(times.len(), |i| recover_window(&work, &model, times[i], half, a.alpha, &mc))?;
    let results = add_seasonal(results, &file)?;
    write_results(&mut out, "recover", &results)?;
    let selected = json!({
        "model": model.kind,
        "span": model.span,
        "half_width": half,
        "results": results.iter().map(|r| r.manifest()).collect::<Vec<_>>(),
    });
    out.finish("recover", a, &[&a.data.input, &a.model], selected)
}

fn forecast_cmd(a: &ForecastArgs, mut out: Output) -> anyhow::Result<()> {
    let data = load_data(&a.data)?;
    let file = load_model(&a.model)?;
    let (model, _) = file.models(&SplineSpace::standard())?;
    let work = match &file.seasonal {
        Some(s) => s.remove(&data),
        None => data,
    };
    let mc = McConfig { n_paths: a.mc_paths, refined_grid: DEFAULT_REFINED_GRID, seed: a.seed };
    let results = add_seasonal(forecast(&work, &model, a.steps, a.alpha, &mc)?, &file)?;
    write_results(&mut out, "forecast", &results)?;
    let selected = json!({
        "span": model.span,
        "results": results.iter().map(|r| r.manifest()).collect::<Vec<_>>(),
    });
    out.finish("forecast", a, &[&a.data.input, &a.model], selected)
}

fn benchmark(a: &BenchmarkArgs, mut out: Output) -> anyhow::Result<()> {
    if a.horizon.is_empty() || a.n_max.is_empty() {
        return Err(usage("--horizon and --n-max need at least one value"));
    }
    if a.horizon.len() == 1 && a.n_max.len() == 1 {
        let cfg = BenchmarkConfig {
            snr: a.snr,
            recovery: !a.no_recovery,
            ..BenchmarkConfig::new(a.process, a.horizon[0], a.n_max[0], a.reps, a.seed)
        };
        let report = run_benchmark(&cfg)?;
        out.write("benchmark.csv", |w| report.write_csv(w))?;
        out.write_json("benchmark.json", &report)?;
        let selected = json!({
            "spectral": report.spectral,
            "dynamic": report.dynamic,
            "static": report.static_,
            "gain_percent": report.gain_percent,
            "failures": report.failures.len(),
        });
        println!("{}", serde_json::to_string_pretty(&selected)?);
        out.finish("benchmark", a, &[], selected)
    } else {
        let report = run_benchmark_grid(a.process, &a.horizon, &a.n_max, a.reps, a.seed, a.snr, !a.no_recovery)?;
        out.write("benchmark_grid.csv", |w| report.write_csv(w))?;
        out.write_json("benchmark_grid.json", &report)?;
        let selected = json!({ "cells": report.cells.len(), "regression": report.regression });
        println!("{}", serde_json::to_string_pretty(&selected)?);
        out.finish("benchmark", a, &[], selected)
    }
}
