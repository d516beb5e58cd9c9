//! Acceptance criteria: one PASS/FAIL line per criterion, non-zero exit on failure.

mod support;

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use proptest::test_runner::{Config, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_fts::metrics::{run_benchmark, BenchmarkConfig, BenchmarkReport};
use sparse_fts::pipeline::{fit_model, FitConfig};
use sparse_fts::recovery::{build_stacked_system, recover_many, McConfig, SecondOrderModel};
use sparse_fts::simulate::{benchmark_process, simulate_dataset, DiscreteProcess, ProcessName, SamplingSpec};
use sparse_fts::smoothing::{estimate_autocov, estimate_mean, estimate_noise_variance, estimate_variance_diag};
use sparse_fts::spectral::{estimate_spectral_density, frequency_grid, invert_to_autocov, precompute_lag_sums};
use sparse_fts::tuning::bartlett_span_rule;
use sparse_fts::{Parallelism, SparseFtsDataset, SplineSpace};

const ORACLE_TOL: f64 = 1e-8;
const RECOVERY_TOL: f64 = 1e-7;
const SPECTRAL_TOL: f64 = 0.06;
const MIN_GAIN: f64 = 15.0;
const BENCH_SEED: u64 = 2024;
const BENCH_REPS: usize = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn run(id: &str, what: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let took = start.elapsed();
    let in_time = took <= budget;
    let pass = o.pass && in_time;
    println!(
        "{} {id} {what}: {}, {:.1} s (budget {} s{})",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64(),
        budget.as_secs(),
        if in_time { "" } else { ", exceeded" }
    );
    pass
}

fn kernel(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let den = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Intercepts of a weighted least-squares fit for each target column by SVD of `√W X`.
fn wls(design: &[Vec<f64>], weights: &[f64], targets: &[Vec<f64>]) -> Vec<f64> {
    let n = design.len();
    let p = design[0].len();
    let x = DMatrix::from_fn(n, p, |i, j| weights[i].sqrt() * design[i][j]);
    let svd = x.svd(true, true);
    targets
        .iter()
        .map(|y| {
            let b = DVector::from_fn(n, |i, _| weights[i].sqrt() * y[i]);
            svd.solve(&b, 1e-14).expect("svd solve")[0]
        })
        .collect()
}

fn random_dataset(rng: &mut ChaCha8Rng, horizon: usize, n: std::ops::RangeInclusive<usize>) -> SparseFtsDataset {
    let mut recs = Vec::new();
    let mut state = 0.0;
    for t in 1..=horizon {
        state = 0.6 * state + rng.random_range(-1.0..1.0);
        for _ in 0..rng.random_range(n.clone()) {
            let x: f64 = rng.random();
            let y = (2.0 * PI * x).sin() + state * (1.0 + x) + 0.3 * rng.random_range(-1.0..1.0);
            recs.push((t, x, y));
        }
    }
    SparseFtsDataset::new(horizon, recs).unwrap()
}

/// Centered measurements by time.
fn residuals(data: &SparseFtsDataset, mean: impl Fn(f64) -> f64) -> Vec<Vec<(f64, f64)>> {
    data.curves().iter().map(|c| c.iter().map(|o| (o.x, o.y - mean(o.x))).collect()).collect()
}

/// Raw lag-`h` covariances `(x_a, x_b, g)` with `x_a` at time `t + h`, any sign of `h`.
fn lag_pairs(res: &[Vec<(f64, f64)>], h: isize) -> Vec<(f64, f64, f64)> {
    let t = res.len() as isize;
    let mut out = Vec::new();
    for s in 0..t {
        let later = s + h;
        if later < 0 || later >= t {
            continue;
        }
        for (j, &(xa, ra)) in res[later as usize].iter().enumerate() {
            for (k, &(xb, rb)) in res[s as usize].iter().enumerate() {
                if h == 0 && j == k {
                    continue;
                }
                out.push((xa, xb, ra * rb));
            }
        }
    }
    out
}

fn surface_fit(pairs: &[(f64, f64, f64)], x: f64, y: f64, b: f64) -> f64 {
    let (mut d, mut w, mut g) = (Vec::new(), Vec::new(), Vec::new());
    for &(xa, xb, v) in pairs {
        let k = kernel((xa - x) / b) * kernel((xb - y) / b);
        if k > 0.0 {
            d.push(vec![1.0, xa - x, xb - y]);
            w.push(k);
            g.push(v);
        }
    }
    wls(&d, &w, &[g])[0]
}

fn curve_fit(points: &[(f64, f64)], x: f64, b: f64) -> f64 {
    let (mut d, mut w, mut g) = (Vec::new(), Vec::new(), Vec::new());
    for &(xi, v) in points {
        let k = kernel((xi - x) / b);
        if k > 0.0 {
            d.push(vec![1.0, xi - x]);
            w.push(k);
            g.push(v);
        }
    }
    wls(&d, &w, &[g])[0]
}

fn ridge_free_fit(res: &[Vec<(f64, f64)>], x: f64, b: f64) -> f64 {
    let (mut d, mut w, mut g) = (Vec::new(), Vec::new(), Vec::new());
    for c in res {
        for (j, &(xj, rj)) in c.iter().enumerate() {
            for (k, &(xk, rk)) in c.iter().enumerate() {
                let kk = kernel((xj - x) / b) * kernel((xk - x) / b);
                if j == k || kk <= 0.0 {
                    continue;
                }
                let p = 0.5 * ((xj - x) + (xk - x));
                d.push(vec![1.0, p, p * p]);
                w.push(kk);
                g.push(rj * rk);
            }
        }
    }
    wls(&d, &w, &[g])[0]
}

fn ac1_smoothers(space: &Arc<SplineSpace>) -> Outcome {
    let grid = space.grid();
    let (b_mu, b_r, b_v) = (0.35, 0.45, 0.35);
    let mut worst = [0.0f64; 5];
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..20 {
        let horizon = rng.random_range(5..=10);
        let data = random_dataset(&mut rng, horizon, 6..=12);
        let points: Vec<(f64, f64)> = data.records().map(|(_, x, y)| (x, y)).collect();
        let mean = estimate_mean(&data, b_mu, space).unwrap();
        let want: Vec<f64> = grid.iter().zip(&mean.node_bandwidths).map(|(&x, &b)| curve_fit(&points, x, b)).collect();
        worst[0] = worst[0].max(max_rel(mean.curve.values(), &want));

        let res = residuals(&data, |x| mean.eval(x));
        for h in 0..2 {
            let est = estimate_autocov(&data, &mean, h, b_r, space).unwrap();
            let pairs = lag_pairs(&res, h as isize);
            let (mut got, mut want) = (Vec::new(), Vec::new());
            for (a, &x) in grid.iter().enumerate() {
                for (b, &y) in grid.iter().enumerate() {
                    got.push(est.surface.values()[(a, b)]);
                    want.push(surface_fit(&pairs, x, y, est.node_bandwidths[(a, b)]));
                }
            }
            worst[1 + h] = worst[1 + h].max(max_rel(&got, &want));
        }

        let squares: Vec<(f64, f64)> = res.iter().flatten().map(|&(x, r)| (x, r * r)).collect();
        let v = estimate_variance_diag(&data, &mean, b_v, space).unwrap();
        let want: Vec<f64> = grid.iter().map(|&x| curve_fit(&squares, x, b_v)).collect();
        worst[3] = worst[3].max(max_rel(v.values(), &want));

        let noise = estimate_noise_variance(&data, &mean, b_v, b_r, space).unwrap();
        let want: Vec<f64> = grid.iter().map(|&x| ridge_free_fit(&res, x, b_r)).collect();
        worst[4] = worst[4].max(max_rel(noise.ridge_free_diag.values(), &want));
    }
    let max = worst.iter().fold(0.0f64, |m, v| m.max(*v));
    outcome(
        max <= ORACLE_TOL,
        format!(
            "max rel err mean {:.1e}, lag0 {:.1e}, lag1 {:.1e}, diag {:.1e}, ridge-free diag {:.1e} (tol {ORACLE_TOL:.0e})",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

fn bartlett(span: usize, h: isize) -> f64 {
    (1.0 - h.unsigned_abs() as f64 / span as f64).max(0.0)
}

fn normalizer(data: &SparseFtsDataset, h: isize) -> f64 {
    let counts: Vec<f64> = data.counts().iter().map(|&n| n as f64).collect();
    let t = counts.len() as f64;
    let nbar = counts.iter().sum::<f64>() / t;
    if h == 0 {
        t * (counts.iter().map(|n| n * n).sum::<f64>() / t - nbar)
    } else {
        (t - h.unsigned_abs() as f64) * nbar * nbar
    }
}

/// Design rows, base weights `W_h / (𝒩_h b²) K K` and lags of every raw covariance near `(x, y)`.
struct PooledDesign {
    design: Vec<Vec<f64>>,
    weights: Vec<f64>,
    lags: Vec<isize>,
    values: Vec<f64>,
}

fn pooled_design(
    data: &SparseFtsDataset,
    res: &[Vec<(f64, f64)>],
    span: usize,
    x: f64,
    y: f64,
    b: f64,
) -> PooledDesign {
    let mut d = PooledDesign { design: Vec::new(), weights: Vec::new(), lags: Vec::new(), values: Vec::new() };
    let l = span as isize;
    for h in -(l - 1)..l {
        let nh = normalizer(data, h);
        if nh <= 0.0 {
            continue;
        }
        for (xa, xb, g) in lag_pairs(res, h) {
            let k = kernel((xa - x) / b) * kernel((xb - y) / b);
            if k > 0.0 {
                d.design.push(vec![1.0, xa - x, xb - y]);
                d.weights.push(bartlett(span, h) / nh * k / (b * b));
                d.lags.push(h);
                d.values.push(g);
            }
        }
    }
    d
}

fn ac2_spectral(space: &Arc<SplineSpace>) -> Outcome {
    let grid = space.grid();
    let b_r = 0.45;
    let nodes = [0usize, 5, 10, 15, 20];
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for span in [1usize, 2, 3, 4, 5] {
        let horizon = rng.random_range(6..=10);
        let data = random_dataset(&mut rng, horizon, 5..=10);
        let mean = estimate_mean(&data, 0.35, space).unwrap();
        let res = residuals(&data, |x| mean.eval(x));
        let pre = precompute_lag_sums(&data, &mean, span, b_r, space).unwrap();
        let freqs = frequency_grid(span);
        let est = estimate_spectral_density(&pre, &freqs).unwrap();
        let m = freqs.len() / 2;
        let picks = [0, m / 3, m, m + 1, m + m / 2 + 7, 2 * m];
        let (mut got, mut want) = (Vec::new(), Vec::new());
        for &a in &nodes {
            for &b in &nodes {
                let pd = pooled_design(&data, &res, span, grid[a], grid[b], b_r);
                for &k in &picks {
                    let omega = freqs[k];
                    let re: Vec<f64> =
                        pd.values.iter().zip(&pd.lags).map(|(g, &h)| g * (h as f64 * omega).cos()).collect();
                    let im: Vec<f64> =
                        pd.values.iter().zip(&pd.lags).map(|(g, &h)| -g * (h as f64 * omega).sin()).collect();
                    let d0 = wls(&pd.design, &pd.weights, &[re, im]);
                    let scale = span as f64 / (2.0 * PI);
                    let f = est.kernel(k)[(a, b)];
                    got.extend([f.re, f.im]);
                    want.extend([scale * d0[0], scale * d0[1]]);
                }
            }
        }
        worst = worst.max(max_rel(&got, &want));
    }
    outcome(worst <= ORACLE_TOL, format!("max rel err {worst:.1e} over 5 datasets, 25 nodes, 6 frequencies (tol {ORACLE_TOL:.0e})"))
}

fn ac3_inversion(space: &Arc<SplineSpace>) -> Outcome {
    let grid = space.grid();
    let g = grid.len();
    let b_r = 0.45;
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for span in [2usize, 3, 4] {
        let horizon = rng.random_range(6..=10);
        let data = random_dataset(&mut rng, horizon, 5..=10);
        let mean = estimate_mean(&data, 0.35, space).unwrap();
        let res = residuals(&data, |x| mean.eval(x));
        let pre = precompute_lag_sums(&data, &mean, span, b_r, space).unwrap();
        let est = estimate_spectral_density(&pre, &frequency_grid(span)).unwrap();
        let ac = invert_to_autocov(&est, span).unwrap();
        let (mut got, mut want) = (Vec::new(), Vec::new());
        for a in 0..g {
            for b in 0..g {
                let pd = pooled_design(&data, &res, span, grid[a], grid[b], b_r);
                let mut normal = DMatrix::<f64>::zeros(3, 3);
                for (z, w) in pd.design.iter().zip(&pd.weights) {
                    let z = DVector::from_column_slice(z);
                    normal += &z * z.transpose() * *w;
                }
                let inv = normal.try_inverse().expect("pooled normal matrix");
                for h in 0..span as isize {
                    let mut rhs = DVector::<f64>::zeros(3);
                    for i in 0..pd.lags.len() {
                        if pd.lags[i] == h {
                            let unweighted = pd.weights[i] / bartlett(span, h);
                            rhs += DVector::from_column_slice(&pd.design[i]) * (unweighted * pd.values[i]);
                        }
                    }
                    let beta = (&inv * rhs)[0];
                    got.push(ac.surfaces()[h as usize].values()[(a, b)]);
                    want.push(bartlett(span, h) * span as f64 * beta);
                }
            }
        }
        worst = worst.max(max_rel(&got, &want));
    }
    outcome(worst <= ORACLE_TOL, format!("max rel err {worst:.1e} over spans 2, 3, 4 at all nodes and lags (tol {ORACLE_TOL:.0e})"))
}

fn ac4_blup(space: &Arc<SplineSpace>) -> Outcome {
    let process = DiscreteProcess::new(&benchmark_process(ProcessName::Far07), space).unwrap();
    let sim = simulate_dataset(&process, &SamplingSpec { horizon: 20, n_max: 5, seed: 404 }, 20.0).unwrap();
    let model = SecondOrderModel::from_process(&process, sim.sigma2, 6).unwrap();
    let grid = space.grid();
    let g = grid.len();
    let r = |h: isize, x: f64, y: f64| -> f64 {
        let s = model.autocov.surfaces();
        match s.get(h.unsigned_abs()) {
            Some(surf) if h >= 0 => surf.eval(x, y),
            Some(surf) => surf.eval(y, x),
            None => 0.0,
        }
    };
    let (mut worst_mean, mut worst_cov) = (0.0f64, 0.0f64);
    let mut windows = 0;
    for s in [1usize, 2, 7, 13, 19, 20] {
        let sys = build_stacked_system(&sim.data, &model, s, 2).unwrap();
        let lo = s.saturating_sub(2).max(1);
        let hi = (s + 2).min(20);
        let obs: Vec<(usize, f64, f64)> = (lo..=hi)
            .flat_map(|t| sim.data.curve(t - 1).iter().map(move |o| (t, o.x, o.y)))
            .collect();
        let n = obs.len();
        let c = DMatrix::from_fn(n, n, |a, b| {
            r(obs[a].0 as isize - obs[b].0 as isize, obs[a].1, obs[b].1) + if a == b { sim.sigma2 } else { 0.0 }
        });
        let k = DMatrix::from_fn(g, n, |i, b| r(s as isize - obs[b].0 as isize, grid[i], obs[b].1));
        let p = DMatrix::from_fn(g, g, |i, j| r(0, grid[i], grid[j]));
        let resid = DVector::from_fn(n, |a, _| obs[a].2 - model.mean.eval(obs[a].1));
        let c_inv = c.try_inverse().expect("observation covariance");
        let mean_want: Vec<f64> =
            (&k * &c_inv * &resid).iter().zip(grid).map(|(v, &x)| v + model.mean.eval(x)).collect();
        let cov_want = &p - &k * &c_inv * k.transpose();
        let (mean_got, cov_got) = sys.condition().unwrap();
        worst_mean = worst_mean.max(max_rel(&mean_got, &mean_want));
        worst_cov = worst_cov.max(max_rel(cov_got.as_slice(), cov_want.as_slice()));
        windows += 1;
    }
    let worst = worst_mean.max(worst_cov);
    outcome(
        worst <= RECOVERY_TOL,
        format!(
            "max rel err mean {worst_mean:.1e}, covariance {worst_cov:.1e} over {windows} windows of <= 5 curves (tol {RECOVERY_TOL:.0e})"
        ),
    )
}

fn benchmark(horizon: usize, n_max: usize) -> BenchmarkReport {
    run_benchmark(&BenchmarkConfig::new(ProcessName::Fma4, horizon, n_max, BENCH_REPS, BENCH_SEED)).unwrap()
}

fn ac5_spectral_error(small: &BenchmarkReport, large: &BenchmarkReport) -> Outcome {
    let cells = [(small, 0.312), (large, 0.124)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (rep, target) in cells {
        let m = rep.spectral.map_or(f64::NAN, |s| s.mean);
        pass &= (m - target).abs() <= SPECTRAL_TOL && rep.failures.is_empty();
        parts.push(format!(
            "T={} N={} mean {m:.3} vs {target} ({} failed)",
            rep.config.horizon,
            rep.config.n_max,
            rep.failures.len()
        ));
    }
    outcome(pass, format!("{} (tol ±{SPECTRAL_TOL})", parts.join("; ")))
}

fn ac6_gain(cells: [&BenchmarkReport; 2]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for rep in cells {
        let gain = rep.gain_percent.unwrap_or(f64::NAN);
        pass &= gain >= MIN_GAIN;
        parts.push(format!(
            "T={} N={} dynamic {:.3} static {:.3} gain {gain:.1}%",
            rep.config.horizon,
            rep.config.n_max,
            rep.dynamic.map_or(f64::NAN, |q| q.median),
            rep.static_.map_or(f64::NAN, |q| q.median)
        ));
    }
    outcome(pass, format!("{} (min {MIN_GAIN}%)", parts.join("; ")))
}

fn ac7_coverage(space: &Arc<SplineSpace>) -> Outcome {
    let process = DiscreteProcess::new(&benchmark_process(ProcessName::Far07), space).unwrap();
    let sim = simulate_dataset(&process, &SamplingSpec { horizon: 300, n_max: 20, seed: 11 }, 20.0).unwrap();
    let model = SecondOrderModel::from_process(&process, sim.sigma2, 15).unwrap();
    let times: Vec<usize> = (51..=250).collect();
    let res = recover_many(&sim.data, &model, &times, 0.05, &McConfig { seed: 3, ..Default::default() }).unwrap();
    let g = space.grid_size();
    let inside = |lo: &[f64], hi: &[f64], truth: &[f64], i: usize| lo[i] <= truth[i] && truth[i] <= hi[i];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs = 500;
    let mut pw = 0;
    for _ in 0..pairs {
        let (c, i) = (rng.random_range(0..times.len()), rng.random_range(0..g));
        let r = &res[c];
        if inside(r.pointwise.0.values(), r.pointwise.1.values(), sim.path[times[c] - 1].values(), i) {
            pw += 1;
        }
    }
    let sim_ok = res
        .iter()
        .zip(&times)
        .filter(|(r, &t)| {
            let truth = sim.path[t - 1].values();
            (0..g).all(|i| inside(r.simultaneous.0.values(), r.simultaneous.1.values(), truth, i))
        })
        .count();
    let pw_rate = pw as f64 / pairs as f64;
    let sim_rate = sim_ok as f64 / times.len() as f64;
    outcome(
        (0.92..=0.98).contains(&pw_rate) && (0.91..=0.99).contains(&sim_rate),
        format!(
            "pointwise {pw}/{pairs} = {:.1}% (range 92-98%), simultaneous {sim_ok}/{} = {:.1}% (range 91-99%)",
            100.0 * pw_rate,
            times.len(),
            100.0 * sim_rate
        ),
    )
}

fn ac8_properties() -> Outcome {
    let mut failures = Vec::new();
    let runner = || {
        let cfg = Config { cases: 100, failure_persistence: None, ..Config::default() };
        let rng = TestRng::deterministic_rng(cfg.rng_algorithm);
        TestRunner::new_with_rng(cfg, rng)
    };
    let checks: [(&str, Result<(), String>); 4] = [
        (
            "spectral symmetries",
            runner()
                .run(&(support::dataset(), 1usize..=3, 0.35f64..0.6), |(d, l, b)| support::spectral_symmetries(&d, l, b))
                .map_err(|e| e.to_string()),
        ),
        (
            "lag transpose",
            runner()
                .run(&(support::dataset(), 0usize..3, 0.35f64..0.6), |(d, h, b)| support::lag_transpose(&d, h, b))
                .map_err(|e| e.to_string()),
        ),
        (
            "recovery covariances",
            runner()
                .run(&(support::dataset(), 0.01f64..1.0, 1usize..=8), |(d, s2, at)| {
                    support::recovery_covariances(&d, s2, at)
                })
                .map_err(|e| e.to_string()),
        ),
        (
            "true spectral symmetries",
            runner()
                .run(&(0.0f64..PI, 0usize..5), |(w, p)| support::true_spectral_symmetries(w, p))
                .map_err(|e| e.to_string()),
        ),
    ];
    for (name, r) in checks {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    }
    let detail = if failures.is_empty() {
        "4 properties x 100 cases hold".to_string()
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn ac9_span_rule() -> Outcome {
    let n_maxes = [5usize, 10, 20, 30, 40];
    let table: [(usize, [usize; 5]); 6] = [
        (150, [6, 7, 9, 10, 11]),
        (300, [8, 10, 11, 13, 14]),
        (450, [9, 11, 13, 15, 16]),
        (600, [10, 12, 14, 16, 17]),
        (900, [12, 14, 17, 19, 20]),
        (1200, [13, 15, 18, 20, 22]),
    ];
    let mut mismatches = Vec::new();
    for (t, row) in table {
        for (n, want) in n_maxes.iter().zip(row) {
            let got = bartlett_span_rule(t, *n as f64 / 2.0);
            if got != want {
                mismatches.push(format!("T={t} N={n}: {got} != {want}"));
            }
        }
    }
    let detail = if mismatches.is_empty() { "30/30 cells match".to_string() } else { mismatches.join(", ") };
    outcome(mismatches.is_empty(), detail)
}

fn pipeline_outputs(space: &Arc<SplineSpace>) -> Vec<u8> {
    let process = DiscreteProcess::new(&benchmark_process(ProcessName::Fma4), space).unwrap();
    let sim = simulate_dataset(&process, &SamplingSpec { horizon: 60, n_max: 8, seed: 5 }, 20.0).unwrap();
    let fit = fit_model(&sim.data, &FitConfig::seeded(5), space).unwrap();
    let mut out = Vec::new();
    sim.data.write_csv(&mut out).unwrap();
    fit.mean.curve.write_csv(&mut out).unwrap();
    fit.spectral.write_csv(&mut out).unwrap();
    for s in fit.model.autocov.surfaces() {
        s.write_csv(&mut out).unwrap();
    }
    let times: Vec<usize> = (1..=60).collect();
    let mc = McConfig { n_paths: 2000, seed: 9, ..Default::default() };
    for r in recover_many(&sim.data, &fit.model, &times, 0.05, &mc).unwrap() {
        r.write_csv(&mut out).unwrap();
    }
    out
}

fn ac10_determinism(space: &Arc<SplineSpace>) -> Outcome {
    let seq = Parallelism::Sequential.install(|| pipeline_outputs(space));
    let par = Parallelism::Threads(4).install(|| pipeline_outputs(space));
    let first_diff = seq.iter().zip(&par).position(|(a, b)| a != b);
    let same = seq == par;
    outcome(
        same,
        if same {
            format!("{} bytes identical with 1 and 4 threads", seq.len())
        } else {
            format!("outputs differ (lengths {} / {}, first byte {:?})", seq.len(), par.len(), first_diff)
        },
    )
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let space = SplineSpace::standard();
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= run("AC1", "smoothers vs dense WLS", secs(10), || ac1_smoothers(&space));
    ok &= run("AC2", "spectral density vs complex WLS", secs(30), || ac2_spectral(&space));
    ok &= run("AC3", "inversion returns weighted lag coefficients", secs(10), || ac3_inversion(&space));
    ok &= run("AC4", "recovery vs Schur complement", secs(10), || ac4_blup(&space));

    let budget = secs(30 * 60);
    let mut cells = None;
    ok &= run("AC5", "spectral error FMA4", budget, || {
        let c = (benchmark(150, 5), benchmark(300, 20), benchmark(300, 5));
        let o = ac5_spectral_error(&c.0, &c.1);
        cells = Some(c);
        o
    });
    let (_, b300_20, b300_5) = cells.expect("benchmark cells");
    ok &= run("AC6", "dynamic over static gain FMA4 (cells shared with AC5)", budget, || {
        ac6_gain([&b300_5, &b300_20])
    });
    ok &= run("AC7", "band coverage FAR07", secs(15 * 60), || ac7_coverage(&space));
    ok &= run("AC8", "properties", secs(120), ac8_properties);
    ok &= run("AC9", "span rule table", secs(1), ac9_span_rule);
    ok &= run("AC10", "thread-count determinism", secs(300), || ac10_determinism(&space));
    println!("{}", if ok { "acceptance: all criteria pass" } else { "acceptance: some criteria fail" });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
