//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the target exits non-zero if any criterion fails.

use std::path::{Path, PathBuf};

use gridstate::ensemble::EnsembleModel;
use gridstate::forecast::{fit_forecaster, DEFAULT_LAGS};
use gridstate::measurement::{default_plan, evaluate_h, evaluate_jacobian, Preset};
use gridstate::neural::{Architecture, BaseLearner, ResNetD, Standardizer};
use gridstate::pipeline::{run_experiment, ExperimentConfig, ExperimentReport, LatencySummary};
use gridstate::powerflow::{solve_power_flow, LoadScenario};
use gridstate::wls::{estimate_wls, WlsOptions};
use gridstate::ybus::build_ybus;
use gridstate::{MeasurementVector, NetworkCase, StateVector};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn record(results: &mut Vec<Outcome>, id: u32, name: &'static str, pass: bool, detail: String) {
    println!("criterion {id} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    results.push(Outcome { id, name, pass, detail });
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn desk_config() -> ExperimentConfig {
    ExperimentConfig::load(configs_dir().join("desk14.toml")).unwrap()
}

fn wls_exactness() -> (bool, String) {
    let options = WlsOptions {
        tolerance: 1e-10,
        max_iterations: 10,
    };
    let mut worst = 0.0f64;
    let mut most_iterations = 0;
    let mut ok = true;
    for (name, preset) in [
        ("ieee14", Preset::Full14),
        ("ieee30", Preset::Bench30),
        ("ieee57", Preset::Bench57),
        ("ieee118", Preset::Bench118),
    ] {
        let case = NetworkCase::builtin(name).unwrap();
        let plan = default_plan(&case, preset).unwrap();
        let ybus = build_ybus(&case).unwrap();
        for scale in [0.6, 0.8, 1.0] {
            let truth = solve_power_flow(&case, &LoadScenario::uniform(0, scale, case.n_buses()), &Default::default())
                .unwrap()
                .state;
            let z = MeasurementVector::full(0, evaluate_h(&truth, &plan, &ybus));
            let est = estimate_wls(&z, &plan, &case, &options).unwrap();
            let (dv, dt) = est.state.max_abs_diff(&truth);
            ok &= est.converged && est.iterations <= 10 && dv < 1e-6 && dt < 1e-6;
            worst = worst.max(dv).max(dt);
            most_iterations = most_iterations.max(est.iterations);
        }
    }
    (ok, format!("max error {worst:.2e}, at most {most_iterations} iterations"))
}

fn jacobian_probes(probes: usize) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let systems: Vec<_> = [
        ("ieee14", Preset::Full14),
        ("ieee30", Preset::Bench30),
        ("ieee57", Preset::Bench57),
        ("ieee118", Preset::Bench118),
    ]
    .into_iter()
    .map(|(name, preset)| {
        let case = NetworkCase::builtin(name).unwrap();
        let plan = default_plan(&case, preset).unwrap();
        let ybus = build_ybus(&case).unwrap();
        (case, plan, ybus)
    })
    .collect();
    let step = 1e-6;
    let mut worst = 0.0f64;
    for p in 0..probes {
        let (case, plan, ybus) = &systems[p % systems.len()];
        let n = case.n_buses();
        let slack = case.slack();
        let state = StateVector::new(
            (0..n).map(|_| rng.random_range(0.9..1.1)).collect(),
            (0..n).map(|i| if i == slack { 0.0 } else { rng.random_range(-0.5..0.5) }).collect(),
        )
        .unwrap();
        // direction over the estimated states: non-slack angles then magnitudes
        let dir_theta: Vec<f64> = (0..n).map(|i| if i == slack { 0.0 } else { StandardNormal.sample(&mut rng) }).collect();
        let dir_v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h = evaluate_jacobian(&state, plan, ybus);
        let mut u = nalgebra::DVector::zeros(h.ncols());
        for bus in 0..n {
            u[plan.magnitude_column(bus)] = dir_v[bus];
            if let Some(c) = plan.angle_column(bus) {
                u[c] = dir_theta[bus];
            }
        }
        let analytic = &h * &u;
        let moved = |d: f64| {
            let s = StateVector::new(
                state.v.iter().zip(&dir_v).map(|(v, e)| v + d * e).collect(),
                state.theta.iter().zip(&dir_theta).map(|(t, e)| t + d * e).collect(),
            )
            .unwrap();
            nalgebra::DVector::from_vec(evaluate_h(&s, plan, ybus))
        };
        let fd = (moved(step) - moved(-step)) / (2.0 * step);
        worst = worst.max((fd - &analytic).norm() / analytic.norm());
    }
    (worst < 1e-6, format!("{probes} probes, max relative error {worst:.2e}"))
}

fn flat_gradients(grads: &[gridstate::neural::LayerGrad]) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads {
        for r in 0..g.weights.nrows() {
            out.extend(g.weights.row(r).iter());
        }
        out.extend(g.biases.iter());
    }
    out
}

/// ReLU signs and Huber regimes, which fix the smooth piece the loss is on.
fn regime(net: &ResNetD, x: &DMatrix<f64>, y: &DMatrix<f64>, delta: f64) -> Vec<bool> {
    let mut out: Vec<bool> = net
        .preactivations(x)
        .unwrap()
        .iter()
        .flat_map(|p| p.iter().map(|v| *v > 0.0).collect::<Vec<_>>())
        .collect();
    let r = net.forward_batch(x).unwrap() - y;
    out.extend(r.iter().map(|v| v.abs() <= delta));
    out
}

fn network_gradient_probes(probes: usize) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let arch = Architecture::resnetd(64, 28);
    let delta = 1.0;
    let step = 1e-6;
    let (mut checked, mut crossed, mut worst) = (0, 0, 0.0f64);
    let mut seed = 0;
    while checked < probes {
        seed += 1;
        let net = ResNetD::new(arch, seed).unwrap();
        let x = DMatrix::from_fn(64, 4, |_, _| StandardNormal.sample(&mut rng));
        let y = DMatrix::from_fn(28, 4, |_, _| rng.random_range(-1.5..1.5));
        let params = net.flat_parameters();
        let u: Vec<f64> = (0..params.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let at = |d: f64| {
            let mut probe = net.clone();
            let p: Vec<f64> = params.iter().zip(&u).map(|(a, b)| a + d * b).collect();
            probe.set_flat_parameters(&p).unwrap();
            probe
        };
        let (plus, minus) = (at(step), at(-step));
        let base = regime(&net, &x, &y, delta);
        if regime(&plus, &x, &y, delta) != base || regime(&minus, &x, &y, delta) != base {
            // the stencil straddles a kink, where no derivative exists
            crossed += 1;
            continue;
        }
        let (_, grads) = net.loss_and_gradients(&x, &y, delta).unwrap();
        let analytic: f64 = flat_gradients(&grads).iter().zip(&u).map(|(g, d)| g * d).sum();
        let loss = |n: &ResNetD| n.loss_and_gradients(&x, &y, delta).unwrap().0;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
        worst = worst.max((fd - analytic).abs() / analytic.abs());
        checked += 1;
    }
    (
        worst < 1e-4,
        format!(
            "{checked} probes over {} parameters, {crossed} kink-straddling draws redrawn, max relative error {worst:.2e}",
            arch.parameter_count()
        ),
    )
}

fn stacking_dominance(reports: &[&ExperimentReport]) -> (bool, String) {
    let ok = reports
        .iter()
        .all(|r| r.meta_in_sample_rmse <= r.uniform_in_sample_rmse);
    let pairs: Vec<String> = reports
        .iter()
        .map(|r| format!("{:.3e}<={:.3e}", r.meta_in_sample_rmse, r.uniform_in_sample_rmse))
        .collect();
    (ok, format!("{} runs, meta vs uniform {}", reports.len(), pairs.join(", ")))
}

fn desk_reproduction(report: &ExperimentReport) -> (bool, String) {
    let e = report.find("ensemble", "true", "full").unwrap();
    let learners = report.learner_rows("true", "full");
    let best_v = learners.iter().map(|m| m.voltage_rmse_pct).fold(f64::MAX, f64::min);
    let best_a = learners.iter().map(|m| m.angle_rmse_deg).fold(f64::MAX, f64::min);
    let ok = e.voltage_rmse_pct < 1.0
        && e.angle_rmse_deg < 0.5
        && e.voltage_rmse_pct <= best_v * 1.05
        && e.angle_rmse_deg <= best_a * 1.05;
    (
        ok,
        format!(
            "{} test samples, ensemble {:.4}% / {:.4} deg, best learner {:.4}% / {:.4} deg",
            e.samples, e.voltage_rmse_pct, e.angle_rmse_deg, best_v, best_a
        ),
    )
}

/// Coefficients `b` of `x[t+1] = c + sum_k b[k] x[t-k]` whose characteristic
/// polynomial has the given unit-circle roots.
fn recurrence_from_roots(angles: &[f64], minus_one: bool) -> Vec<f64> {
    // monic polynomial, highest power first
    let mut poly = vec![1.0];
    let mut multiply = |factor: &[f64]| {
        let mut out = vec![0.0; poly.len() + factor.len() - 1];
        for (i, a) in poly.iter().enumerate() {
            for (j, b) in factor.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        poly = out;
    };
    for w in angles {
        multiply(&[1.0, -2.0 * w.cos(), 1.0]);
    }
    if minus_one {
        multiply(&[1.0, 1.0]);
    }
    poly[1..].iter().map(|c| -c).collect()
}

fn forecaster_oracle(trials: usize) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let len = 400;
    let mut worst_coef = 0.0f64;
    for trial in 0..trials {
        let order = 1 + trial % DEFAULT_LAGS;
        let pairs = order / 2;
        let minus_one = order % 2 == 1;
        // stratified frequencies keep neighbouring roots apart
        let angles: Vec<f64> = (0..pairs)
            .map(|j| std::f64::consts::PI * (j as f64 + 0.5 + rng.random_range(-0.3..0.3)) / pairs as f64)
            .collect();
        let b = recurrence_from_roots(&angles, minus_one);
        let level: f64 = rng.random_range(-1.0..1.0);
        let modes: Vec<(f64, f64)> = angles
            .iter()
            .map(|_| (rng.random_range(0.5..1.5), rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let alt = rng.random_range(0.5..1.5);
        let series: Vec<f64> = (0..len)
            .map(|t| {
                let t = t as f64;
                let waves: f64 = angles.iter().zip(&modes).map(|(w, (a, p))| a * (w * t + p).cos()).sum();
                let flip = if minus_one { alt * (std::f64::consts::PI * t).cos() } else { 0.0 };
                level + waves + flip
            })
            .collect();
        let c = level * (1.0 - b.iter().sum::<f64>());
        let history: Vec<StateVector> = series
            .iter()
            .map(|&x| StateVector { v: vec![x], theta: vec![0.0] })
            .collect();
        let model = fit_forecaster(&history, DEFAULT_LAGS).unwrap();
        let mut expected = vec![0.0; DEFAULT_LAGS + 2];
        expected[0] = c;
        expected[1..=order].copy_from_slice(&b);
        let got = &model.states()[0].coefficients;
        let err = got.iter().zip(&expected).map(|(g, e)| (g - e).abs()).fold(0.0, f64::max);
        worst_coef = worst_coef.max(err);
    }

    let profile: Vec<f64> = (0..24).map(|_| rng.random_range(0.5..1.5)).collect();
    let history: Vec<StateVector> = (0..360)
        .map(|t| StateVector {
            v: vec![profile[t % 24]],
            theta: vec![0.3 * profile[(t + 5) % 24] - 0.2],
        })
        .collect();
    let model = fit_forecaster(&history[..240], DEFAULT_LAGS).unwrap();
    let mut worst_periodic = 0.0f64;
    for t in 240..359 {
        let next = model.forecast_next(&history[t - DEFAULT_LAGS..=t]).unwrap();
        let (dv, dt) = next.max_abs_diff(&history[t + 1]);
        worst_periodic = worst_periodic.max(dv).max(dt);
    }
    (
        worst_coef < 1e-8 && worst_periodic < 1e-9,
        format!(
            "{trials} recurrences of order 1..24, max coefficient error {worst_coef:.2e}; period-24 forecast max error {worst_periodic:.2e}"
        ),
    )
}

fn missing_path(report: &ExperimentReport) -> (bool, String) {
    let full = report.find("ensemble", "true", "full_subset").unwrap();
    let missing = report.find("ensemble", "true", "missing").unwrap();
    let rv = missing.voltage_rmse_pct / full.voltage_rmse_pct;
    let ra = missing.angle_rmse_deg / full.angle_rmse_deg;
    (
        rv < 3.0 && ra < 3.0,
        format!(
            "{} rows, missing/full ratio {rv:.3} voltage, {ra:.3} angle",
            missing.samples
        ),
    )
}

fn latency_118() -> LatencySummary {
    let case = NetworkCase::builtin("ieee118").unwrap();
    let plan = default_plan(&case, Preset::Bench118).unwrap();
    let (m, outputs) = (plan.m(), 2 * case.n_buses());
    let learners: Vec<BaseLearner> = (0..6)
        .map(|k| {
            let net = ResNetD::new(Architecture::resnetd(m, outputs), k).unwrap();
            let norm = Standardizer {
                mean: vec![0.0; m],
                std: vec![1.0; m],
            };
            BaseLearner::from_parts(net, norm, 0.0).unwrap()
        })
        .collect();
    let meta = DMatrix::from_fn(outputs, 6 * outputs + 1, |r, c| if c > 0 && (c - 1) % outputs == r { 1.0 / 6.0 } else { 0.0 });
    let model = EnsembleModel::from_parts(learners, meta).unwrap();
    let ybus = build_ybus(&case).unwrap();
    let mut durations = Vec::new();
    for t in 0..200 {
        let truth = solve_power_flow(
            &case,
            &LoadScenario::uniform(t, 0.7 + 0.001 * t as f64, case.n_buses()),
            &Default::default(),
        )
        .unwrap()
        .state;
        let z = MeasurementVector::full(t, evaluate_h(&truth, &plan, &ybus));
        durations.push(model.estimate_timed(&z).unwrap().1);
    }
    LatencySummary::from_durations(durations)
}

fn latency(desk: &ExperimentReport) -> (bool, String) {
    let small = &desk.manifest.latency;
    let large = latency_118();
    (
        small.p99_ms < 10.0 && large.p99_ms < 50.0,
        format!(
            "14-bus median {:.3} ms p99 {:.3} ms; 118-bus median {:.3} ms p99 {:.3} ms",
            small.median_ms, small.p99_ms, large.median_ms, large.p99_ms
        ),
    )
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    out.sort();
    out
}

fn determinism(first: &Path, second: &Path) -> (bool, String) {
    let mut compared = vec![PathBuf::from("metrics.csv"), PathBuf::from("forecast.json")];
    for f in files_under(&first.join("model")) {
        compared.push(Path::new("model").join(f.file_name().unwrap()));
    }
    let differing: Vec<String> = compared
        .iter()
        .filter(|rel| std::fs::read(first.join(rel)).ok() != std::fs::read(second.join(rel)).ok())
        .map(|rel| rel.display().to_string())
        .collect();
    (
        differing.is_empty() && files_under(&first.join("model")).len() == files_under(&second.join("model")).len(),
        if differing.is_empty() {
            format!("{} files byte-identical across two runs", compared.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn small_config(seed: u64) -> ExperimentConfig {
    let mut config = desk_config();
    config.seed = seed;
    config.hours = 600;
    config.ensemble.training.epochs = 15;
    config
}

fn main() {
    let mut results = Vec::new();
    let work = tempfile::tempdir().unwrap();
    let base = configs_dir();

    let (ok, detail) = wls_exactness();
    record(&mut results, 1, "wls exactness", ok, detail);

    let (jac_ok, jac) = jacobian_probes(120);
    let (net_ok, net) = network_gradient_probes(120);
    record(&mut results, 2, "derivative oracles", jac_ok && net_ok, format!("jacobian: {jac}; network: {net}"));

    let desk = run_experiment(&desk_config(), &base, &work.path().join("desk_a")).unwrap();
    let small: Vec<ExperimentReport> = (1..=3)
        .map(|s| run_experiment(&small_config(s), &base, &work.path().join(format!("small_{s}"))).unwrap())
        .collect();
    let mut all: Vec<&ExperimentReport> = vec![&desk];
    all.extend(small.iter());
    let (ok, detail) = stacking_dominance(&all);
    record(&mut results, 3, "stacking dominance", ok, detail);

    let (ok, detail) = desk_reproduction(&desk);
    record(&mut results, 4, "desk-scale reproduction", ok, detail);

    let (ok, detail) = forecaster_oracle(96);
    record(&mut results, 5, "forecaster oracle", ok, detail);

    let (ok, detail) = missing_path(&desk);
    record(&mut results, 6, "missing-measurement path", ok, detail);

    let (ok, detail) = latency(&desk);
    record(&mut results, 7, "inference latency", ok, detail);

    run_experiment(&desk_config(), &base, &work.path().join("desk_b")).unwrap();
    let (ok, detail) = determinism(&work.path().join("desk_a"), &work.path().join("desk_b"));
    record(&mut results, 8, "determinism", ok, detail);

    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} {} ({})", r.id, r.name, r.detail))
        .collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {}", failed.join("; "));
        std::process::exit(1);
    }
}
