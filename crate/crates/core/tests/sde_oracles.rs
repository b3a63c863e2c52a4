//! Statistical checks of the integrator against independently derived
//! closed forms of the linear equation.

use opo_tomography::model::{self, BiasSpec, PhasePoint};
use opo_tomography::sde::{run_ensemble, run_ensemble_recorded, IntegratorConfig, Schedule};

const N: u64 = 10_000;

/// P(X_inf > 0) for the linear equation started at `x0` with a bias step
/// `b` switched on at `tau0`.
fn linear_probability(lambda: f64, b: f64, tau0: f64, x0: f64) -> f64 {
    let a = lambda - 1.0;
    let mean = x0 + 2f64.sqrt() * b * (-a * tau0).exp() / a;
    let sd = (lambda / (2.0 * a)).sqrt();
    0.5 * libm::erfc(-mean / sd / 2f64.sqrt())
}

fn binomial_sigma(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt().max(0.5 / n as f64)
}

fn probability(lambda: f64, b: f64, tau0: f64, x0: f64, dt: f64, seed: u64) -> f64 {
    let schedule = Schedule::constant(lambda).bias(BiasSpec::step(b, tau0));
    let cfg = IntegratorConfig::new(dt, tau0 + 8.0 / (lambda - 1.0));
    run_ensemble(&PhasePoint::new(x0, 0.0), &schedule, &cfg, N, seed)
        .unwrap()
        .probability()
}

#[test]
fn mean_growth_under_constant_bias() {
    let schedule = Schedule::constant(2.0).bias(BiasSpec::step(1.0, 0.0));
    let cfg = IntegratorConfig::new(IntegratorConfig::DEFAULT_DT, 3.0).with_stride(600);
    let e = run_ensemble_recorded(&PhasePoint::new(0.0, 0.0), &schedule, &cfg, N, 21).unwrap();
    let xs: Vec<f64> = e.final_states.iter().map(|p| p.re).collect();
    let mean = xs.iter().sum::<f64>() / N as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (N - 1) as f64;
    let expected = 2f64.sqrt() * (3f64.exp() - 1.0);
    assert!((expected - 26.99).abs() < 0.01);
    let se = (var / N as f64).sqrt();
    assert!(
        (mean - expected).abs() < 3.0 * se,
        "mean {mean}, expected {expected}, se {se}"
    );
}

#[test]
fn wiener_integral_variance() {
    let (lambda, tau) = (2.0, 2.0);
    let a = lambda - 1.0;
    let cfg = IntegratorConfig::new(IntegratorConfig::DEFAULT_DT, tau).with_stride(400);
    let e = run_ensemble_recorded(
        &PhasePoint::new(0.0, 0.0),
        &Schedule::constant(lambda),
        &cfg,
        N,
        4,
    )
    .unwrap();
    // X(tau) = e^(a tau) sqrt(lambda) f(tau) with f the weighted Wiener integral.
    let f: Vec<f64> = e
        .final_states
        .iter()
        .map(|p| p.re * (-a * tau).exp() / lambda.sqrt())
        .collect();
    let mean = f.iter().sum::<f64>() / N as f64;
    let var = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (N - 1) as f64;
    let oracle = (1.0 - (-2.0 * a * tau).exp()) / (2.0 * a);
    assert!((model::f_variance(tau, lambda).unwrap().value() - oracle).abs() < 1e-12);
    assert!(
        (var / oracle - 1.0).abs() < 0.05,
        "var {var}, oracle {oracle}"
    );
}

#[test]
fn large_bias_saturates() {
    assert!(probability(2.0, 10.0, 0.0, 0.0, IntegratorConfig::DEFAULT_DT, 3) >= 0.999);
}

#[test]
fn bias_grid_matches_closed_form() {
    for (k, b) in [-1.0, -0.5, 0.0, 0.5, 1.0].into_iter().enumerate() {
        let oracle = linear_probability(2.0, b, 0.0, 0.0);
        let model_p = model::erf_probability(&BiasSpec::step(b, 0.0), 2.0).unwrap();
        assert!((oracle - model_p).abs() < 1e-12);
        let p = probability(
            2.0,
            b,
            0.0,
            0.0,
            IntegratorConfig::DEFAULT_DT,
            100 + k as u64,
        );
        let s = binomial_sigma(oracle, N);
        assert!((p - oracle).abs() <= 3.0 * s, "b = {b}: p {p} vs {oracle}");
    }
}

#[test]
fn bias_equals_displaced_start() {
    for (k, b) in [-1.0, -0.5, 0.0, 0.5, 1.0].into_iter().enumerate() {
        let d = model::displacement(b, 2.0).unwrap();
        let biased = probability(
            2.0,
            b,
            0.0,
            0.0,
            IntegratorConfig::DEFAULT_DT,
            200 + k as u64,
        );
        let shifted = probability(
            2.0,
            0.0,
            0.0,
            d,
            IntegratorConfig::DEFAULT_DT,
            300 + k as u64,
        );
        let s = binomial_sigma(linear_probability(2.0, b, 0.0, 0.0), N) * 2f64.sqrt();
        assert!(
            (biased - shifted).abs() <= 3.0 * s,
            "b = {b}: {biased} vs {shifted}"
        );
    }
}

/// Halving dt must not move the estimates systematically: the grid-averaged
/// shift stays below one binomial sigma and no single point moves by more
/// than the statistical spread of a difference allows.
#[test]
fn halving_dt_converges() {
    let dt = IntegratorConfig::DEFAULT_DT;
    let mut shifts = Vec::new();
    for k in 0..11 {
        let b = -2.0 + 0.4 * k as f64;
        let coarse = probability(2.0, b, 0.0, 0.0, dt, 400 + k);
        let fine = probability(2.0, b, 0.0, 0.0, dt / 2.0, 500 + k);
        let s = binomial_sigma(linear_probability(2.0, b, 0.0, 0.0), N) * 2f64.sqrt();
        assert!(
            (coarse - fine).abs() <= 4.0 * s,
            "b = {b}: {coarse} vs {fine}"
        );
        shifts.push(fine - coarse);
    }
    let mean_shift = shifts.iter().sum::<f64>() / shifts.len() as f64;
    assert!(
        mean_shift.abs() < binomial_sigma(0.5, N),
        "mean shift {mean_shift}"
    );
}
