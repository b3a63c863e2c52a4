//! Virtual experiments: state preparation and bias/angle/delay sweeps that
//! produce bias-probability curves.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{self, BiasSpec, GaussianStateSpec, ModelError, PhasePoint};
use crate::sde::{
    counter_mix, run_ensemble, simulate, InitialSampler, IntegratorConfig, Saturation, Schedule,
    SdeError,
};

/// Smallest number of trajectories per bias point.
pub const MIN_TRAJECTORIES: u64 = 100;

/// Two-sided 95% normal quantile used for Wilson intervals.
pub const Z_95: f64 = 1.959_963_984_540_054;

const PREP_STREAM: u64 = 0x5052_4550; // "PREP"

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("{field}: {reason}")]
    Validation { field: String, reason: String },
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ProtocolError {
    ProtocolError::Validation {
        field: field.into(),
        reason: reason.into(),
    }
}

/// How the intracavity state is prepared before the measurement pump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PreparationSpec {
    /// The vacuum: a point mass at the origin in the SDE normalisation.
    VacuumPoint,
    /// Samples drawn directly from a Gaussian.
    AnalyticGaussian(GaussianStateSpec),
    /// Relaxation from the origin under a below-threshold pump.
    SdeRelaxation { lambda_prep: f64, relax_time: f64 },
}

impl PreparationSpec {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        match self {
            PreparationSpec::VacuumPoint => Ok(()),
            PreparationSpec::AnalyticGaussian(spec) => spec.validate().map_err(ProtocolError::from),
            PreparationSpec::SdeRelaxation {
                lambda_prep,
                relax_time,
            } => {
                if !(lambda_prep.is_finite() && (0.0..1.0).contains(lambda_prep)) {
                    return Err(invalid(
                        "lambda_prep",
                        format!("must lie in [0, 1), got {lambda_prep}"),
                    ));
                }
                if !(relax_time.is_finite() && *relax_time > 0.0) {
                    return Err(invalid(
                        "relax_time",
                        format!("must be > 0, got {relax_time}"),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Variance of the prepared distribution projected on the axis at `theta`.
    pub fn variance_along(&self, theta: f64) -> Result<f64, ProtocolError> {
        Ok(match self {
            PreparationSpec::VacuumPoint => 0.0,
            PreparationSpec::AnalyticGaussian(spec) => spec.marginal_variance(theta),
            PreparationSpec::SdeRelaxation {
                lambda_prep,
                relax_time,
            } => {
                let (vx, vy) = model::relaxed_quadrature_variances(*lambda_prep, *relax_time)?;
                let (s, c) = theta.sin_cos();
                vx * c * c + vy * s * s
            }
        })
    }

    pub fn describe(&self) -> String {
        match self {
            PreparationSpec::VacuumPoint => "vacuum_point".into(),
            PreparationSpec::AnalyticGaussian(g) => format!(
                "analytic_gaussian(mean=({},{}),var_major={},var_minor={},axis_angle={})",
                g.mean.re, g.mean.im, g.var_major, g.var_minor, g.axis_angle
            ),
            PreparationSpec::SdeRelaxation {
                lambda_prep,
                relax_time,
            } => {
                format!("sde_relaxation(lambda_prep={lambda_prep},relax_time={relax_time})")
            }
        }
    }
}

/// Indexed sampler of prepared initial states.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSampler {
    spec: PreparationSpec,
    seed: u64,
    rotation: f64,
    dt: f64,
}

impl PreparedSampler {
    /// Rotates every sample counter-clockwise by `angle`.
    pub fn rotated(mut self, angle: f64) -> Self {
        self.rotation += angle;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn spec(&self) -> &PreparationSpec {
        &self.spec
    }

    fn draw(&self, index: u64) -> Result<PhasePoint, SdeError> {
        let stream = counter_mix(self.seed, index);
        match &self.spec {
            PreparationSpec::VacuumPoint => Ok(PhasePoint::ORIGIN),
            PreparationSpec::AnalyticGaussian(g) => {
                let mut rng = ChaCha8Rng::seed_from_u64(stream);
                let u: f64 = rng.sample(StandardNormal);
                let v: f64 = rng.sample(StandardNormal);
                let d = PhasePoint::new(g.var_major.sqrt() * u, g.var_minor.sqrt() * v)
                    .rotated(g.axis_angle);
                Ok(PhasePoint::new(g.mean.re + d.re, g.mean.im + d.im))
            }
            PreparationSpec::SdeRelaxation {
                lambda_prep,
                relax_time,
            } => {
                let schedule = Schedule::constant(*lambda_prep);
                let cfg = IntegratorConfig::new(self.dt, *relax_time).with_y();
                simulate(
                    PhasePoint::ORIGIN,
                    &schedule,
                    &cfg,
                    stream,
                    false,
                    |_, _| {},
                )
                .map(|o| o.final_state)
            }
        }
    }
}

impl InitialSampler for PreparedSampler {
    fn sample(&self, index: u64) -> Result<PhasePoint, SdeError> {
        let p = self.draw(index)?;
        Ok(if self.rotation == 0.0 {
            p
        } else {
            p.rotated(self.rotation)
        })
    }
}

pub fn prepare_initial_sampler(
    spec: &PreparationSpec,
    seed: u64,
) -> Result<PreparedSampler, ProtocolError> {
    spec.validate()?;
    Ok(PreparedSampler {
        spec: *spec,
        seed,
        rotation: 0.0,
        dt: IntegratorConfig::DEFAULT_DT,
    })
}

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if k == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if k == n {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

/// Settings of the above-threshold measurement stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementSettings {
    pub lambda: f64,
    pub saturation: Saturation,
    /// Linear pump rise time; 0 for an ideal step.
    pub rise_time: f64,
    /// Residual bias leaking through before injection.
    pub extinction_floor: f64,
    pub dt: f64,
    /// Overrides the default integration horizon.
    pub horizon: Option<f64>,
}

impl MeasurementSettings {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            saturation: Saturation::None,
            rise_time: 0.0,
            extinction_floor: 0.0,
            dt: IntegratorConfig::DEFAULT_DT,
            horizon: None,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.lambda.is_finite() && self.lambda > 1.0) {
            return Err(invalid(
                "lambda",
                format!("measurement requires lambda > 1, got {}", self.lambda),
            ));
        }
        if let Saturation::Cubic { g } = self.saturation {
            if !(g.is_finite() && g > 0.0) {
                return Err(invalid("saturation", format!("g must be > 0, got {g}")));
            }
        }
        if !(self.rise_time.is_finite() && self.rise_time >= 0.0) {
            return Err(invalid(
                "rise_time",
                format!("must be >= 0, got {}", self.rise_time),
            ));
        }
        if !(self.extinction_floor.is_finite() && self.extinction_floor >= 0.0) {
            return Err(invalid(
                "extinction_floor",
                format!("must be >= 0, got {}", self.extinction_floor),
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if let Some(h) = self.horizon {
            if !(h.is_finite() && h > 0.0) {
                return Err(invalid("horizon", format!("must be > 0, got {h}")));
            }
        }
        Ok(())
    }

    /// Integration horizon for a bias injected at `tau0`.
    ///
    /// Linear stage: `max(6 / (lambda - 1), 6)` lifetimes after the later of
    /// injection and pump rise. With saturation the run lasts at least 20.
    pub fn horizon(&self, tau0: f64) -> f64 {
        if let Some(h) = self.horizon {
            return h;
        }
        let settle = (6.0 / (self.lambda - 1.0)).max(6.0);
        let linear = tau0.max(self.rise_time) + settle;
        match self.saturation {
            Saturation::None => linear,
            Saturation::Cubic { .. } => linear.max(20.0),
        }
    }

    fn bias(&self, amplitude: f64, tau0: f64, phase: f64) -> BiasSpec {
        let floor = if amplitude == 0.0 {
            0.0
        } else {
            self.extinction_floor.min(amplitude.abs())
        };
        BiasSpec::step(amplitude, tau0)
            .with_phase(phase)
            .with_extinction_floor(floor)
    }

    fn base_schedule(&self) -> Schedule {
        Schedule::with_rise_time(self.lambda, self.rise_time).saturation(self.saturation)
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.saturation, Saturation::None)
    }
}

/// Estimated steady-state probability with its Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityEstimate {
    pub p_hat: f64,
    pub n: u64,
    pub n_positive: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl ProbabilityEstimate {
    fn from_counts(n_positive: u64, n: u64) -> Self {
        let (ci_low, ci_high) = wilson_interval(n_positive, n, Z_95);
        Self {
            p_hat: n_positive as f64 / n as f64,
            n,
            n_positive,
            ci_low,
            ci_high,
        }
    }
}

fn check_count(n: u64) -> Result<(), ProtocolError> {
    if n < MIN_TRAJECTORIES {
        return Err(invalid(
            "n_per_point",
            format!("must be at least {MIN_TRAJECTORIES}, got {n}"),
        ));
    }
    Ok(())
}

/// Probability of the phase-0 steady state after preparing `prep`, rotating
/// it by `-theta` into the pump frame and injecting `bias` (amplitude and
/// delay; phase relative to the pump axis).
pub fn measure_probability(
    prep: &PreparationSpec,
    bias: &BiasSpec,
    theta: f64,
    settings: &MeasurementSettings,
    n: u64,
    seed: u64,
) -> Result<ProbabilityEstimate, ProtocolError> {
    settings.validate()?;
    check_count(n)?;
    let sampler = prepare_initial_sampler(prep, counter_mix(seed, PREP_STREAM))?
        .with_dt(settings.dt)
        .rotated(-theta);
    let bias = settings.bias(bias.amplitude, bias.injection_delay, bias.phase);
    let schedule = settings.base_schedule().bias(bias);
    let cfg = IntegratorConfig::new(settings.dt, settings.horizon(bias.injection_delay));
    let ensemble = run_ensemble(&sampler, &schedule, &cfg, n, seed)?;
    Ok(ProbabilityEstimate::from_counts(
        ensemble.n_positive,
        ensemble.n_total,
    ))
}

/// One measured point of a bias-probability curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub b: f64,
    pub p_hat: f64,
    pub n: u64,
    pub n_positive: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl From<(f64, ProbabilityEstimate)> for CurvePoint {
    fn from((b, e): (f64, ProbabilityEstimate)) -> Self {
        Self {
            b,
            p_hat: e.p_hat,
            n: e.n,
            n_positive: e.n_positive,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
        }
    }
}

/// Steady-state probability versus bias amplitude at fixed angle and delay.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasProbabilityCurve {
    pub theta: f64,
    pub tau0: f64,
    pub lambda: f64,
    pub seed: u64,
    pub preparation: String,
    pub schedule: String,
    pub points: Vec<CurvePoint>,
}

impl BiasProbabilityCurve {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.points.windows(2).any(|w| !(w[1].b > w[0].b)) {
            return Err(invalid("points", "bias values must be strictly increasing"));
        }
        for (i, p) in self.points.iter().enumerate() {
            let ok = (0.0..=1.0).contains(&p.p_hat)
                && p.n > 0
                && p.n_positive <= p.n
                && p.ci_low <= p.p_hat
                && p.p_hat <= p.ci_high;
            if !ok {
                return Err(invalid(
                    format!("points[{i}]"),
                    "inconsistent probability record",
                ));
            }
        }
        Ok(())
    }
}

/// Bias amplitudes to sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum BiasGrid {
    Fixed(Vec<f64>),
    /// `points` values spanning `+-span_widths` predicted transition widths.
    Auto {
        points: usize,
        span_widths: f64,
    },
}

impl Default for BiasGrid {
    fn default() -> Self {
        BiasGrid::Auto {
            points: 21,
            span_widths: 4.0,
        }
    }
}

/// Full description of a sweep over bias, angle and delay.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub preparation: PreparationSpec,
    pub measurement: MeasurementSettings,
    pub b_grid: BiasGrid,
    pub theta_grid: Vec<f64>,
    pub tau0_grid: Vec<f64>,
    pub n_per_point: u64,
    pub seed: u64,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

impl SweepPlan {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        self.preparation.validate()?;
        self.measurement.validate()?;
        check_count(self.n_per_point)?;
        match &self.b_grid {
            BiasGrid::Fixed(b) => {
                if b.is_empty() {
                    return Err(invalid("b_grid", "must not be empty"));
                }
                if b.iter().any(|v| !v.is_finite()) || !strictly_increasing(b) {
                    return Err(invalid(
                        "b_grid",
                        "values must be finite and strictly increasing",
                    ));
                }
            }
            BiasGrid::Auto {
                points,
                span_widths,
            } => {
                if *points < 2 {
                    return Err(invalid("b_points", format!("must be >= 2, got {points}")));
                }
                if !(span_widths.is_finite() && *span_widths > 0.0) {
                    return Err(invalid(
                        "b_span_widths",
                        format!("must be > 0, got {span_widths}"),
                    ));
                }
            }
        }
        if self.theta_grid.is_empty() {
            return Err(invalid("theta_grid", "must not be empty"));
        }
        if self.theta_grid.iter().any(|t| !(0.0..PI).contains(t))
            || !strictly_increasing(&self.theta_grid)
        {
            return Err(invalid(
                "theta_grid",
                "angles must be strictly increasing within [0, pi)",
            ));
        }
        if self.tau0_grid.is_empty() {
            return Err(invalid("tau0_grid", "must not be empty"));
        }
        if self.tau0_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0))
            || !strictly_increasing(&self.tau0_grid)
        {
            return Err(invalid(
                "tau0_grid",
                "delays must be >= 0 and strictly increasing",
            ));
        }
        Ok(())
    }

    /// Transition width (bias units) expected when measuring the prepared
    /// state along `theta` with injection at `tau0`.
    pub fn predicted_width(&self, theta: f64, tau0: f64) -> Result<f64, ProtocolError> {
        let lambda = self.measurement.lambda;
        let prep = self.preparation.variance_along(theta)?;
        if prep == 0.0 {
            return Ok(model::erf_width(lambda, tau0)?);
        }
        let var = model::readout_variance(lambda)? + prep;
        Ok(var.sqrt() / model::bias_to_displacement_scale(lambda, tau0)?)
    }

    fn bias_values(&self, width: f64) -> Vec<f64> {
        match &self.b_grid {
            BiasGrid::Fixed(b) => b.clone(),
            BiasGrid::Auto {
                points,
                span_widths,
            } => {
                let half = span_widths * width;
                let n = *points;
                (0..n)
                    .map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64)
                    .collect()
            }
        }
    }

    /// Seed of the point keyed by `(theta, tau0, b)`.
    pub fn point_seed(&self, theta: f64, tau0: f64, b: f64) -> u64 {
        let s = counter_mix(self.seed, theta.to_bits());
        let s = counter_mix(s, tau0.to_bits());
        counter_mix(s, b.to_bits())
    }
}

fn curve_from_points(
    plan: &SweepPlan,
    theta: f64,
    tau0: f64,
    schedule: String,
    points: Vec<CurvePoint>,
) -> BiasProbabilityCurve {
    BiasProbabilityCurve {
        theta,
        tau0,
        lambda: plan.measurement.lambda,
        seed: plan.seed,
        preparation: plan.preparation.describe(),
        schedule,
        points,
    }
}

/// Sweeps the bias at one angle and delay.
pub fn sweep_bias(
    plan: &SweepPlan,
    theta: f64,
    tau0: f64,
) -> Result<BiasProbabilityCurve, ProtocolError> {
    plan.validate()?;
    let width = plan.predicted_width(theta, tau0)?;
    let values = plan.bias_values(width);
    let points = values
        .par_iter()
        .map(|&b| {
            let bias = BiasSpec::step(b, tau0);
            let est = measure_probability(
                &plan.preparation,
                &bias,
                theta,
                &plan.measurement,
                plan.n_per_point,
                plan.point_seed(theta, tau0, b),
            )?;
            Ok(CurvePoint::from((b, est)))
        })
        .collect::<Vec<Result<CurvePoint, ProtocolError>>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let schedule = plan
        .measurement
        .base_schedule()
        .bias(plan.measurement.bias(1.0, tau0, 0.0))
        .describe();
    Ok(curve_from_points(plan, theta, tau0, schedule, points))
}

/// Sweeps the bias for every `(theta, tau0)` in the plan, angle-major.
pub fn sweep_phase(plan: &SweepPlan) -> Result<Vec<BiasProbabilityCurve>, ProtocolError> {
    plan.validate()?;
    let mut curves = Vec::with_capacity(plan.theta_grid.len() * plan.tau0_grid.len());
    for &theta in &plan.theta_grid {
        for &tau0 in &plan.tau0_grid {
            curves.push(sweep_bias(plan, theta, tau0)?);
        }
    }
    Ok(curves)
}

/// Quadrature variances at `tau` of a vacuum start amplified along axis 0.
fn amplified_vacuum_variances(lambda: f64, tau: f64) -> (f64, f64) {
    let gain = lambda - 1.0;
    let vx = lambda * (2.0 * gain * tau).exp_m1() / (2.0 * gain);
    let vy = -lambda * (-2.0 * (lambda + 1.0) * tau).exp_m1() / (2.0 * (lambda + 1.0));
    (vx, vy)
}

/// Width expected for the dynamics scan, where the vacuum evolves under the
/// pump aligned with axis 0 and the amplified axis is switched to `theta` at
/// the injection time.
pub fn predicted_dynamics_width(lambda: f64, theta: f64, tau0: f64) -> Result<f64, ProtocolError> {
    if theta == 0.0 {
        return Ok(model::erf_width(lambda, tau0)?);
    }
    let (vx, vy) = amplified_vacuum_variances(lambda, tau0);
    let (s, c) = theta.sin_cos();
    let var = vx * c * c + vy * s * s + model::readout_variance(lambda)?;
    Ok(var.sqrt() / model::bias_to_displacement_scale(lambda, 0.0)?)
}

/// Time at which the cubic saturation reaches 10% of the linear gain for an
/// amplified vacuum; beyond it the erf model no longer describes the curve.
pub fn nonlinear_onset(lambda: f64, g: f64) -> Option<f64> {
    if lambda <= 1.0 || g <= 0.0 {
        return None;
    }
    let gain = lambda - 1.0;
    Some((1.0 + 0.2 * gain * gain / (g * lambda)).ln() / (2.0 * gain))
}

/// Delay scan of the vacuum under an above-threshold pump.
///
/// The pump amplifies axis 0 from `tau = 0`. At each delay `tau0` the
/// amplified axis is switched to the tomography angle and the bias is
/// injected along it, probing the state reached at `tau0`.
pub fn dynamics_scan(plan: &SweepPlan) -> Result<Vec<BiasProbabilityCurve>, ProtocolError> {
    plan.validate()?;
    if plan.preparation != PreparationSpec::VacuumPoint {
        return Err(invalid(
            "preparation",
            "dynamics scans start from the vacuum",
        ));
    }
    let m = &plan.measurement;
    let mut curves = Vec::new();
    for &theta in &plan.theta_grid {
        for &tau0 in &plan.tau0_grid {
            let width = predicted_dynamics_width(m.lambda, theta, tau0)?;
            let values = plan.bias_values(width);
            let make_schedule = |b: f64| {
                let s = m.base_schedule().bias(m.bias(b, tau0, theta));
                if theta != 0.0 {
                    s.switch_axis(tau0, theta)
                } else {
                    s
                }
            };
            let cfg = IntegratorConfig::new(m.dt, m.horizon(tau0));
            let points = values
                .par_iter()
                .map(|&b| {
                    let e = run_ensemble(
                        &PhasePoint::ORIGIN,
                        &make_schedule(b),
                        &cfg,
                        plan.n_per_point,
                        plan.point_seed(theta, tau0, b),
                    )?;
                    Ok(CurvePoint::from((
                        b,
                        ProbabilityEstimate::from_counts(e.n_positive, e.n_total),
                    )))
                })
                .collect::<Vec<Result<CurvePoint, ProtocolError>>>()
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?;
            curves.push(curve_from_points(
                plan,
                theta,
                tau0,
                make_schedule(1.0).describe(),
                points,
            ));
        }
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample_moments(points: &[PhasePoint]) -> (f64, f64, f64, f64) {
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.re).sum::<f64>() / n;
        let my = points.iter().map(|p| p.im).sum::<f64>() / n;
        let vx = points.iter().map(|p| (p.re - mx).powi(2)).sum::<f64>() / (n - 1.0);
        let vy = points.iter().map(|p| (p.im - my).powi(2)).sum::<f64>() / (n - 1.0);
        (mx, my, vx, vy)
    }

    fn draw_all(s: &PreparedSampler, n: u64) -> Vec<PhasePoint> {
        (0..n)
            .into_par_iter()
            .map(|i| s.sample(i).unwrap())
            .collect()
    }

    #[test]
    fn vacuum_sampler_is_origin() {
        let s = prepare_initial_sampler(&PreparationSpec::VacuumPoint, 1)
            .unwrap()
            .rotated(0.7);
        assert!(draw_all(&s, 50).iter().all(|p| *p == PhasePoint::ORIGIN));
    }

    #[test]
    fn gaussian_sampler_moments() {
        let spec = PreparationSpec::AnalyticGaussian(GaussianStateSpec::coherent(PhasePoint::new(
            1.0, 0.0,
        )));
        let pts = draw_all(&prepare_initial_sampler(&spec, 3).unwrap(), 10_000);
        let (mx, my, vx, vy) = sample_moments(&pts);
        let se = (0.5f64 / 10_000.0).sqrt();
        assert!((mx - 1.0).abs() < 3.0 * se, "mean x {mx}");
        assert!(my.abs() < 3.0 * se, "mean y {my}");
        assert!((vx - 0.5).abs() < 0.05 && (vy - 0.5).abs() < 0.05);
    }

    #[test]
    fn relaxation_sampler_reaches_ou_variance() {
        let spec = PreparationSpec::SdeRelaxation {
            lambda_prep: 0.8,
            relax_time: 20.0,
        };
        let pts = draw_all(&prepare_initial_sampler(&spec, 17).unwrap(), 10_000);
        let (_, _, vx, vy) = sample_moments(&pts);
        // Stationary Ornstein-Uhlenbeck variance lambda / (2 (1 - lambda)).
        assert!((vx / 2.0 - 1.0).abs() < 0.05, "var x = {vx}");
        assert!((vy / (0.8 / 3.6) - 1.0).abs() < 0.05, "var y = {vy}");
    }

    #[test]
    fn rejects_bad_preparations() {
        let bad = PreparationSpec::SdeRelaxation {
            lambda_prep: 1.0,
            relax_time: 1.0,
        };
        assert!(prepare_initial_sampler(&bad, 0).is_err());
        let bad = PreparationSpec::SdeRelaxation {
            lambda_prep: 0.5,
            relax_time: 0.0,
        };
        assert!(prepare_initial_sampler(&bad, 0).is_err());
    }

    #[test]
    fn wilson_brackets_and_shrinks() {
        let (lo, hi) = wilson_interval(0, 100, Z_95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo1, hi1) = wilson_interval(500, 1000, Z_95);
        let (lo2, hi2) = wilson_interval(1000, 2000, Z_95);
        assert!(lo1 < 0.5 && hi1 > 0.5);
        let ratio = (hi1 - lo1) / (hi2 - lo2);
        assert_relative_eq!(ratio, 2f64.sqrt(), max_relative = 1e-3);
    }

    #[test]
    fn unbiased_vacuum_is_even() {
        let s = MeasurementSettings::new(2.0);
        for &theta in &[0.0, 1.1] {
            let e = measure_probability(
                &PreparationSpec::VacuumPoint,
                &BiasSpec::none(),
                theta,
                &s,
                4000,
                21,
            )
            .unwrap();
            assert!(e.ci_low <= 0.5 && 0.5 <= e.ci_high, "{e:?}");
        }
    }

    #[test]
    fn negative_state_goes_negative() {
        let spec = PreparationSpec::AnalyticGaussian(GaussianStateSpec {
            mean: PhasePoint::new(-3.0, 0.0),
            var_major: 1e-4,
            var_minor: 1e-4,
            axis_angle: 0.0,
        });
        let e = measure_probability(
            &spec,
            &BiasSpec::none(),
            0.0,
            &MeasurementSettings::new(2.0),
            1000,
            4,
        )
        .unwrap();
        assert!(e.p_hat < 0.01, "{e:?}");
    }

    #[test]
    fn measurement_validation() {
        let s = MeasurementSettings::new(1.0);
        assert!(measure_probability(
            &PreparationSpec::VacuumPoint,
            &BiasSpec::none(),
            0.0,
            &s,
            1000,
            0
        )
        .is_err());
        let s = MeasurementSettings::new(2.0);
        assert!(measure_probability(
            &PreparationSpec::VacuumPoint,
            &BiasSpec::none(),
            0.0,
            &s,
            99,
            0
        )
        .is_err());
    }

    fn plan(prep: PreparationSpec) -> SweepPlan {
        SweepPlan {
            preparation: prep,
            measurement: MeasurementSettings::new(2.0),
            b_grid: BiasGrid::default(),
            theta_grid: vec![0.0],
            tau0_grid: vec![0.0],
            n_per_point: 1000,
            seed: 9,
        }
    }

    #[test]
    fn plan_validation() {
        let mut p = plan(PreparationSpec::VacuumPoint);
        p.n_per_point = 0;
        assert!(matches!(
            sweep_bias(&p, 0.0, 0.0),
            Err(ProtocolError::Validation { .. })
        ));
        let mut p = plan(PreparationSpec::VacuumPoint);
        p.theta_grid.clear();
        assert!(sweep_phase(&p).is_err());
        let mut p = plan(PreparationSpec::VacuumPoint);
        p.theta_grid = vec![0.0, PI];
        assert!(p.validate().is_err());
        let mut p = plan(PreparationSpec::VacuumPoint);
        p.b_grid = BiasGrid::Fixed(vec![0.0, 0.0]);
        assert!(p.validate().is_err());
        let mut p = plan(PreparationSpec::VacuumPoint);
        p.tau0_grid = vec![-1.0];
        assert!(p.validate().is_err());
        let p = plan(PreparationSpec::AnalyticGaussian(
            GaussianStateSpec::coherent(PhasePoint::ORIGIN),
        ));
        assert!(dynamics_scan(&p).is_err());
    }

    #[test]
    fn auto_grid_spans_predicted_width() {
        let p = plan(PreparationSpec::VacuumPoint);
        let w = p.predicted_width(0.0, 0.0).unwrap();
        assert_relative_eq!(w, model::erf_width(2.0, 0.0).unwrap(), max_relative = 1e-12);
        let b = p.bias_values(w);
        assert_eq!(b.len(), 21);
        assert_relative_eq!(b[0], -4.0 * w, max_relative = 1e-12);
        assert_relative_eq!(b[20], 4.0 * w, max_relative = 1e-12);
        assert!(b[10].abs() < 1e-12);
        assert_relative_eq!(
            predicted_dynamics_width(2.0, 0.0, 0.7).unwrap(),
            predicted_dynamics_width(2.0, 1e-300, 0.7).unwrap(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn vacuum_curve_is_antisymmetric() {
        let mut p = plan(PreparationSpec::VacuumPoint);
        p.b_grid = BiasGrid::Auto {
            points: 9,
            span_widths: 3.0,
        };
        let c = sweep_bias(&p, 0.0, 0.0).unwrap();
        c.validate().unwrap();
        let n = c.points.len();
        for i in 0..n / 2 {
            let a = c.points[i];
            let b = c.points[n - 1 - i];
            assert_relative_eq!(a.b, -b.b, max_relative = 1e-12);
            // p(-b) and 1 - p(b) are independent estimates: combine their errors.
            let se = (a.p_hat * (1.0 - a.p_hat) / a.n as f64
                + b.p_hat * (1.0 - b.p_hat) / b.n as f64)
                .sqrt();
            assert!(
                (a.p_hat - (1.0 - b.p_hat)).abs() <= 3.0 * se.max(1.0 / a.n as f64),
                "pair {i}"
            );
        }
    }

    #[test]
    fn single_delay_dynamics_equals_sweep() {
        let mut p = plan(PreparationSpec::VacuumPoint);
        p.b_grid = BiasGrid::Auto {
            points: 5,
            span_widths: 2.0,
        };
        p.n_per_point = 200;
        let a = sweep_bias(&p, 0.0, 0.0).unwrap();
        let b = dynamics_scan(&p).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(a.points, b[0].points);
    }

    #[test]
    fn onset_time() {
        let t = nonlinear_onset(2.0, 0.01).unwrap();
        assert_relative_eq!(t, 11f64.ln() / 2.0, max_relative = 1e-12);
        assert!(nonlinear_onset(2.0, 0.0).is_none());
    }
}
