//! Domain types and closed-form references for the degenerate OPO.
//!
//! Conventions: all amplitudes are dimensionless, time is measured in cavity
//! lifetimes, and `lambda` is the pump strength relative to threshold. The
//! Husimi function of vacuum is `exp(-|alpha|^2) / pi`, i.e. a variance of
//! 1/2 per quadrature in `alpha` units.

use std::f64::consts::{PI, SQRT_2};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("lambda = {0} is not above threshold (requires lambda > 1)")]
    BelowThreshold(f64),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// A point in phase space, `alpha = re + i im`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhasePoint {
    pub re: f64,
    pub im: f64,
}

impl PhasePoint {
    pub const ORIGIN: PhasePoint = PhasePoint { re: 0.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    /// Rotates the point counter-clockwise by `angle` radians.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            re: c * self.re - s * self.im,
            im: s * self.re + c * self.im,
        }
    }
}

/// Pump strength and tomography angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpParams {
    pub lambda: f64,
    pub theta: f64,
}

impl PumpParams {
    pub fn new(lambda: f64, theta: f64) -> Result<Self, ModelError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(invalid(
                "lambda",
                format!("must be finite and >= 0, got {lambda}"),
            ));
        }
        if !(0.0..PI).contains(&theta) {
            return Err(invalid(
                "theta",
                format!("must lie in [0, pi), got {theta}"),
            ));
        }
        Ok(Self { lambda, theta })
    }
}

/// Injected bias field: a step of `amplitude` switched on at `injection_delay`.
///
/// Before the injection a residual of `extinction_floor` (same sign and phase
/// as the amplitude) leaks through, modelling a modulator with finite
/// extinction ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasSpec {
    pub amplitude: f64,
    pub injection_delay: f64,
    pub phase: f64,
    pub extinction_floor: f64,
}

impl BiasSpec {
    /// An ideal step bias with zero phase.
    pub fn step(amplitude: f64, injection_delay: f64) -> Self {
        Self {
            amplitude,
            injection_delay,
            phase: 0.0,
            extinction_floor: 0.0,
        }
    }

    pub fn none() -> Self {
        Self::step(0.0, 0.0)
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    pub fn with_extinction_floor(mut self, floor: f64) -> Self {
        self.extinction_floor = floor;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.amplitude.is_finite() {
            return Err(invalid("amplitude", "must be finite"));
        }
        if !self.phase.is_finite() {
            return Err(invalid("phase", "must be finite"));
        }
        if !(self.injection_delay.is_finite() && self.injection_delay >= 0.0) {
            return Err(invalid(
                "injection_delay",
                format!("must be >= 0, got {}", self.injection_delay),
            ));
        }
        if !(self.extinction_floor.is_finite() && self.extinction_floor >= 0.0) {
            return Err(invalid(
                "extinction_floor",
                format!("must be >= 0, got {}", self.extinction_floor),
            ));
        }
        if self.amplitude != 0.0 && self.extinction_floor > self.amplitude.abs() {
            return Err(invalid(
                "extinction_floor",
                format!(
                    "must not exceed |amplitude| = {}, got {}",
                    self.amplitude.abs(),
                    self.extinction_floor
                ),
            ));
        }
        Ok(())
    }

    /// Signed bias amplitude acting at time `tau`.
    pub fn amplitude_at(&self, tau: f64) -> f64 {
        if tau >= self.injection_delay {
            self.amplitude
        } else if self.amplitude < 0.0 {
            -self.extinction_floor
        } else {
            self.extinction_floor
        }
    }
}

/// A Gaussian phase-space distribution described by its principal axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianStateSpec {
    pub mean: PhasePoint,
    pub var_major: f64,
    pub var_minor: f64,
    pub axis_angle: f64,
}

impl GaussianStateSpec {
    /// Husimi function of the vacuum, optionally displaced.
    pub fn coherent(mean: PhasePoint) -> Self {
        Self {
            mean,
            var_major: 0.5,
            var_minor: 0.5,
            axis_angle: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.mean.is_finite() {
            return Err(invalid("mean", "must be finite"));
        }
        if !(self.var_minor.is_finite() && self.var_minor > 0.0) {
            return Err(invalid(
                "var_minor",
                format!("must be > 0, got {}", self.var_minor),
            ));
        }
        if !(self.var_major.is_finite() && self.var_major >= self.var_minor) {
            return Err(invalid(
                "var_major",
                format!(
                    "must be finite and >= var_minor ({}), got {}",
                    self.var_minor, self.var_major
                ),
            ));
        }
        if !self.axis_angle.is_finite() {
            return Err(invalid("axis_angle", "must be finite"));
        }
        Ok(())
    }

    /// Variance of the projection onto the axis at angle `theta`.
    pub fn marginal_variance(&self, theta: f64) -> f64 {
        let (s, c) = (theta - self.axis_angle).sin_cos();
        self.var_major * c * c + self.var_minor * s * s
    }
}

/// `<f^2(tau)>` for the weighted Wiener integral of the linear stage.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FVariance(f64);

impl FVariance {
    pub fn new(value: f64) -> Result<Self, ModelError> {
        if value.is_finite() && value >= 0.0 {
            Ok(Self(value))
        } else {
            Err(invalid("value", format!("must be >= 0, got {value}")))
        }
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

fn require_above_threshold(lambda: f64) -> Result<f64, ModelError> {
    if lambda.is_finite() && lambda > 1.0 {
        Ok(lambda - 1.0)
    } else {
        Err(ModelError::BelowThreshold(lambda))
    }
}

/// Gauss error function (double precision, ~1 ulp).
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `ln Phi(z)`, accurate deep in the lower tail.
pub fn ln_normal_cdf(z: f64) -> f64 {
    if z > -30.0 {
        normal_cdf(z).ln()
    } else {
        // Asymptotic Mills-ratio expansion.
        let z2 = z * z;
        -0.5 * z2 - (-z * (2.0 * PI).sqrt()).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// Husimi Q function of the vacuum.
pub fn vacuum_q(alpha: PhasePoint) -> f64 {
    (-alpha.norm_sqr()).exp() / PI
}

/// Normalised 2D Gaussian density of `spec` evaluated at `alpha`.
pub fn gaussian_q(alpha: PhasePoint, spec: &GaussianStateSpec) -> Result<f64, ModelError> {
    spec.validate()?;
    let d =
        PhasePoint::new(alpha.re - spec.mean.re, alpha.im - spec.mean.im).rotated(-spec.axis_angle);
    let quad = d.re * d.re / spec.var_major + d.im * d.im / spec.var_minor;
    Ok((-0.5 * quad).exp() / (2.0 * PI * (spec.var_major * spec.var_minor).sqrt()))
}

/// Phase-space shift equivalent to injecting bias `b` at the start of
/// above-threshold amplification: `sqrt(2) b / (lambda - 1)`.
pub fn displacement(b: f64, lambda: f64) -> Result<f64, ModelError> {
    let gain = require_above_threshold(lambda)?;
    Ok(SQRT_2 * b / gain)
}

/// Variance of `f(tau) = int_0^tau exp(-(lambda-1)s) dW(s)`.
pub fn f_variance(tau: f64, lambda: f64) -> Result<FVariance, ModelError> {
    let gain = require_above_threshold(lambda)?;
    if !(tau.is_finite() && tau >= 0.0) && tau != f64::INFINITY {
        return Err(invalid("tau", format!("must be >= 0, got {tau}")));
    }
    // -expm1 keeps precision for small tau.
    FVariance::new(-(-2.0 * gain * tau).exp_m1() / (2.0 * gain))
}

/// Probability of the phase-0 steady state for a vacuum start and an ideal
/// step bias, in the long-time limit.
pub fn erf_probability(bias: &BiasSpec, lambda: f64) -> Result<f64, ModelError> {
    let gain = require_above_threshold(lambda)?;
    bias.validate()?;
    if bias.extinction_floor != 0.0 {
        return Err(invalid(
            "extinction_floor",
            "closed form assumes an ideal step bias (floor = 0)",
        ));
    }
    let arg = SQRT_2 * bias.amplitude * (-gain * bias.injection_delay).exp()
        / (lambda.sqrt() * gain.sqrt());
    Ok(0.5 * (1.0 + erf(arg)))
}

/// Standard deviation, in bias units, of the erf transition predicted for a
/// vacuum start: `sqrt(lambda) sqrt(lambda-1) exp((lambda-1) tau0) / 2`.
pub fn erf_width(lambda: f64, tau0: f64) -> Result<f64, ModelError> {
    let gain = require_above_threshold(lambda)?;
    Ok((lambda * gain).sqrt() * (gain * tau0).exp() / 2.0)
}

/// Factor mapping bias units to displacement units for a bias injected at
/// `tau0`: `x = scale * b` with `scale = sqrt(2) exp(-(lambda-1) tau0) / (lambda-1)`.
pub fn bias_to_displacement_scale(lambda: f64, tau0: f64) -> Result<f64, ModelError> {
    let gain = require_above_threshold(lambda)?;
    Ok(SQRT_2 * (-gain * tau0).exp() / gain)
}

/// Converts an erf transition width in bias units into the standard
/// deviation of the marginal Q function in displacement units.
pub fn theoretical_marginal(sigma_b: f64, lambda: f64, tau0: f64) -> Result<f64, ModelError> {
    Ok(sigma_b * bias_to_displacement_scale(lambda, tau0)?)
}

/// Variance, in displacement units, that the above-threshold amplification
/// adds to any initial distribution: `lambda / (2 (lambda - 1))`.
///
/// A point-mass vacuum start therefore reads out as a Gaussian marginal of
/// this variance; it equals 1 at `lambda = 2`.
pub fn readout_variance(lambda: f64) -> Result<f64, ModelError> {
    let gain = require_above_threshold(lambda)?;
    Ok(lambda / (2.0 * gain))
}

/// Quadrature variances `(x, y)` reached by relaxing from a point at the
/// origin for `relax_time` under the below-threshold linear dynamics.
///
/// X is an Ornstein-Uhlenbeck process with rate `1 - lambda` and Y one with
/// rate `1 + lambda`, both driven by noise of strength `sqrt(lambda)`.
pub fn relaxed_quadrature_variances(
    lambda: f64,
    relax_time: f64,
) -> Result<(f64, f64), ModelError> {
    if !(lambda.is_finite() && (0.0..1.0).contains(&lambda)) {
        return Err(invalid(
            "lambda_prep",
            format!("must lie in [0, 1), got {lambda}"),
        ));
    }
    if !(relax_time.is_finite() && relax_time > 0.0) {
        return Err(invalid(
            "relax_time",
            format!("must be > 0, got {relax_time}"),
        ));
    }
    let ou = |rate: f64| -lambda * (-2.0 * rate * relax_time).exp_m1() / (2.0 * rate);
    Ok((ou(1.0 - lambda), ou(1.0 + lambda)))
}

/// Husimi-function variances of the intracavity squeezed vacuum relative to
/// the vacuum: `(1 / (1 - lambda), 1 / (1 + lambda))` for the amplified and
/// deamplified quadratures.
pub fn squeezed_vacuum_q_ratios(lambda_prep: f64) -> Result<(f64, f64), ModelError> {
    if !(lambda_prep.is_finite() && (0.0..1.0).contains(&lambda_prep)) {
        return Err(invalid(
            "lambda_prep",
            format!("must lie in [0, 1), got {lambda_prep}"),
        ));
    }
    Ok((1.0 / (1.0 - lambda_prep), 1.0 / (1.0 + lambda_prep)))
}

/// Squeezing of the deamplified quadrature in dB; tends to `10 log10 2` as
/// `lambda_prep -> 1`.
pub fn squeezed_vacuum_db(lambda_prep: f64) -> Result<f64, ModelError> {
    let (_, minor) = squeezed_vacuum_q_ratios(lambda_prep)?;
    Ok(-10.0 * minor.log10())
}
