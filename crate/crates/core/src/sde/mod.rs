//! Euler-Maruyama integration of the DOPO quadrature equations.
//!
//! In the frame aligned with the amplified quadrature:
//!
//! ```text
//! dX = [(lambda - 1) X - g |alpha|^2 X + sqrt(2) b_x] dt + sqrt(lambda) dW_1
//! dY = [-(lambda + 1) Y - g |alpha|^2 Y + sqrt(2) b_y] dt + sqrt(lambda) dW_2
//! ```
//!
//! The vacuum is a point mass at the origin in this normalisation; the
//! quantum noise enters only through the `sqrt(lambda)` diffusion.

mod ensemble;
mod schedule;

pub use ensemble::{counter_mix, run_ensemble, run_ensemble_recorded, Ensemble, InitialSampler};
pub use schedule::{PumpAxisSegment, PumpSegment, PumpShape, Saturation, Schedule};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::SQRT_2;
use thiserror::Error;

use crate::model::PhasePoint;
use schedule::segment_lambda;

/// |X| or |Y| beyond this aborts the trajectory.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Largest permitted `(lambda_max - 1) * dt`.
pub const STABILITY_LIMIT: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid integrator config: {0}")]
    InvalidConfig(String),
    #[error("trajectory diverged at tau = {tau}{}", trajectory.map(|i| format!(" (trajectory {i})")).unwrap_or_default())]
    Divergence { tau: f64, trajectory: Option<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub tau_end: f64,
    pub record_stride: usize,
    /// Integrate Y even when it cannot influence X.
    pub track_y: bool,
}

impl IntegratorConfig {
    pub const DEFAULT_DT: f64 = 0.005;

    pub fn new(dt: f64, tau_end: f64) -> Self {
        Self {
            dt,
            tau_end,
            record_stride: 1,
            track_y: false,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_y(mut self) -> Self {
        self.track_y = true;
        self
    }

    pub fn steps(&self) -> usize {
        (self.tau_end / self.dt + 1e-9).floor() as usize
    }

    pub fn validate(&self, schedule: &Schedule) -> Result<(), SdeError> {
        let bad = |m: String| Err(SdeError::InvalidConfig(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.tau_end.is_finite() && self.tau_end >= self.dt) {
            return bad(format!(
                "tau_end must be >= dt ({}), got {}",
                self.dt, self.tau_end
            ));
        }
        if self.record_stride == 0 {
            return bad("record_stride must be >= 1".into());
        }
        let guard = (schedule.lambda_max() - 1.0) * self.dt;
        if guard > STABILITY_LIMIT {
            return bad(format!(
                "(lambda_max - 1) * dt = {guard} exceeds {STABILITY_LIMIT}; reduce dt"
            ));
        }
        Ok(())
    }
}

/// Sampled path of one trajectory, expressed in the frame of the pump axis
/// active at each sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
    pub seed: u64,
    pub outcome: u8,
    pub final_state: PhasePoint,
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn advance(
    x: f64,
    y: f64,
    lambda: f64,
    bias_x: f64,
    bias_y: f64,
    g: f64,
    dt: f64,
    sqrt_dt: f64,
    n1: f64,
    n2: f64,
) -> (f64, f64) {
    let sat = g * (x * x + y * y);
    let amp = lambda.sqrt() * sqrt_dt;
    let nx = x + ((lambda - 1.0) * x - sat * x + SQRT_2 * bias_x) * dt + amp * n1;
    let ny = y + (-(lambda + 1.0) * y - sat * y + SQRT_2 * bias_y) * dt + amp * n2;
    (nx, ny)
}

/// One Euler-Maruyama step from `tau` to `tau + dt` with the supplied
/// standard-normal draws.
pub fn step(
    state: PhasePoint,
    tau: f64,
    schedule: &Schedule,
    dt: f64,
    noise: (f64, f64),
) -> PhasePoint {
    let lambda = schedule.lambda_at(tau);
    let b = schedule.bias.amplitude_at(tau);
    let (s, c) = (schedule.bias.phase - schedule.axis_at(tau)).sin_cos();
    let (x, y) = advance(
        state.re,
        state.im,
        lambda,
        b * c,
        b * s,
        schedule.saturation.strength(),
        dt,
        dt.sqrt(),
        noise.0,
        noise.1,
    );
    PhasePoint::new(x, y)
}

pub(crate) struct RunOutput {
    pub final_state: PhasePoint,
}

/// Core time-stepping loop shared by [`integrate`] and the ensemble runner.
///
/// When `settle` is set the loop stops as soon as the outcome is fixed (see
/// [`Schedule::settle_threshold`]); the returned state is then the state at
/// that moment.
pub(crate) fn simulate(
    initial: PhasePoint,
    schedule: &Schedule,
    cfg: &IntegratorConfig,
    seed: u64,
    settle: bool,
    mut record: impl FnMut(f64, PhasePoint),
) -> Result<RunOutput, SdeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let two_d = cfg.track_y || schedule.couples_quadratures();
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();
    let n_steps = cfg.steps();
    let stride = cfg.record_stride;
    let g = schedule.saturation.strength();
    let bias = schedule.bias;
    let settle_after = schedule.last_change();
    let settle_at = if settle {
        schedule.settle_threshold()
    } else {
        None
    };

    let mut pump_idx = 0;
    let mut axis_idx = 0;
    let mut axis = schedule.pump_axis[0].axis;
    let (mut bs, mut bc) = (bias.phase - axis).sin_cos();

    let mut x = initial.re;
    let mut y = if two_d { initial.im } else { 0.0 };

    for k in 0..=n_steps {
        let tau = k as f64 * dt;
        while axis_idx + 1 < schedule.pump_axis.len()
            && schedule.pump_axis[axis_idx + 1].start <= tau
        {
            axis_idx += 1;
            let next = schedule.pump_axis[axis_idx].axis;
            let p = PhasePoint::new(x, y).rotated(-(next - axis));
            x = p.re;
            y = p.im;
            axis = next;
            (bs, bc) = (bias.phase - axis).sin_cos();
        }
        if k % stride == 0 {
            record(tau, PhasePoint::new(x, y));
        }
        if k == n_steps {
            break;
        }
        if let Some(threshold) = settle_at {
            if tau >= settle_after && x.abs() > threshold {
                break;
            }
        }
        while pump_idx + 1 < schedule.pump.len() && schedule.pump[pump_idx + 1].start <= tau {
            pump_idx += 1;
        }
        let lambda = segment_lambda(&schedule.pump[pump_idx], tau);
        let b = bias.amplitude_at(tau);
        let n1: f64 = rng.sample(StandardNormal);
        let n2: f64 = if two_d {
            rng.sample(StandardNormal)
        } else {
            0.0
        };
        let (bx, by) = if two_d {
            (b * bc, b * bs)
        } else {
            (b * bc, 0.0)
        };
        (x, y) = advance(x, y, lambda, bx, by, g, dt, sqrt_dt, n1, n2);
        if !(x.abs() <= DIVERGENCE_LIMIT && y.abs() <= DIVERGENCE_LIMIT) {
            return Err(SdeError::Divergence {
                tau: tau + dt,
                trajectory: None,
            });
        }
    }
    Ok(RunOutput {
        final_state: PhasePoint::new(x, y),
    })
}

/// Integrates one trajectory from `initial`, recording every
/// `record_stride` steps. Deterministic in `(initial, schedule, cfg, seed)`.
pub fn integrate(
    initial: PhasePoint,
    schedule: &Schedule,
    cfg: &IntegratorConfig,
    seed: u64,
) -> Result<Trajectory, SdeError> {
    schedule.validate()?;
    cfg.validate(schedule)?;
    if !initial.is_finite() {
        return Err(SdeError::InvalidConfig(
            "initial state must be finite".into(),
        ));
    }
    let two_d = cfg.track_y || schedule.couples_quadratures();
    let capacity = cfg.steps() / cfg.record_stride + 1;
    let mut times = Vec::with_capacity(capacity);
    let mut xs = Vec::with_capacity(capacity);
    let mut ys = Vec::with_capacity(if two_d { capacity } else { 0 });
    let out = simulate(initial, schedule, cfg, seed, false, |t, p| {
        times.push(t);
        xs.push(p.re);
        if two_d {
            ys.push(p.im);
        }
    })?;
    let mut traj = Trajectory {
        times,
        x: xs,
        y: two_d.then_some(ys),
        seed,
        outcome: 0,
        final_state: out.final_state,
    };
    traj.outcome = classify(&traj);
    Ok(traj)
}

/// 1 for the phase-0 steady state (final X >= 0), 0 otherwise.
pub fn classify(traj: &Trajectory) -> u8 {
    outcome_of(traj.final_state)
}

pub(crate) fn outcome_of(state: PhasePoint) -> u8 {
    u8::from(state.re >= 0.0)
}
