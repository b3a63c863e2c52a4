use serde::{Deserialize, Serialize};

use super::SdeError;
use crate::model::BiasSpec;

/// Shape of one pump segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PumpShape {
    Constant {
        lambda: f64,
    },
    /// Linear ramp from `from` to `to` over `duration`, then held at `to`.
    Ramp {
        from: f64,
        to: f64,
        duration: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpSegment {
    pub start: f64,
    pub shape: PumpShape,
}

/// Orientation of the amplified quadrature from `start` onwards.
///
/// `axis` is the phase-space angle of the amplified quadrature, i.e. half the
/// optical pump phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpAxisSegment {
    pub start: f64,
    pub axis: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Saturation {
    #[default]
    None,
    /// Isotropic cubic loss `-g |alpha|^2 alpha`.
    Cubic { g: f64 },
}

impl Saturation {
    pub fn strength(&self) -> f64 {
        match self {
            Saturation::None => 0.0,
            Saturation::Cubic { g } => *g,
        }
    }
}

/// Time-dependent pump and bias programme for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub pump: Vec<PumpSegment>,
    pub pump_axis: Vec<PumpAxisSegment>,
    pub bias: BiasSpec,
    pub saturation: Saturation,
}

impl Schedule {
    pub fn constant(lambda: f64) -> Self {
        Self {
            pump: vec![PumpSegment {
                start: 0.0,
                shape: PumpShape::Constant { lambda },
            }],
            pump_axis: vec![PumpAxisSegment {
                start: 0.0,
                axis: 0.0,
            }],
            bias: BiasSpec::none(),
            saturation: Saturation::None,
        }
    }

    /// Pump switched on with a finite rise time, ramping linearly from 0.
    pub fn with_rise_time(lambda: f64, rise_time: f64) -> Self {
        let mut s = Self::constant(lambda);
        if rise_time > 0.0 {
            s.pump[0].shape = PumpShape::Ramp {
                from: 0.0,
                to: lambda,
                duration: rise_time,
            };
        }
        s
    }

    pub fn bias(mut self, bias: BiasSpec) -> Self {
        self.bias = bias;
        self
    }

    pub fn saturation(mut self, saturation: Saturation) -> Self {
        self.saturation = saturation;
        self
    }

    /// Rotates the amplified quadrature to `axis` at time `start`.
    pub fn switch_axis(mut self, start: f64, axis: f64) -> Self {
        if start <= 0.0 {
            self.pump_axis = vec![PumpAxisSegment { start: 0.0, axis }];
        } else {
            self.pump_axis.push(PumpAxisSegment { start, axis });
        }
        self
    }

    pub fn validate(&self) -> Result<(), SdeError> {
        let bad =
            |field: &str, reason: String| SdeError::InvalidSchedule(format!("{field}: {reason}"));
        if self.pump.is_empty() {
            return Err(bad("pump", "at least one segment required".into()));
        }
        if self.pump[0].start != 0.0 {
            return Err(bad("pump[0].start", "first segment must start at 0".into()));
        }
        for (i, w) in self.pump.windows(2).enumerate() {
            if !(w[1].start > w[0].start) {
                return Err(bad(
                    &format!("pump[{}].start", i + 1),
                    "segment times must be strictly increasing".into(),
                ));
            }
        }
        for (i, seg) in self.pump.iter().enumerate() {
            if !seg.start.is_finite() {
                return Err(bad(&format!("pump[{i}].start"), "must be finite".into()));
            }
            let lambdas: &[f64] = match &seg.shape {
                PumpShape::Constant { lambda } => std::slice::from_ref(lambda),
                PumpShape::Ramp { from, to, duration } => {
                    if !(duration.is_finite() && *duration > 0.0) {
                        return Err(bad(
                            &format!("pump[{i}].duration"),
                            format!("ramp duration must be > 0, got {duration}"),
                        ));
                    }
                    if !(from.is_finite() && *from >= 0.0) {
                        return Err(bad(
                            &format!("pump[{i}].from"),
                            format!("lambda must be >= 0, got {from}"),
                        ));
                    }
                    std::slice::from_ref(to)
                }
            };
            for l in lambdas {
                if !(l.is_finite() && *l >= 0.0) {
                    return Err(bad(
                        &format!("pump[{i}].lambda"),
                        format!("lambda must be >= 0, got {l}"),
                    ));
                }
            }
        }
        if self.pump_axis.is_empty() || self.pump_axis[0].start != 0.0 {
            return Err(bad(
                "pump_axis[0].start",
                "first axis segment must start at 0".into(),
            ));
        }
        for (i, w) in self.pump_axis.windows(2).enumerate() {
            if !(w[1].start > w[0].start) {
                return Err(bad(
                    &format!("pump_axis[{}].start", i + 1),
                    "segment times must be strictly increasing".into(),
                ));
            }
        }
        if self
            .pump_axis
            .iter()
            .any(|s| !s.axis.is_finite() || !s.start.is_finite())
        {
            return Err(bad("pump_axis", "values must be finite".into()));
        }
        if let Saturation::Cubic { g } = self.saturation {
            if !(g.is_finite() && g > 0.0) {
                return Err(bad("saturation.g", format!("must be > 0, got {g}")));
            }
        }
        self.bias
            .validate()
            .map_err(|e| bad("bias", e.to_string()))?;
        Ok(())
    }

    /// Largest pump strength reached anywhere in the schedule.
    pub fn lambda_max(&self) -> f64 {
        self.pump
            .iter()
            .map(|s| match s.shape {
                PumpShape::Constant { lambda } => lambda,
                PumpShape::Ramp { from, to, .. } => from.max(to),
            })
            .fold(0.0, f64::max)
    }

    pub fn lambda_at(&self, tau: f64) -> f64 {
        let idx = self
            .pump
            .partition_point(|s| s.start <= tau)
            .saturating_sub(1);
        segment_lambda(&self.pump[idx], tau)
    }

    pub fn axis_at(&self, tau: f64) -> f64 {
        let idx = self
            .pump_axis
            .partition_point(|s| s.start <= tau)
            .saturating_sub(1);
        self.pump_axis[idx].axis
    }

    /// Whether the orthogonal quadrature can feed back into the X outcome.
    pub fn couples_quadratures(&self) -> bool {
        if matches!(self.saturation, Saturation::Cubic { .. }) || self.pump_axis.len() > 1 {
            return true;
        }
        let misalignment = self.bias.phase - self.pump_axis[0].axis;
        (self.bias.amplitude != 0.0 || self.bias.extinction_floor != 0.0)
            && misalignment.sin().abs() > 1e-12
    }

    /// Time after which the pump, its axis and the bias no longer change.
    pub fn last_change(&self) -> f64 {
        let pump = self
            .pump
            .iter()
            .map(|s| match s.shape {
                PumpShape::Constant { .. } => s.start,
                PumpShape::Ramp { duration, .. } => s.start + duration,
            })
            .fold(0.0, f64::max);
        let axis = self.pump_axis.last().map_or(0.0, |s| s.start);
        let bias = if self.bias.extinction_floor != 0.0 || self.bias.amplitude != 0.0 {
            self.bias.injection_delay
        } else {
            0.0
        };
        pump.max(axis).max(bias)
    }

    /// Magnitude of |X| beyond which the sign of X can no longer flip, valid
    /// once the schedule has stopped changing and the dynamics are linear
    /// and above threshold.
    ///
    /// The bound is the largest remaining bias contribution plus 40 standard
    /// deviations of the remaining noise contribution.
    pub fn settle_threshold(&self) -> Option<f64> {
        if !matches!(self.saturation, Saturation::None) {
            return None;
        }
        let lambda = segment_lambda(self.pump.last()?, f64::INFINITY);
        if lambda <= 1.0 {
            return None;
        }
        let gain = lambda - 1.0;
        let misalignment = self.bias.phase - self.pump_axis.last()?.axis;
        let bias_x = (self.bias.amplitude * misalignment.cos()).abs();
        Some(std::f64::consts::SQRT_2 * bias_x / gain + 40.0 * (lambda / (2.0 * gain)).sqrt())
    }

    /// Short human-readable description recorded in run metadata.
    pub fn describe(&self) -> String {
        let pump: Vec<String> = self
            .pump
            .iter()
            .map(|s| match s.shape {
                PumpShape::Constant { lambda } => format!("t>={}:lambda={}", s.start, lambda),
                PumpShape::Ramp { from, to, duration } => {
                    format!("t>={}:ramp({}->{} over {})", s.start, from, to, duration)
                }
            })
            .collect();
        let axis: Vec<String> = self
            .pump_axis
            .iter()
            .map(|s| format!("t>={}:axis={}", s.start, s.axis))
            .collect();
        let sat = match self.saturation {
            Saturation::None => "none".to_string(),
            Saturation::Cubic { g } => format!("cubic(g={g})"),
        };
        format!(
            "pump=[{}] axis=[{}] bias=(b0={},tau0={},phase={},floor={}) saturation={}",
            pump.join(";"),
            axis.join(";"),
            self.bias.amplitude,
            self.bias.injection_delay,
            self.bias.phase,
            self.bias.extinction_floor,
            sat
        )
    }
}

pub(crate) fn segment_lambda(seg: &PumpSegment, tau: f64) -> f64 {
    match seg.shape {
        PumpShape::Constant { lambda } => lambda,
        PumpShape::Ramp { from, to, duration } => {
            let frac = ((tau - seg.start) / duration).clamp(0.0, 1.0);
            from + (to - from) * frac
        }
    }
}
