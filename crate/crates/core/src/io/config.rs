//! Run configuration: a TOML file (or preset) validated into a sweep plan.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::model::{GaussianStateSpec, PhasePoint};
use crate::protocol::{
    BiasGrid, MeasurementSettings, PreparationSpec, SweepPlan, MIN_TRAJECTORIES,
};
use crate::reconstruct::SensitivityMode;
use crate::sde::{IntegratorConfig, Saturation, STABILITY_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreparationKind {
    #[default]
    VacuumPoint,
    AnalyticGaussian,
    SdeRelaxation,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreparationConfig {
    #[serde(default)]
    pub kind: PreparationKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_prep: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relax_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var_major: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var_minor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis_angle: Option<f64>,
}

/// Pump, saturation and bias settings of the measurement stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Cubic saturation strength; 0 disables saturation.
    #[serde(default)]
    pub saturation_g: f64,
    #[serde(default)]
    pub rise_time: f64,
    #[serde(default)]
    pub extinction_floor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_per_point: Option<u64>,
    /// Explicit tomography angles in radians.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    /// Number of uniformly spaced angles in `[0, pi)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angles: Option<usize>,
    #[serde(default = "default_tau0")]
    pub tau0: Vec<f64>,
    /// Explicit bias values; when absent the grid follows the predicted width.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default = "default_b_points")]
    pub b_points: usize,
    #[serde(default = "default_b_span")]
    pub b_span_widths: f64,
}

fn default_tau0() -> Vec<f64> {
    vec![0.0]
}

fn default_b_points() -> usize {
    21
}

fn default_b_span() -> f64 {
    4.0
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_per_point: None,
            theta: None,
            angles: None,
            tau0: default_tau0(),
            b: None,
            b_points: default_b_points(),
            b_span_widths: default_b_span(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_dt() -> f64 {
    IntegratorConfig::DEFAULT_DT
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self { dt: default_dt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    #[default]
    Parametric,
    Nonparametric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    #[serde(default)]
    pub mode: ModeConfig,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default = "default_grid")]
    pub axis_points: usize,
    /// Fixed half width of the displacement axis.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis_half_width: Option<f64>,
    /// Otherwise the half width is this many of the largest marginal
    /// standard deviations.
    #[serde(default = "default_fov")]
    pub fov_widths: f64,
}

fn default_grid() -> usize {
    128
}

fn default_fov() -> f64 {
    4.0
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            mode: ModeConfig::default(),
            grid_size: default_grid(),
            axis_points: default_grid(),
            axis_half_width: None,
            fov_widths: default_fov(),
        }
    }
}

/// Contents of a configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub preparation: PreparationConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub reconstruct: ReconstructConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructSettings {
    pub mode: SensitivityMode,
    pub grid_size: usize,
    pub axis_points: usize,
    pub axis_half_width: Option<f64>,
    pub fov_widths: f64,
}

/// A configuration that passed validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedRun {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub plan: SweepPlan,
    pub reconstruct: ReconstructSettings,
}

fn err(field: &str, reason: impl Into<String>) -> IoError {
    IoError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn require<T: Copy>(v: Option<T>, field: &str) -> Result<T, IoError> {
    v.ok_or_else(|| err(field, "required"))
}

fn finite(v: f64, field: &str) -> Result<f64, IoError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(err(field, format!("must be finite, got {v}")))
    }
}

fn positive(v: f64, field: &str) -> Result<f64, IoError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(err(field, format!("must be > 0, got {v}")))
    }
}

fn non_negative(v: f64, field: &str) -> Result<f64, IoError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(err(field, format!("must be >= 0, got {v}")))
    }
}

fn increasing(v: &[f64], field: &str) -> Result<(), IoError> {
    if let Some(i) = v.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(err(
            &format!("{field}[{}]", i + 1),
            "values must be strictly increasing",
        ));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, IoError> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .filter(|_| {
                    e.message().contains("unknown field") || e.message().contains("missing field")
                })
                .unwrap_or("config")
                .to_string();
            IoError::Config {
                field,
                reason: e.message().trim().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    /// Squeezed-vacuum tomography: relaxation below threshold, 12 angles,
    /// 1000 trajectories per bias point.
    pub fn preset_fig2() -> Self {
        Self {
            seed: None,
            out: None,
            preparation: PreparationConfig {
                kind: PreparationKind::SdeRelaxation,
                lambda_prep: Some(0.8),
                relax_time: Some(20.0),
                ..Default::default()
            },
            schedule: ScheduleConfig {
                lambda: Some(2.0),
                ..Default::default()
            },
            sweep: SweepConfig {
                n_per_point: Some(1000),
                angles: Some(12),
                ..Default::default()
            },
            integrator: IntegratorSection::default(),
            reconstruct: ReconstructConfig::default(),
        }
    }

    /// Vacuum delay scan along and across the pump axis, 10000 trajectories
    /// per bias point.
    pub fn preset_fig3() -> Self {
        Self {
            seed: None,
            out: None,
            preparation: PreparationConfig::default(),
            schedule: ScheduleConfig {
                lambda: Some(2.0),
                ..Default::default()
            },
            sweep: SweepConfig {
                n_per_point: Some(10_000),
                theta: Some(vec![0.0, PI / 2.0]),
                tau0: vec![0.0, 0.5, 1.0],
                ..Default::default()
            },
            integrator: IntegratorSection::default(),
            reconstruct: ReconstructConfig::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self, IoError> {
        match name {
            "fig2" => Ok(Self::preset_fig2()),
            "fig3" => Ok(Self::preset_fig3()),
            other => Err(err(
                "preset",
                format!("unknown preset {other:?}; expected fig2 or fig3"),
            )),
        }
    }

    fn preparation_spec(&self) -> Result<PreparationSpec, IoError> {
        let p = &self.preparation;
        let unused = |field: &str, v: bool| {
            if v {
                Err(err(
                    &format!("preparation.{field}"),
                    format!("not used by preparation kind {:?}", p.kind),
                ))
            } else {
                Ok(())
            }
        };
        match p.kind {
            PreparationKind::VacuumPoint => {
                unused("lambda_prep", p.lambda_prep.is_some())?;
                unused("relax_time", p.relax_time.is_some())?;
                unused("mean", p.mean.is_some())?;
                unused("var_major", p.var_major.is_some())?;
                unused("var_minor", p.var_minor.is_some())?;
                unused("axis_angle", p.axis_angle.is_some())?;
                Ok(PreparationSpec::VacuumPoint)
            }
            PreparationKind::SdeRelaxation => {
                unused("mean", p.mean.is_some())?;
                unused("var_major", p.var_major.is_some())?;
                unused("var_minor", p.var_minor.is_some())?;
                unused("axis_angle", p.axis_angle.is_some())?;
                let lambda_prep = require(p.lambda_prep, "preparation.lambda_prep")?;
                if !(lambda_prep.is_finite() && (0.0..1.0).contains(&lambda_prep)) {
                    return Err(err(
                        "preparation.lambda_prep",
                        format!("must lie in [0, 1) to stay below threshold, got {lambda_prep}"),
                    ));
                }
                let relax_time = positive(
                    require(p.relax_time, "preparation.relax_time")?,
                    "preparation.relax_time",
                )?;
                Ok(PreparationSpec::SdeRelaxation {
                    lambda_prep,
                    relax_time,
                })
            }
            PreparationKind::AnalyticGaussian => {
                unused("lambda_prep", p.lambda_prep.is_some())?;
                unused("relax_time", p.relax_time.is_some())?;
                let [mx, my] = p.mean.unwrap_or([0.0, 0.0]);
                finite(mx, "preparation.mean[0]")?;
                finite(my, "preparation.mean[1]")?;
                let var_major = positive(
                    require(p.var_major, "preparation.var_major")?,
                    "preparation.var_major",
                )?;
                let var_minor = positive(
                    require(p.var_minor, "preparation.var_minor")?,
                    "preparation.var_minor",
                )?;
                if var_minor > var_major {
                    return Err(err("preparation.var_minor", "must not exceed var_major"));
                }
                let axis_angle = finite(p.axis_angle.unwrap_or(0.0), "preparation.axis_angle")?;
                Ok(PreparationSpec::AnalyticGaussian(GaussianStateSpec {
                    mean: PhasePoint::new(mx, my),
                    var_major,
                    var_minor,
                    axis_angle,
                }))
            }
        }
    }

    fn measurement(&self) -> Result<MeasurementSettings, IoError> {
        let s = &self.schedule;
        let lambda = require(s.lambda, "schedule.lambda")?;
        if !(lambda.is_finite() && lambda > 1.0) {
            return Err(err(
                "schedule.lambda",
                format!("measurement requires lambda > 1 (above threshold), got {lambda}"),
            ));
        }
        let g = non_negative(s.saturation_g, "schedule.saturation_g")?;
        let dt = positive(self.integrator.dt, "integrator.dt")?;
        if (lambda - 1.0) * dt > STABILITY_LIMIT {
            return Err(err(
                "integrator.dt",
                format!(
                    "(lambda - 1) * dt must be <= {STABILITY_LIMIT}, got {}",
                    (lambda - 1.0) * dt
                ),
            ));
        }
        let horizon = s
            .horizon
            .map(|h| positive(h, "schedule.horizon"))
            .transpose()?;
        Ok(MeasurementSettings {
            lambda,
            saturation: if g > 0.0 {
                Saturation::Cubic { g }
            } else {
                Saturation::None
            },
            rise_time: non_negative(s.rise_time, "schedule.rise_time")?,
            extinction_floor: non_negative(s.extinction_floor, "schedule.extinction_floor")?,
            dt,
            horizon,
        })
    }

    fn theta_grid(&self) -> Result<Vec<f64>, IoError> {
        let s = &self.sweep;
        let theta = match (&s.theta, s.angles) {
            (Some(_), Some(_)) => {
                return Err(err("sweep.angles", "conflicts with sweep.theta; give one"))
            }
            (Some(t), None) => t.clone(),
            (None, Some(k)) => {
                if k == 0 {
                    return Err(err("sweep.angles", "must be >= 1"));
                }
                (0..k).map(|i| PI * i as f64 / k as f64).collect()
            }
            (None, None) => vec![0.0],
        };
        if theta.is_empty() {
            return Err(err("sweep.theta", "must not be empty"));
        }
        for (i, t) in theta.iter().enumerate() {
            if !(0.0..PI).contains(t) {
                return Err(err(
                    &format!("sweep.theta[{i}]"),
                    format!("must lie in [0, pi), got {t}"),
                ));
            }
        }
        increasing(&theta, "sweep.theta")?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<ValidatedRun, IoError> {
        let seed = require(self.seed, "seed")?;
        let preparation = self.preparation_spec()?;
        let measurement = self.measurement()?;
        let s = &self.sweep;
        let n_per_point = require(s.n_per_point, "sweep.n_per_point")?;
        if n_per_point < MIN_TRAJECTORIES {
            return Err(err(
                "sweep.n_per_point",
                format!("must be >= {MIN_TRAJECTORIES}, got {n_per_point}"),
            ));
        }
        let theta_grid = self.theta_grid()?;
        if s.tau0.is_empty() {
            return Err(err("sweep.tau0", "must not be empty"));
        }
        for (i, t) in s.tau0.iter().enumerate() {
            non_negative(*t, &format!("sweep.tau0[{i}]"))?;
        }
        increasing(&s.tau0, "sweep.tau0")?;
        let b_grid = match &s.b {
            Some(b) => {
                if b.is_empty() {
                    return Err(err("sweep.b", "must not be empty"));
                }
                for (i, v) in b.iter().enumerate() {
                    finite(*v, &format!("sweep.b[{i}]"))?;
                }
                increasing(b, "sweep.b")?;
                BiasGrid::Fixed(b.clone())
            }
            None => {
                if s.b_points < 2 {
                    return Err(err(
                        "sweep.b_points",
                        format!("must be >= 2, got {}", s.b_points),
                    ));
                }
                BiasGrid::Auto {
                    points: s.b_points,
                    span_widths: positive(s.b_span_widths, "sweep.b_span_widths")?,
                }
            }
        };
        let reconstruct = self.reconstruct_settings()?;
        let plan = SweepPlan {
            preparation,
            measurement,
            b_grid,
            theta_grid,
            tau0_grid: s.tau0.clone(),
            n_per_point,
            seed,
        };
        plan.validate().map_err(|e| err("config", e.to_string()))?;
        Ok(ValidatedRun {
            seed,
            out: self.out.clone(),
            plan,
            reconstruct,
        })
    }

    /// Validates the `[reconstruct]` section alone.
    pub fn reconstruct_settings(&self) -> Result<ReconstructSettings, IoError> {
        let r = &self.reconstruct;
        if r.grid_size < 8 {
            return Err(err(
                "reconstruct.grid_size",
                format!("must be >= 8, got {}", r.grid_size),
            ));
        }
        if r.axis_points < 8 {
            return Err(err(
                "reconstruct.axis_points",
                format!("must be >= 8, got {}", r.axis_points),
            ));
        }
        let axis_half_width = r
            .axis_half_width
            .map(|h| positive(h, "reconstruct.axis_half_width"))
            .transpose()?;
        Ok(ReconstructSettings {
            mode: match r.mode {
                ModeConfig::Parametric => SensitivityMode::Parametric,
                ModeConfig::Nonparametric => SensitivityMode::Nonparametric,
            },
            grid_size: r.grid_size,
            axis_points: r.axis_points,
            axis_half_width,
            fov_widths: positive(r.fov_widths, "reconstruct.fov_widths")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = r#"
seed = 7
out = "runs/a"

[preparation]
kind = "sde_relaxation"
lambda_prep = 0.8
relax_time = 20.0

[schedule]
lambda = 2.0

[sweep]
n_per_point = 1000
angles = 4
tau0 = [0.0, 0.5]
"#;

    fn field_of(e: IoError) -> String {
        match e {
            IoError::Config { field, .. } => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn parses_and_validates() {
        let c = RunConfig::from_toml_str(SAMPLE).unwrap();
        let v = c.validate().unwrap();
        assert_eq!(v.seed, 7);
        assert_eq!(v.plan.theta_grid.len(), 4);
        assert_eq!(v.plan.tau0_grid, vec![0.0, 0.5]);
        assert_eq!(v.plan.b_grid, BiasGrid::default());
        assert_eq!(v.reconstruct.grid_size, 128);
    }

    #[test]
    fn toml_round_trip() {
        for c in [
            RunConfig::preset_fig2(),
            RunConfig::preset_fig3(),
            RunConfig::from_toml_str(SAMPLE).unwrap(),
        ] {
            assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        }
    }

    #[test]
    fn missing_seed_is_an_error() {
        let text = SAMPLE.replace("seed = 7", "");
        assert_eq!(
            field_of(
                RunConfig::from_toml_str(&text)
                    .unwrap()
                    .validate()
                    .unwrap_err()
            ),
            "seed"
        );
        assert_eq!(
            field_of(RunConfig::preset_fig2().validate().unwrap_err()),
            "seed"
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = SAMPLE.replace("lambda = 2.0", "lambda = 2.0\nlamda = 3.0");
        assert_eq!(
            field_of(RunConfig::from_toml_str(&text).unwrap_err()),
            "lamda"
        );
    }

    #[test]
    fn presets_expand() {
        let mut c = RunConfig::preset_fig2();
        c.seed = Some(1);
        let v = c.validate().unwrap();
        assert_eq!(v.plan.theta_grid.len(), 12);
        assert_eq!(v.plan.n_per_point, 1000);
        let mut c = RunConfig::preset_fig3();
        c.seed = Some(1);
        let v = c.validate().unwrap();
        assert_eq!(v.plan.tau0_grid, vec![0.0, 0.5, 1.0]);
        assert_eq!(v.plan.preparation, PreparationSpec::VacuumPoint);
        assert!(RunConfig::preset("fig9").is_err());
    }

    fn valid() -> RunConfig {
        let mut c = RunConfig::from_toml_str(SAMPLE).unwrap();
        c.reconstruct.axis_half_width = Some(5.0);
        c
    }

    /// A single invalid edit and the field path its error must name.
    fn mutation(i: usize, x: f64) -> (RunConfig, &'static str) {
        let mut c = valid();
        let bad = -x.abs() - 1e-3;
        let field = match i {
            0 => {
                c.seed = None;
                "seed"
            }
            1 => {
                c.preparation.lambda_prep = Some(1.0 + x.abs());
                "preparation.lambda_prep"
            }
            2 => {
                c.preparation.relax_time = Some(bad);
                "preparation.relax_time"
            }
            3 => {
                c.schedule.lambda = Some(1.0 - x.abs());
                "schedule.lambda"
            }
            4 => {
                c.schedule.saturation_g = bad;
                "schedule.saturation_g"
            }
            5 => {
                c.schedule.rise_time = bad;
                "schedule.rise_time"
            }
            6 => {
                c.schedule.extinction_floor = bad;
                "schedule.extinction_floor"
            }
            7 => {
                c.integrator.dt = bad;
                "integrator.dt"
            }
            8 => {
                c.sweep.n_per_point = Some((x.abs() as u64) % MIN_TRAJECTORIES);
                "sweep.n_per_point"
            }
            9 => {
                c.sweep.tau0 = vec![bad];
                "sweep.tau0[0]"
            }
            10 => {
                c.sweep.angles = None;
                c.sweep.theta = Some(vec![PI + x.abs()]);
                "sweep.theta[0]"
            }
            11 => {
                c.sweep.b = Some(vec![x, x]);
                "sweep.b[1]"
            }
            12 => {
                c.sweep.b_span_widths = bad;
                "sweep.b_span_widths"
            }
            13 => {
                c.reconstruct.axis_half_width = Some(bad);
                "reconstruct.axis_half_width"
            }
            14 => {
                c.schedule.lambda = None;
                "schedule.lambda"
            }
            15 => {
                c.preparation.kind = PreparationKind::AnalyticGaussian;
                "preparation.lambda_prep"
            }
            16 => {
                c.sweep.theta = Some(vec![0.0]);
                "sweep.angles"
            }
            17 => {
                c.schedule.horizon = Some(bad);
                "schedule.horizon"
            }
            _ => {
                c.integrator.dt = 0.0501 + x.abs();
                "integrator.dt"
            }
        };
        (c, field)
    }

    proptest! {
        #[test]
        fn every_mutation_names_its_field(i in 0usize..19, x in 0.0f64..100.0) {
            let (c, field) = mutation(i, x);
            let e = c.validate().unwrap_err();
            prop_assert_eq!(field_of(e), field);
        }
    }
}
