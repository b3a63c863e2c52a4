//! The `oracle`, `sweep`, `dynamics` and `reconstruct` commands.
//!
//! Each command computes everything in memory first, then writes its files
//! through [`OutputDir`] so that a failure leaves no partial outputs behind.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use super::config::{ReconstructSettings, RunConfig};
use super::formats::{
    self, emit_curve, emit_grid, emit_marginal, emit_sinogram, emit_table, num, Header,
    SinogramFile,
};
use super::manifest::{OutputDir, RunManifest};
use super::IoError;
use crate::model::{self, BiasSpec};
use crate::protocol::{
    dynamics_scan, nonlinear_onset, predicted_dynamics_width, sweep_phase, BiasProbabilityCurve,
    SweepPlan,
};
use crate::reconstruct::{
    fit_erf, inverse_radon, sensitivity_to_marginal, squeezing_db, AxisGrid, ContourEllipse,
    ErfFit, MarginalQ, QGrid, Sinogram, SqueezingReport,
};
use crate::sde::Saturation;

pub const TOOL: &str = "opo-tomo";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

struct Clock {
    start: Instant,
    unix: f64,
}

impl Clock {
    fn start() -> Self {
        Self {
            start: Instant::now(),
            unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0.0, |d| d.as_secs_f64()),
        }
    }

    fn manifest(
        &self,
        command: &str,
        seed: Option<u64>,
        config: serde_json::Value,
        warnings: Vec<String>,
    ) -> RunManifest {
        RunManifest {
            tool: TOOL.to_string(),
            version: VERSION.to_string(),
            command: command.to_string(),
            seed,
            config,
            started_unix_seconds: self.unix,
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
            stages: Vec::new(),
            warnings,
        }
    }
}

/// Files written by a command and any warnings it raised.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
}

fn outcome(dir: &OutputDir, warnings: Vec<String>) -> RunOutcome {
    RunOutcome {
        out_dir: dir.root().to_path_buf(),
        files: dir
            .stages()
            .iter()
            .flat_map(|s| s.files.iter().map(|f| f.path.clone()))
            .collect(),
        warnings,
    }
}

fn snapshot(config: &RunConfig) -> serde_json::Value {
    serde_json::to_value(config).expect("config serialises to JSON")
}

// ---------------------------------------------------------------- oracle

/// Grid of closed-form values to tabulate.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleParams {
    pub lambda: Vec<f64>,
    pub tau0: Vec<f64>,
    pub b: Vec<f64>,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            lambda: vec![2.0],
            tau0: vec![0.0],
            b: (0..9).map(|i| -2.0 + 0.5 * i as f64).collect(),
        }
    }
}

fn check_list(
    values: &[f64],
    field: &str,
    ok: impl Fn(f64) -> bool,
    requirement: &str,
) -> Result<(), IoError> {
    if values.is_empty() {
        return Err(IoError::Config {
            field: field.to_string(),
            reason: "must not be empty".into(),
        });
    }
    for (i, v) in values.iter().enumerate() {
        if !ok(*v) {
            return Err(IoError::Config {
                field: format!("{field}[{i}]"),
                reason: format!("{requirement}, got {v}"),
            });
        }
    }
    Ok(())
}

/// Closed-form probability, displacement, noise variance and transition
/// width for every `(lambda, tau0, b0)` combination.
pub fn oracle_table(p: &OracleParams) -> Result<String, IoError> {
    check_list(
        &p.lambda,
        "lambda",
        |l| l.is_finite() && l > 1.0,
        "erf probability requires lambda > 1 (above threshold)",
    )?;
    check_list(
        &p.tau0,
        "tau0",
        |t| t.is_finite() && t >= 0.0,
        "must be >= 0",
    )?;
    check_list(&p.b, "b", f64::is_finite, "must be finite")?;
    let mut rows = Vec::new();
    for &lambda in &p.lambda {
        for &tau0 in &p.tau0 {
            let f = model::f_variance(tau0, lambda)?.value();
            let width = model::erf_width(lambda, tau0)?;
            for &b in &p.b {
                let prob = model::erf_probability(&BiasSpec::step(b, tau0), lambda)?;
                rows.push(vec![
                    num(b),
                    num(tau0),
                    num(lambda),
                    num(prob),
                    num(model::displacement(b, lambda)?),
                    num(f),
                    num(width),
                ]);
            }
        }
    }
    let h = Header::new("oracle");
    Ok(emit_table(
        &h,
        &[
            "b0",
            "tau0",
            "lambda",
            "p",
            "displacement",
            "f_variance",
            "sigma_b",
        ],
        &rows,
    ))
}

/// Computes the oracle table and, when `out` is given, also writes it with a
/// manifest.
pub fn cmd_oracle(p: &OracleParams, out: Option<&Path>) -> Result<String, IoError> {
    let clock = Clock::start();
    let table = oracle_table(p)?;
    if let Some(out) = out {
        let mut dir = OutputDir::create(out)?;
        dir.begin_stage("oracle");
        dir.write("oracle.csv", &table)?;
        let config = serde_json::json!({ "lambda": p.lambda, "tau0": p.tau0, "b": p.b });
        dir.commit(clock.manifest("oracle", None, config, Vec::new()))?;
    }
    Ok(table)
}

// ---------------------------------------------------------------- sweep

pub fn curve_file_name(angle_index: usize, delay_index: usize) -> String {
    format!("curve_a{angle_index:02}_d{delay_index:02}.csv")
}

fn write_curves(
    dir: &mut OutputDir,
    plan: &SweepPlan,
    curves: &[BiasProbabilityCurve],
) -> Result<(), IoError> {
    let per_angle = plan.tau0_grid.len();
    for (k, c) in curves.iter().enumerate() {
        dir.write(
            &curve_file_name(k / per_angle, k % per_angle),
            &emit_curve(c),
        )?;
    }
    Ok(())
}

/// Runs the bias sweep for every `(theta, tau0)` and writes one curve file
/// per pair.
pub fn cmd_sweep(config: &RunConfig, out: &Path) -> Result<RunOutcome, IoError> {
    let clock = Clock::start();
    let run = config.validate()?;
    let curves = sweep_phase(&run.plan)?;
    let mut dir = OutputDir::create(out)?;
    dir.begin_stage("sweep");
    write_curves(&mut dir, &run.plan, &curves)?;
    let result = outcome(&dir, Vec::new());
    dir.commit(clock.manifest("sweep", Some(run.seed), snapshot(config), Vec::new()))?;
    Ok(result)
}

// ---------------------------------------------------------------- dynamics

/// Fitted transition width of one delay-scan curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthRecord {
    pub theta: f64,
    pub tau0: f64,
    pub predicted_sigma_b: f64,
    pub fit: Option<ErfFit>,
}

/// Exponential growth rate of the width with delay at one angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthFit {
    pub theta: f64,
    pub rate: f64,
    pub rate_se: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsOutcome {
    pub run: RunOutcome,
    pub widths: Vec<WidthRecord>,
    pub growth: Vec<GrowthFit>,
}

/// Weighted least-squares slope of `ln sigma` against `tau0`, with weights
/// `(sigma / se)^2` from the fit errors.
pub fn fit_growth(points: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let w: Vec<f64> = points.iter().map(|(_, s, se)| (s / se).powi(2)).collect();
    let sw: f64 = w.iter().sum();
    let tm = points
        .iter()
        .zip(&w)
        .map(|((t, _, _), w)| w * t)
        .sum::<f64>()
        / sw;
    let ym = points
        .iter()
        .zip(&w)
        .map(|((_, s, _), w)| w * s.ln())
        .sum::<f64>()
        / sw;
    let sxx: f64 = points
        .iter()
        .zip(&w)
        .map(|((t, _, _), w)| w * (t - tm).powi(2))
        .sum();
    let sxy: f64 = points
        .iter()
        .zip(&w)
        .map(|((t, s, _), w)| w * (t - tm) * (s.ln() - ym))
        .sum();
    if !(sxx > 0.0) {
        return None;
    }
    Some((sxy / sxx, (1.0 / sxx).sqrt()))
}

/// Warnings for delay scans that run into the saturated regime, where the
/// erf description no longer holds.
pub fn dynamics_warnings(plan: &SweepPlan) -> Vec<String> {
    let mut out = Vec::new();
    if let Saturation::Cubic { g } = plan.measurement.saturation {
        if let Some(onset) = nonlinear_onset(plan.measurement.lambda, g) {
            let late: Vec<String> = plan
                .tau0_grid
                .iter()
                .filter(|t| **t >= onset)
                .map(|t| num(*t))
                .collect();
            if !late.is_empty() {
                out.push(format!(
                    "delays {} reach the nonlinear stage (onset near tau = {:.3} for g = {}); erf model validity is degraded",
                    late.join(", "),
                    onset,
                    g
                ));
            }
        }
    }
    out
}

/// Delay scan from the vacuum: curve files, per-curve widths and the fitted
/// growth rate of the width at each angle.
pub fn cmd_dynamics(config: &RunConfig, out: &Path) -> Result<DynamicsOutcome, IoError> {
    let clock = Clock::start();
    let run = config.validate()?;
    let plan = &run.plan;
    let mut warnings = dynamics_warnings(plan);
    let curves = dynamics_scan(plan)?;

    let lambda = plan.measurement.lambda;
    let mut widths = Vec::with_capacity(curves.len());
    for c in &curves {
        let fit = match fit_erf(c) {
            Ok(f) => Some(f),
            Err(e) => {
                warnings.push(format!(
                    "fit failed at theta = {}, tau0 = {}: {e}",
                    c.theta, c.tau0
                ));
                None
            }
        };
        widths.push(WidthRecord {
            theta: c.theta,
            tau0: c.tau0,
            predicted_sigma_b: predicted_dynamics_width(lambda, c.theta, c.tau0)?,
            fit,
        });
    }
    let mut growth = Vec::new();
    for &theta in &plan.theta_grid {
        let pts: Vec<(f64, f64, f64)> = widths
            .iter()
            .filter(|w| w.theta == theta)
            .filter_map(|w| w.fit.map(|f| (w.tau0, f.sigma, f.sigma_se())))
            .collect();
        if let Some((rate, rate_se)) = fit_growth(&pts) {
            growth.push(GrowthFit {
                theta,
                rate,
                rate_se,
                points: pts.len(),
            });
        }
    }

    let z = crate::protocol::Z_95;
    let width_rows: Vec<Vec<String>> = widths
        .iter()
        .map(|w| {
            let (sigma, se, lo, hi) = match w.fit {
                Some(f) => {
                    let (lo, hi) = f.sigma_ci(z);
                    (num(f.sigma), num(f.sigma_se()), num(lo), num(hi))
                }
                None => ("none".into(), "none".into(), "none".into(), "none".into()),
            };
            vec![
                num(w.theta),
                num(w.tau0),
                sigma,
                se,
                lo,
                hi,
                num(w.predicted_sigma_b),
            ]
        })
        .collect();
    let mut h = Header::new("dynamics_widths");
    h.push("lambda", num(lambda)).push("seed", run.seed);
    for w in &warnings {
        h.push("warning", w);
    }
    let widths_csv = emit_table(
        &h,
        &[
            "theta",
            "tau0",
            "sigma_b",
            "sigma_b_se",
            "ci_low",
            "ci_high",
            "predicted_sigma_b",
        ],
        &width_rows,
    );
    let growth_rows: Vec<Vec<String>> = growth
        .iter()
        .map(|g| {
            vec![
                num(g.theta),
                num(g.rate),
                num(g.rate_se),
                g.points.to_string(),
            ]
        })
        .collect();
    let mut h = Header::new("dynamics_growth");
    h.push("lambda", num(lambda))
        .push("aligned_rate_expected", num(lambda - 1.0));
    let growth_csv = emit_table(
        &h,
        &["theta", "growth_rate", "growth_rate_se", "points"],
        &growth_rows,
    );

    let mut dir = OutputDir::create(out)?;
    dir.begin_stage("dynamics");
    write_curves(&mut dir, plan, &curves)?;
    dir.begin_stage("metrics");
    dir.write("dynamics_widths.csv", &widths_csv)?;
    dir.write("dynamics_growth.csv", &growth_csv)?;
    let result = outcome(&dir, warnings.clone());
    dir.commit(clock.manifest("dynamics", Some(run.seed), snapshot(config), warnings))?;
    Ok(DynamicsOutcome {
        run: result,
        widths,
        growth,
    })
}

// ---------------------------------------------------------------- reconstruct

/// What a reconstruction input directory holds.
#[derive(Debug, Clone, PartialEq)]
pub enum ReconstructInput {
    /// Curve files, keyed by file name.
    Curves(Vec<(String, BiasProbabilityCurve)>),
    Sinogram(String, SinogramFile),
}

fn kind_of(text: &str) -> Option<&str> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix("# kind:"))
        .map(str::trim)
}

/// Reads every curve file in `dir`, or failing that a sinogram file.
pub fn load_input(dir: &Path) -> Result<ReconstructInput, IoError> {
    let entries = fs::read_dir(dir).map_err(|e| IoError::file(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let mut curves = Vec::new();
    let mut sinogram = None;
    for p in &paths {
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        let text = fs::read_to_string(p).map_err(|e| IoError::file(p, e))?;
        match kind_of(&text) {
            Some("bias_probability_curve") => {
                curves.push((name.clone(), formats::parse_curve(&name, &text)?))
            }
            Some("sinogram") if sinogram.is_none() => {
                sinogram = Some((name.clone(), formats::parse_sinogram(&name, &text)?));
            }
            _ => {}
        }
    }
    if !curves.is_empty() {
        Ok(ReconstructInput::Curves(curves))
    } else if let Some((name, s)) = sinogram {
        Ok(ReconstructInput::Sinogram(name, s))
    } else {
        Err(IoError::Input(format!(
            "{} contains no curve or sinogram files",
            dir.display()
        )))
    }
}

/// Result of turning curves (or a sinogram) into a reconstructed Q function.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub lambda: Option<f64>,
    /// Fits per angle, when the input was curves.
    pub fits: Vec<ErfFit>,
    pub sinogram: Sinogram,
    pub vacuum: Sinogram,
    pub vacuum_source: String,
    pub grid: QGrid,
    pub report: SqueezingReport,
    pub contour: Option<ContourEllipse>,
}

fn mismatch(files: &[&str], reason: impl Into<String>) -> IoError {
    IoError::AxisMismatch {
        files: files.join(","),
        reason: reason.into(),
    }
}

/// Checks shared pump and delay and distinct angles; returns `(lambda, tau0)`.
fn check_curves(curves: &[(String, BiasProbabilityCurve)]) -> Result<(f64, f64), IoError> {
    let (first_name, first) = &curves[0];
    for (name, c) in &curves[1..] {
        if c.lambda != first.lambda {
            return Err(mismatch(
                &[first_name, name],
                format!("lambda {} differs from {}", c.lambda, first.lambda),
            ));
        }
        if c.tau0 != first.tau0 {
            return Err(mismatch(
                &[first_name, name],
                format!(
                    "delay {} differs from {}; reconstruct one delay at a time",
                    c.tau0, first.tau0
                ),
            ));
        }
    }
    for (i, (a, ca)) in curves.iter().enumerate() {
        if !(0.0..PI).contains(&ca.theta) {
            return Err(mismatch(
                &[a],
                format!("angle {} outside [0, pi)", ca.theta),
            ));
        }
        if let Some((b, _)) = curves[i + 1..].iter().find(|(_, cb)| cb.theta == ca.theta) {
            return Err(mismatch(&[a, b], format!("duplicate angle {}", ca.theta)));
        }
    }
    Ok((first.lambda, first.tau0))
}

fn fit_named(name: &str, c: &BiasProbabilityCurve) -> Result<ErfFit, IoError> {
    fit_erf(c).map_err(|e| IoError::Input(format!("{name}: {e}")))
}

/// Fits and converts curves into marginals on `axis`, or on an axis sized
/// from the fitted widths when `axis` is `None`.
fn curves_to_sinogram(
    curves: &[(String, BiasProbabilityCurve)],
    settings: &ReconstructSettings,
    axis: Option<AxisGrid>,
    id: &str,
) -> Result<(Sinogram, Vec<ErfFit>), IoError> {
    let (lambda, tau0) = check_curves(curves)?;
    let mut order: Vec<&(String, BiasProbabilityCurve)> = curves.iter().collect();
    order.sort_by(|a, b| a.1.theta.total_cmp(&b.1.theta));
    let fits = order
        .iter()
        .map(|(name, c)| fit_named(name, c))
        .collect::<Result<Vec<_>, _>>()?;
    let scale = model::bias_to_displacement_scale(lambda, tau0)?;
    let axis = match axis {
        Some(a) => a,
        None => {
            let half = match settings.axis_half_width {
                Some(h) => h,
                None => {
                    let widest = fits.iter().map(|f| f.sigma * scale).fold(0.0, f64::max);
                    settings.fov_widths * widest
                }
            };
            AxisGrid::symmetric(half, settings.axis_points)?
        }
    };
    let marginals = order
        .iter()
        .zip(&fits)
        .map(|((name, c), f)| {
            sensitivity_to_marginal(c, f, lambda, tau0, settings.mode, &axis)
                .map_err(|e| IoError::Input(format!("{name}: {e}")))
        })
        .collect::<Result<Vec<MarginalQ>, _>>()?;
    Ok((Sinogram::new(id, marginals)?, fits))
}

/// Vacuum marginals with the analytic readout variance.
fn analytic_vacuum(lambda: f64, state: &Sinogram) -> Result<Sinogram, IoError> {
    let var = model::readout_variance(lambda)?;
    let sd = var.sqrt();
    let marginals = state
        .marginals
        .iter()
        .map(|m| {
            let d = m
                .axis
                .values()
                .iter()
                .map(|x| model::normal_pdf(x / sd) / sd)
                .collect();
            let mut v = MarginalQ::new(m.theta, m.axis, d)?;
            v.normalize()?;
            v.fit_variance = Some(var);
            Ok(v)
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    Ok(Sinogram::new("analytic-vacuum", marginals)?)
}

fn reference_sinogram(
    reference: Option<(&str, ReconstructInput)>,
    state: &Sinogram,
    lambda: Option<f64>,
    settings: &ReconstructSettings,
) -> Result<(Sinogram, String), IoError> {
    let angles = state.angles();
    match reference {
        None => {
            let lambda = lambda.ok_or_else(|| {
                IoError::Input("input carries no lambda; pass a vacuum reference directory".into())
            })?;
            Ok((analytic_vacuum(lambda, state)?, "analytic".into()))
        }
        Some((label, ReconstructInput::Curves(curves))) => {
            let (s, _) =
                curves_to_sinogram(&curves, settings, Some(state.axis), "vacuum-reference")?;
            if s.angles() != angles {
                let names: Vec<&str> = curves.iter().map(|(n, _)| n.as_str()).collect();
                return Err(mismatch(
                    &names,
                    "reference angles differ from the state angles",
                ));
            }
            Ok((s, label.to_string()))
        }
        Some((label, ReconstructInput::Sinogram(name, f))) => {
            if !f.sinogram.axis.matches(&state.axis) || f.sinogram.angles() != angles {
                return Err(mismatch(
                    &[&name],
                    "reference sinogram axis or angles differ from the state",
                ));
            }
            Ok((f.sinogram, label.to_string()))
        }
    }
}

/// Reconstructs the Q function from `input`, comparing against `reference`
/// (or the analytic vacuum) for the squeezing metrics.
pub fn reconstruct_input(
    input: ReconstructInput,
    reference: Option<(&str, ReconstructInput)>,
    settings: &ReconstructSettings,
) -> Result<Reconstruction, IoError> {
    let (sinogram, fits, lambda) = match input {
        ReconstructInput::Curves(curves) => {
            let (lambda, tau0) = check_curves(&curves)?;
            let id = format!(
                "curves(seed={},tau0={},angles={})",
                curves[0].1.seed,
                num(tau0),
                curves.len()
            );
            let (s, fits) = curves_to_sinogram(&curves, settings, None, &id)?;
            (s, fits, Some(lambda))
        }
        ReconstructInput::Sinogram(_, f) => (f.sinogram, Vec::new(), f.lambda),
    };
    let (vacuum, vacuum_source) = reference_sinogram(reference, &sinogram, lambda, settings)?;
    let report = squeezing_db(&sinogram, &vacuum)?;
    let grid = inverse_radon(&sinogram, settings.grid_size)?;
    let contour = grid.contour_ellipse().ok();
    Ok(Reconstruction {
        lambda,
        fits,
        sinogram,
        vacuum,
        vacuum_source,
        grid,
        report,
        contour,
    })
}

fn metrics_csv(r: &Reconstruction, settings: &ReconstructSettings) -> String {
    let mut h = Header::new("reconstruct_metrics");
    h.push("mode", format!("{:?}", settings.mode).to_lowercase())
        .push("vacuum_reference", &r.vacuum_source)
        .push("clipped_fraction", num(r.grid.clipped_fraction))
        .push("max_db", num(r.report.max_db))
        .push("max_db_angle", num(r.report.max_db_angle))
        .push("min_db", num(r.report.min_db))
        .push("min_db_angle", num(r.report.min_db_angle))
        .push("max_db_se", r.report.uncertainty.map_or("none".into(), num));
    match &r.contour {
        Some(c) => {
            h.push("contour_minor_angle", num(c.minor_angle))
                .push("contour_minor_radius", num(c.minor_radius))
                .push("contour_major_radius", num(c.major_radius));
        }
        None => {
            h.push("contour", "none");
        }
    }
    let rows: Vec<Vec<String>> = r
        .report
        .per_angle
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let (c, s, se) = r
                .fits
                .get(i)
                .map_or(("none".into(), "none".into(), "none".into()), |f| {
                    (num(f.center), num(f.sigma), num(f.sigma_se()))
                });
            vec![
                num(a.theta),
                num(a.var_state),
                num(a.var_vacuum),
                num(a.db),
                a.db_se.map_or("none".into(), num),
                c,
                s,
                se,
            ]
        })
        .collect();
    emit_table(
        &h,
        &[
            "theta",
            "var_state",
            "var_vacuum",
            "db",
            "db_se",
            "fit_center",
            "fit_sigma_b",
            "fit_sigma_b_se",
        ],
        &rows,
    )
}

/// Reads curves or a sinogram from `input`, reconstructs, and writes the
/// marginals, sinogram, Q grid and metrics.
pub fn cmd_reconstruct(
    input: &Path,
    reference: Option<&Path>,
    settings: &ReconstructSettings,
    config: serde_json::Value,
    out: &Path,
) -> Result<(RunOutcome, Reconstruction), IoError> {
    let clock = Clock::start();
    let state = load_input(input)?;
    let reference_input = match reference {
        Some(p) => Some((
            p.file_name()
                .map_or("reference".into(), |n| n.to_string_lossy().to_string()),
            load_input(p)?,
        )),
        None => None,
    };
    let r = reconstruct_input(
        state,
        reference_input
            .as_ref()
            .map(|(l, i)| (l.as_str(), i.clone())),
        settings,
    )?;

    let mut dir = OutputDir::create(out)?;
    dir.begin_stage("marginals");
    for (i, m) in r.sinogram.marginals.iter().enumerate() {
        dir.write(&format!("marginal_a{i:02}.csv"), &emit_marginal(m))?;
    }
    dir.write("sinogram.csv", &emit_sinogram(&r.sinogram, r.lambda))?;
    dir.begin_stage("reconstruct");
    dir.write("qgrid.csv", &emit_grid(&r.grid))?;
    dir.begin_stage("metrics");
    dir.write("metrics.csv", &metrics_csv(&r, settings))?;
    let result = outcome(&dir, Vec::new());
    dir.commit(clock.manifest("reconstruct", None, config, Vec::new()))?;
    Ok((result, r))
}
