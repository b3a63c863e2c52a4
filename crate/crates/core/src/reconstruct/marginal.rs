use super::{invalid, AxisGrid, ErfFit, MarginalQ, ReconstructError};
use crate::model::{self, normal_pdf};
use crate::protocol::BiasProbabilityCurve;

const MIN_NONPARAMETRIC_POINTS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityMode {
    /// Gaussian derivative of the fitted erf.
    Parametric,
    /// Smoothed finite differences of the measured probabilities.
    Nonparametric,
}

/// The slope `dp/dD` of a bias-probability curve as a marginal Q function on
/// `axis` (displacement units).
///
/// Bias is mapped to displacement through
/// [`model::bias_to_displacement_scale`], which absorbs the delay factor.
pub fn sensitivity_to_marginal(
    curve: &BiasProbabilityCurve,
    fit: &ErfFit,
    lambda: f64,
    tau0: f64,
    mode: SensitivityMode,
    axis: &AxisGrid,
) -> Result<MarginalQ, ReconstructError> {
    let scale = model::bias_to_displacement_scale(lambda, tau0)?;
    let mut out = match mode {
        SensitivityMode::Parametric => {
            if !(fit.sigma > 0.0 && fit.sigma.is_finite()) {
                return Err(ReconstructError::IllConditioned(format!(
                    "fit width {}",
                    fit.sigma
                )));
            }
            let centre = fit.center * scale;
            let sd = fit.sigma * scale;
            let density = axis
                .values()
                .iter()
                .map(|x| normal_pdf((x - centre) / sd) / sd)
                .collect();
            let mut m = MarginalQ::new(curve.theta, *axis, density)?;
            m.fit_variance = Some(sd * sd);
            m.fit_variance_se = Some(2.0 * sd * scale * fit.sigma_se());
            m
        }
        SensitivityMode::Nonparametric => {
            let pts = &curve.points;
            if pts.len() < MIN_NONPARAMETRIC_POINTS {
                return Err(ReconstructError::InsufficientPoints {
                    needed: MIN_NONPARAMETRIC_POINTS,
                    got: pts.len(),
                });
            }
            if pts.windows(2).any(|w| !(w[1].b > w[0].b)) {
                return Err(invalid("points", "bias values must be strictly increasing"));
            }
            let mids: Vec<f64> = pts
                .windows(2)
                .map(|w| 0.5 * (w[0].b + w[1].b) * scale)
                .collect();
            let slopes: Vec<f64> = pts
                .windows(2)
                .map(|w| (w[1].p_hat - w[0].p_hat) / ((w[1].b - w[0].b) * scale))
                .collect();
            let last = slopes.len() - 1;
            let smooth: Vec<f64> = (0..slopes.len())
                .map(|i| {
                    let l = slopes[i.saturating_sub(1)];
                    let r = slopes[(i + 1).min(last)];
                    (0.25 * l + 0.5 * slopes[i] + 0.25 * r).max(0.0)
                })
                .collect();
            let density = axis
                .values()
                .iter()
                .map(|&x| interpolate_irregular(&mids, &smooth, x))
                .collect();
            MarginalQ::new(curve.theta, *axis, density)?
        }
    };
    out.normalize()?;
    Ok(out)
}

/// Linear interpolation on sorted nodes `xs`; zero outside their range.
fn interpolate_irregular(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x < xs[0] || x > xs[xs.len() - 1] {
        return 0.0;
    }
    let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let f = (x - x0) / (x1 - x0);
    ys[i - 1] * (1.0 - f) + ys[i] * f
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::protocol::{BiasProbabilityCurve, CurvePoint};
    use crate::reconstruct::fit::tests::synthetic_curve;
    use crate::reconstruct::fit_erf;
    use approx::assert_relative_eq;

    fn exact_curve(sigma: f64, n_points: usize, half: f64) -> BiasProbabilityCurve {
        let points = (0..n_points)
            .map(|i| {
                let b = -half + 2.0 * half * i as f64 / (n_points - 1) as f64;
                let p = model::normal_cdf(b / sigma);
                CurvePoint {
                    b,
                    p_hat: p,
                    n: 1_000_000,
                    n_positive: (p * 1e6).round() as u64,
                    ci_low: p,
                    ci_high: p,
                }
            })
            .collect();
        BiasProbabilityCurve {
            theta: 0.0,
            tau0: 0.0,
            lambda: 2.0,
            seed: 0,
            preparation: String::new(),
            schedule: String::new(),
            points,
        }
    }

    fn fit(center: f64, sigma: f64) -> ErfFit {
        ErfFit {
            center,
            sigma,
            log_likelihood: 0.0,
            covariance: [[1e-4, 0.0], [0.0, 1e-4]],
            iterations: 0,
        }
    }

    fn l1(a: &MarginalQ, b: &MarginalQ) -> f64 {
        a.density
            .iter()
            .zip(&b.density)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            * a.axis.step
    }

    #[test]
    fn vacuum_width_maps_to_unit_std() {
        let axis = AxisGrid::symmetric(8.0, 401).unwrap();
        let c = exact_curve(0.7071, 21, 3.0);
        let m = sensitivity_to_marginal(
            &c,
            &fit(0.0, 0.5f64.sqrt()),
            2.0,
            0.0,
            SensitivityMode::Parametric,
            &axis,
        )
        .unwrap();
        assert_relative_eq!(m.fit_variance.unwrap(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(m.moment_variance(), 1.0, max_relative = 1e-3);
        assert_relative_eq!(m.mass(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn delay_factor_cancels() {
        let axis = AxisGrid::symmetric(8.0, 401).unwrap();
        let c = exact_curve(0.7071, 21, 3.0);
        let f0 = fit(0.0, 0.5f64.sqrt());
        let f1 = fit(0.0, 0.5f64.sqrt() * 2.0);
        let a =
            sensitivity_to_marginal(&c, &f0, 2.0, 0.0, SensitivityMode::Parametric, &axis).unwrap();
        let b =
            sensitivity_to_marginal(&c, &f1, 2.0, 2f64.ln(), SensitivityMode::Parametric, &axis)
                .unwrap();
        assert!(l1(&a, &b) < 1e-9);
    }

    #[test]
    fn nonparametric_matches_parametric_on_exact_curve() {
        let axis = AxisGrid::symmetric(6.0, 241).unwrap();
        let sigma = 0.5f64.sqrt();
        let c = exact_curve(sigma, 41, 4.0 * sigma);
        let p = sensitivity_to_marginal(
            &c,
            &fit(0.0, sigma),
            2.0,
            0.0,
            SensitivityMode::Parametric,
            &axis,
        )
        .unwrap();
        let q = sensitivity_to_marginal(
            &c,
            &fit(0.0, sigma),
            2.0,
            0.0,
            SensitivityMode::Nonparametric,
            &axis,
        )
        .unwrap();
        assert!(l1(&p, &q) < 0.05, "L1 = {}", l1(&p, &q));
        assert!(q.density.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn modes_agree_on_sampled_curve() {
        let axis = AxisGrid::symmetric(6.0, 241).unwrap();
        let sigma = 0.5f64.sqrt();
        let b: Vec<f64> = (0..25)
            .map(|i| -4.0 * sigma + 8.0 * sigma * i as f64 / 24.0)
            .collect();
        let c = synthetic_curve(0.0, sigma, 20_000, &b, 8);
        let f = fit_erf(&c).unwrap();
        let p =
            sensitivity_to_marginal(&c, &f, 2.0, 0.0, SensitivityMode::Parametric, &axis).unwrap();
        let q = sensitivity_to_marginal(&c, &f, 2.0, 0.0, SensitivityMode::Nonparametric, &axis)
            .unwrap();
        assert!(l1(&p, &q) < 0.1, "L1 = {}", l1(&p, &q));
    }

    #[test]
    fn rejects_below_threshold_and_short_curves() {
        let axis = AxisGrid::symmetric(6.0, 121).unwrap();
        let c = exact_curve(0.7, 21, 3.0);
        assert!(sensitivity_to_marginal(
            &c,
            &fit(0.0, 0.7),
            1.0,
            0.0,
            SensitivityMode::Parametric,
            &axis
        )
        .is_err());
        let short = exact_curve(0.7, 7, 3.0);
        assert!(matches!(
            sensitivity_to_marginal(
                &short,
                &fit(0.0, 0.7),
                2.0,
                0.0,
                SensitivityMode::Nonparametric,
                &axis
            ),
            Err(ReconstructError::InsufficientPoints { .. })
        ));
    }
}
