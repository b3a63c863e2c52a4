use std::f64::consts::{LN_10, PI};

use super::{invalid, QGrid, ReconstructError, Sinogram};

const ANGLE_TOL: f64 = 1e-9;
const CONTOUR_RAYS: usize = 180;

/// Per-angle comparison of a state marginal with the vacuum marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleSqueezing {
    pub theta: f64,
    pub var_state: f64,
    pub var_vacuum: f64,
    /// `10 log10(var_vacuum / var_state)`; positive means below vacuum.
    pub db: f64,
    pub db_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqueezingReport {
    pub per_angle: Vec<AngleSqueezing>,
    /// Largest dB value (strongest squeezing) and its angle.
    pub max_db: f64,
    pub max_db_angle: f64,
    /// Smallest dB value (strongest anti-squeezing) and its angle.
    pub min_db: f64,
    pub min_db_angle: f64,
    /// Standard error of `max_db`.
    pub uncertainty: Option<f64>,
}

/// Squeezing in dB of each state marginal relative to the vacuum marginal at
/// the same angle.
///
/// Variances come from the erf fits when the marginals carry them and from
/// second moments otherwise.
pub fn squeezing_db(
    state: &Sinogram,
    vacuum: &Sinogram,
) -> Result<SqueezingReport, ReconstructError> {
    if state.marginals.len() != vacuum.marginals.len() {
        return Err(invalid(
            "vacuum_reference",
            format!(
                "angle count {} does not match state angle count {}",
                vacuum.marginals.len(),
                state.marginals.len()
            ),
        ));
    }
    if !state.axis.matches(&vacuum.axis) {
        return Err(ReconstructError::AxisMismatch { index: 0 });
    }
    let mut per_angle = Vec::with_capacity(state.marginals.len());
    for (i, (s, v)) in state.marginals.iter().zip(&vacuum.marginals).enumerate() {
        if (s.theta - v.theta).abs() > ANGLE_TOL {
            return Err(ReconstructError::AngleOrder(format!(
                "state angle {} differs from vacuum angle {} at index {i}",
                s.theta, v.theta
            )));
        }
        let var_state = s.variance();
        let var_vacuum = v.variance();
        if !(var_state > 0.0 && var_vacuum > 0.0) {
            return Err(invalid(
                format!("marginals[{i}]"),
                format!("variances must be > 0, got state {var_state}, vacuum {var_vacuum}"),
            ));
        }
        let db_se = match (s.fit_variance_se, v.fit_variance_se) {
            (None, None) => None,
            (a, b) => {
                let rs = a.unwrap_or(0.0) / var_state;
                let rv = b.unwrap_or(0.0) / var_vacuum;
                Some(10.0 / LN_10 * (rs * rs + rv * rv).sqrt())
            }
        };
        per_angle.push(AngleSqueezing {
            theta: s.theta,
            var_state,
            var_vacuum,
            db: 10.0 * (var_vacuum / var_state).log10(),
            db_se,
        });
    }
    let max = per_angle
        .iter()
        .max_by(|a, b| a.db.total_cmp(&b.db))
        .unwrap();
    let min = per_angle
        .iter()
        .min_by(|a, b| a.db.total_cmp(&b.db))
        .unwrap();
    Ok(SqueezingReport {
        max_db: max.db,
        max_db_angle: max.theta,
        min_db: min.db,
        min_db_angle: min.theta,
        uncertainty: max.db_se,
        per_angle,
    })
}

/// Ellipse fitted to the `1/e` contour of a 2D density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourEllipse {
    /// Direction of the minor axis, in `[0, pi)`.
    pub minor_angle: f64,
    pub minor_radius: f64,
    pub major_radius: f64,
    pub centre: [f64; 2],
}

impl QGrid {
    /// Fits an ellipse to the `1/e` contour around the density mean.
    ///
    /// Rays from the mean find the first crossing of `peak / e`; an ellipse
    /// satisfies `1 / r^2 = a + b cos(2 phi) + c sin(2 phi)` exactly, which is
    /// fitted by least squares.
    pub fn contour_ellipse(&self) -> Result<ContourEllipse, ReconstructError> {
        let ([mx, my], _) = self.moments();
        let peak = self.sample(mx, my);
        if !(peak > 0.0) {
            return Err(invalid("grid", "no density at the mean"));
        }
        let level = peak / std::f64::consts::E;
        let step = self.cell / 4.0;
        let max_r = self.cell * self.n as f64;
        let mut normal = [[0.0; 3]; 3];
        let mut rhs = [0.0; 3];
        let mut used = 0;
        for k in 0..CONTOUR_RAYS {
            let phi = 2.0 * PI * k as f64 / CONTOUR_RAYS as f64;
            let (s, c) = phi.sin_cos();
            let mut prev = peak;
            let mut r = 0.0;
            let mut hit = None;
            while r < max_r {
                let next_r = r + step;
                let v = self.sample(mx + next_r * c, my + next_r * s);
                if v < level {
                    hit = Some(r + step * (prev - level) / (prev - v));
                    break;
                }
                prev = v;
                r = next_r;
            }
            if let Some(r) = hit {
                let basis = [1.0, (2.0 * phi).cos(), (2.0 * phi).sin()];
                let target = 1.0 / (r * r);
                for i in 0..3 {
                    rhs[i] += basis[i] * target;
                    for j in 0..3 {
                        normal[i][j] += basis[i] * basis[j];
                    }
                }
                used += 1;
            }
        }
        if used < 6 {
            return Err(invalid("grid", "1/e contour not found"));
        }
        let [a, b, c] =
            solve3(normal, rhs).ok_or_else(|| invalid("grid", "singular contour fit"))?;
        let amp = (b * b + c * c).sqrt();
        if !(a - amp > 0.0) {
            return Err(invalid("grid", "contour is not an ellipse"));
        }
        Ok(ContourEllipse {
            minor_angle: (0.5 * c.atan2(b)).rem_euclid(PI),
            minor_radius: 1.0 / (a + amp).sqrt(),
            major_radius: 1.0 / (a - amp).sqrt(),
            centre: [mx, my],
        })
    }
}

fn solve3(m: [[f64; 3]; 3], r: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = r[row];
        }
        *o = det(&mc) / d;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{normal_pdf, GaussianStateSpec, PhasePoint};
    use crate::reconstruct::{AxisGrid, MarginalQ};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sinogram(spec: &GaussianStateSpec, angles: &[f64]) -> Sinogram {
        let axis = AxisGrid::symmetric(8.0, 161).unwrap();
        let marginals = angles
            .iter()
            .map(|&theta| {
                let v = spec.marginal_variance(theta);
                let sd = v.sqrt();
                let d = axis
                    .values()
                    .iter()
                    .map(|x| normal_pdf(x / sd) / sd)
                    .collect();
                let mut m = MarginalQ::new(theta, axis, d).unwrap();
                m.fit_variance = Some(v);
                m.fit_variance_se = Some(0.01 * v);
                m
            })
            .collect();
        Sinogram::new("g", marginals).unwrap()
    }

    fn angles(k: usize) -> Vec<f64> {
        (0..k).map(|i| PI * i as f64 / k as f64).collect()
    }

    fn state(var_major: f64, var_minor: f64, axis_angle: f64) -> GaussianStateSpec {
        GaussianStateSpec {
            mean: PhasePoint::ORIGIN,
            var_major,
            var_minor,
            axis_angle,
        }
    }

    #[test]
    fn vacuum_against_itself_is_zero() {
        let v = sinogram(
            &GaussianStateSpec::coherent(PhasePoint::ORIGIN),
            &angles(12),
        );
        let r = squeezing_db(&v, &v).unwrap();
        assert!(r.per_angle.iter().all(|a| a.db.abs() < 1e-12));
        assert_relative_eq!(
            r.uncertainty.unwrap(),
            10.0 / LN_10 * 0.01 * 2f64.sqrt(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn halved_variance_is_three_db() {
        let vac = sinogram(&state(1.0, 1.0, 0.0), &angles(12));
        let sq = sinogram(&state(1.0, 0.5, 0.0), &angles(12));
        let r = squeezing_db(&sq, &vac).unwrap();
        assert_relative_eq!(r.max_db, 10.0 * 2f64.log10(), max_relative = 1e-9);
        assert_relative_eq!(r.max_db_angle, PI / 2.0, max_relative = 1e-12);
        assert!(r.min_db.abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_references() {
        let a = sinogram(&state(1.0, 0.5, 0.0), &angles(12));
        let b = sinogram(&state(1.0, 0.5, 0.0), &angles(6));
        assert!(squeezing_db(&a, &b).is_err());
        let mut c = a.clone();
        c.marginals[0].fit_variance = Some(0.0);
        assert!(squeezing_db(&c, &a).is_err());
    }

    proptest! {
        // With vacuum variance 1/2, Gaussian Q functions obey
        // var_major * var_minor >= 1/4, so squeezing along one axis is paid
        // for by at least as much anti-squeezing along the other.
        #[test]
        fn squeezing_and_antisqueezing_balance(
            minor in 0.26f64..0.5,
            excess in 1.0f64..3.0,
            axis_angle in 0.0f64..PI,
        ) {
            let major = excess * 0.25 / minor;
            let k = 24;
            let grid = angles(k);
            let vac = sinogram(&GaussianStateSpec::coherent(PhasePoint::ORIGIN), &grid);
            let sq = sinogram(&state(major, minor, axis_angle), &grid);
            let r = squeezing_db(&sq, &vac).unwrap();
            let i = r.per_angle.iter().position(|a| a.theta == r.max_db_angle).unwrap();
            let j = (i + k / 2) % k;
            prop_assert!(r.per_angle[i].db + r.per_angle[j].db <= 1e-9);
        }
    }

    #[test]
    fn contour_of_analytic_ellipse() {
        let (sx, sy, rot) = (1.0, 0.5, 0.4f64);
        let (s, c) = rot.sin_cos();
        let g = QGrid::from_fn(161, 0.05, "t", |x, y| {
            let u = c * x + s * y;
            let v = -s * x + c * y;
            (-(u * u) / (2.0 * sx * sx) - v * v / (2.0 * sy * sy)).exp()
        });
        let e = g.contour_ellipse().unwrap();
        assert_relative_eq!(e.major_radius, 2f64.sqrt() * sx, max_relative = 1e-2);
        assert_relative_eq!(e.minor_radius, 2f64.sqrt() * sy, max_relative = 1e-2);
        assert!((e.minor_angle - (rot + PI / 2.0)).abs() < 0.01, "{e:?}");
    }

    #[test]
    fn contour_of_circle() {
        let g = QGrid::from_fn(121, 0.1, "t", |x, y| (-(x * x + y * y) / 2.0).exp());
        let e = g.contour_ellipse().unwrap();
        assert_relative_eq!(e.minor_radius, 2f64.sqrt(), max_relative = 1e-2);
        assert_relative_eq!(e.major_radius, 2f64.sqrt(), max_relative = 1e-2);
    }
}
