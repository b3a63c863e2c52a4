use super::ReconstructError;
use crate::model::{ln_normal_cdf, normal_pdf};
use crate::protocol::BiasProbabilityCurve;

const MIN_POINTS: usize = 5;
const MAX_ITER: usize = 200;

/// Binomial maximum-likelihood fit of `p(b) = Phi((b - center) / sigma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErfFit {
    pub center: f64,
    pub sigma: f64,
    pub log_likelihood: f64,
    /// Covariance of `(center, sigma)` from the observed information.
    pub covariance: [[f64; 2]; 2],
    pub iterations: usize,
}

impl ErfFit {
    pub fn sigma_se(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }

    pub fn center_se(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }

    /// Symmetric confidence interval on `sigma` at normal quantile `z`.
    pub fn sigma_ci(&self, z: f64) -> (f64, f64) {
        let h = z * self.sigma_se();
        (self.sigma - h, self.sigma + h)
    }
}

struct Obs {
    b: f64,
    k: f64,
    n: f64,
}

/// Per-point derivatives of the log-likelihood with respect to `z`.
struct Terms {
    ll: f64,
    /// First derivative.
    w: f64,
    /// Second derivative.
    h: f64,
    /// Expected information weight.
    info: f64,
}

fn terms(o: &Obs, z: f64) -> Terms {
    let ln_phi = normal_pdf(z).ln();
    let ln_cdf = ln_normal_cdf(z);
    let ln_sf = ln_normal_cdf(-z);
    // Mills ratios phi / Phi(z) and phi / Phi(-z).
    let r1 = (ln_phi - ln_cdf).exp();
    let r2 = (ln_phi - ln_sf).exp();
    let fail = o.n - o.k;
    let ll = (if o.k > 0.0 { o.k * ln_cdf } else { 0.0 })
        + (if fail > 0.0 { fail * ln_sf } else { 0.0 });
    Terms {
        ll,
        w: o.k * r1 - fail * r2,
        h: o.k * (-z * r1 - r1 * r1) - fail * (-z * r2 + r2 * r2),
        info: o.n * r1 * r2,
    }
}

fn log_likelihood(obs: &[Obs], c: f64, sigma: f64) -> f64 {
    obs.iter().map(|o| terms(o, (o.b - c) / sigma).ll).sum()
}

fn initial_guess(obs: &[Obs]) -> (f64, f64) {
    let span = obs.last().unwrap().b - obs[0].b;
    let (mut sw, mut sm, mut sm2) = (0.0, 0.0, 0.0);
    for w in obs.windows(2) {
        let dp = w[1].k / w[1].n - w[0].k / w[0].n;
        if dp > 0.0 {
            let mid = 0.5 * (w[0].b + w[1].b);
            sw += dp;
            sm += dp * mid;
            sm2 += dp * mid * mid;
        }
    }
    if sw > 0.0 {
        let c = sm / sw;
        let var = sm2 / sw - c * c;
        if var > 0.0 {
            return (c, var.sqrt());
        }
    }
    let closest = obs
        .iter()
        .min_by(|a, b| (a.k / a.n - 0.5).abs().total_cmp(&(b.k / b.n - 0.5).abs()))
        .unwrap();
    (closest.b, span / 4.0)
}

fn ill(msg: impl Into<String>) -> ReconstructError {
    ReconstructError::IllConditioned(msg.into())
}

/// Fits the erf model to the counts of `curve`.
pub fn fit_erf(curve: &BiasProbabilityCurve) -> Result<ErfFit, ReconstructError> {
    let pts = &curve.points;
    if pts.len() < MIN_POINTS {
        return Err(ReconstructError::InsufficientPoints {
            needed: MIN_POINTS,
            got: pts.len(),
        });
    }
    if pts
        .iter()
        .any(|p| p.n == 0 || p.n_positive > p.n || !p.b.is_finite())
    {
        return Err(super::invalid(
            "points",
            "each point needs 0 <= n_positive <= n, n > 0 and finite b",
        ));
    }
    if pts.windows(2).any(|w| !(w[1].b > w[0].b)) {
        return Err(super::invalid(
            "points",
            "bias values must be strictly increasing",
        ));
    }
    if pts.iter().all(|p| p.ci_low <= 0.5 && 0.5 <= p.ci_high) {
        return Err(ill(
            "every point is consistent with p = 0.5; the width is unidentifiable",
        ));
    }
    let obs: Vec<Obs> = pts
        .iter()
        .map(|p| Obs {
            b: p.b,
            k: p.n_positive as f64,
            n: p.n as f64,
        })
        .collect();
    let span = obs.last().unwrap().b - obs[0].b;

    let (mut c, sigma0) = initial_guess(&obs);
    let mut ls = sigma0.ln();
    let mut ll = log_likelihood(&obs, c, ls.exp());
    let mut iterations = 0;
    for it in 1..=MAX_ITER {
        iterations = it;
        let sigma = ls.exp();
        // Fisher scoring in (c, ln sigma): dz/dc = -1/sigma, dz/dln(sigma) = -z.
        let (mut gc, mut gl, mut icc, mut icl, mut i_ll) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for o in &obs {
            let z = (o.b - c) / sigma;
            let t = terms(o, z);
            gc -= t.w / sigma;
            gl -= t.w * z;
            icc += t.info / (sigma * sigma);
            icl += t.info * z / sigma;
            i_ll += t.info * z * z;
        }
        let det = icc * i_ll - icl * icl;
        if !(det > 0.0) || !det.is_finite() {
            return Err(ill("singular information matrix"));
        }
        let dc = (i_ll * gc - icl * gl) / det;
        let dl = (icc * gl - icl * gc) / det;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let nc = c + scale * dc;
            let nl = ls + scale * dl;
            let nll = log_likelihood(&obs, nc, nl.exp());
            if nll.is_finite() && nll >= ll - 1e-12 * ll.abs().max(1.0) {
                c = nc;
                ls = nl;
                ll = nll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        if (scale * dc).abs() < 1e-9 * ls.exp() && (scale * dl).abs() < 1e-9 {
            break;
        }
    }
    let sigma = ls.exp();
    if !(sigma.is_finite() && sigma > 1e-9 * span && sigma < 1e6 * span && c.is_finite()) {
        return Err(ill(format!("degenerate width {sigma}")));
    }

    let (mut hcc, mut hcs, mut hss) = (0.0, 0.0, 0.0);
    for o in &obs {
        let z = (o.b - c) / sigma;
        let t = terms(o, z);
        hcc += t.h;
        hcs += t.w + t.h * z;
        hss += 2.0 * t.w * z + t.h * z * z;
    }
    let s2 = sigma * sigma;
    // Observed information = minus the Hessian of the log-likelihood.
    let (icc, ics, iss) = (-hcc / s2, -hcs / s2, -hss / s2);
    let det = icc * iss - ics * ics;
    if !(det > 0.0 && icc > 0.0) || !det.is_finite() {
        return Err(ill("observed information is not positive definite"));
    }
    let covariance = [[iss / det, -ics / det], [-ics / det, icc / det]];
    Ok(ErfFit {
        center: c,
        sigma,
        log_likelihood: ll,
        covariance,
        iterations,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::normal_cdf;
    use crate::protocol::{wilson_interval, CurvePoint, Z_95};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn synthetic_curve(
        c: f64,
        sigma: f64,
        n: u64,
        b: &[f64],
        seed: u64,
    ) -> BiasProbabilityCurve {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = b
            .iter()
            .map(|&b| {
                let p = normal_cdf((b - c) / sigma);
                let k = (0..n).filter(|_| rng.random::<f64>() < p).count() as u64;
                let (ci_low, ci_high) = wilson_interval(k, n, Z_95);
                CurvePoint {
                    b,
                    p_hat: k as f64 / n as f64,
                    n,
                    n_positive: k,
                    ci_low,
                    ci_high,
                }
            })
            .collect();
        BiasProbabilityCurve {
            theta: 0.0,
            tau0: 0.0,
            lambda: 2.0,
            seed,
            preparation: "synthetic".into(),
            schedule: String::new(),
            points,
        }
    }

    fn grid(half: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn recovers_width_within_ci() {
        let c = synthetic_curve(0.0, 0.3, 10_000, &grid(1.2, 21), 1);
        let f = fit_erf(&c).unwrap();
        let (lo, hi) = f.sigma_ci(Z_95);
        assert!(lo <= 0.3 && 0.3 <= hi, "{f:?}");
        assert!(f.center.abs() < 4.0 * f.center_se());
    }

    // Parametric bootstrap: the spread of refitted widths should match the
    // reported standard error.
    #[test]
    fn standard_error_matches_bootstrap() {
        let b = grid(1.2, 15);
        let fits: Vec<f64> = (0..200)
            .map(|s| {
                fit_erf(&synthetic_curve(0.1, 0.3, 2000, &b, 100 + s))
                    .unwrap()
                    .sigma
            })
            .collect();
        let mean = fits.iter().sum::<f64>() / fits.len() as f64;
        let sd =
            (fits.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (fits.len() - 1) as f64).sqrt();
        let reported = fit_erf(&synthetic_curve(0.1, 0.3, 2000, &b, 7))
            .unwrap()
            .sigma_se();
        assert!(
            (sd / reported - 1.0).abs() < 0.25,
            "bootstrap {sd} vs reported {reported}"
        );
        assert!((mean - 0.3).abs() < 3.0 * sd / (fits.len() as f64).sqrt() + 1e-3);
    }

    #[test]
    fn flat_curve_is_ill_conditioned() {
        let mut c = synthetic_curve(0.0, 0.3, 1000, &grid(1.0, 7), 2);
        for p in &mut c.points {
            p.n_positive = 500;
            p.p_hat = 0.5;
            let (lo, hi) = wilson_interval(500, 1000, Z_95);
            p.ci_low = lo;
            p.ci_high = hi;
        }
        assert!(matches!(
            fit_erf(&c),
            Err(ReconstructError::IllConditioned(_))
        ));
    }

    #[test]
    fn too_few_points() {
        let c = synthetic_curve(0.0, 0.3, 1000, &grid(1.0, 4), 2);
        assert!(matches!(
            fit_erf(&c),
            Err(ReconstructError::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn sharp_step_is_ill_conditioned() {
        let c = synthetic_curve(0.0, 1e-6, 1000, &grid(1.0, 7), 3);
        assert!(fit_erf(&c).is_err());
    }

    #[test]
    fn covariance_is_symmetric_positive() {
        let f = fit_erf(&synthetic_curve(-0.2, 0.5, 5000, &grid(2.0, 11), 4)).unwrap();
        assert_eq!(f.covariance[0][1], f.covariance[1][0]);
        assert!(f.covariance[0][0] > 0.0 && f.covariance[1][1] > 0.0);
        assert!(f.covariance[0][0] * f.covariance[1][1] > f.covariance[0][1].powi(2));
    }
}
