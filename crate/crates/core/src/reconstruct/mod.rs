//! From bias-probability curves to marginal Q functions, sinograms and a
//! reconstructed 2D Q function.

mod fit;
mod marginal;
mod radon;
mod squeeze;

pub use fit::{fit_erf, ErfFit};
pub use marginal::{sensitivity_to_marginal, SensitivityMode};
pub use radon::{forward_project, inverse_radon};
pub use squeeze::{squeezing_db, AngleSqueezing, ContourEllipse, SqueezingReport};

use std::f64::consts::PI;

use thiserror::Error;

use crate::model::ModelError;

/// Relative tolerance when comparing axis grids.
const AXIS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructError {
    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("ill-conditioned fit: {0}")]
    IllConditioned(String),
    #[error("need at least {needed} angles, got {got}")]
    InsufficientAngles { needed: usize, got: usize },
    #[error("marginal {index} does not share the sinogram axis")]
    AxisMismatch { index: usize },
    #[error("angles must be strictly increasing within [0, pi): {0}")]
    AngleOrder(String),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ReconstructError {
    ReconstructError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Uniform 1D grid `start + i * step`, `i < len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl AxisGrid {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self, ReconstructError> {
        if !(start.is_finite() && step.is_finite() && step > 0.0) {
            return Err(invalid(
                "axis",
                format!("need finite start and step > 0, got {start}, {step}"),
            ));
        }
        if len < 2 {
            return Err(invalid(
                "axis",
                format!("need at least 2 points, got {len}"),
            ));
        }
        Ok(Self { start, step, len })
    }

    /// `len` points spanning `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, len: usize) -> Result<Self, ReconstructError> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(invalid(
                "axis",
                format!("half width must be > 0, got {half_width}"),
            ));
        }
        Self::new(-half_width, 2.0 * half_width / (len.max(2) - 1) as f64, len)
    }

    pub fn value(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn end(&self) -> f64 {
        self.value(self.len - 1)
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.value(i)).collect()
    }

    pub fn matches(&self, other: &AxisGrid) -> bool {
        let tol = AXIS_TOL * self.step.max(other.step);
        self.len == other.len
            && (self.start - other.start).abs() <= tol * self.len as f64
            && (self.step - other.step).abs() <= tol
    }

    /// Linear interpolation of `values` (sampled on this grid) at `x`; zero
    /// outside the grid.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let u = (x - self.start) / self.step;
        if !(u >= 0.0 && u <= (self.len - 1) as f64) {
            return 0.0;
        }
        let i = (u.floor() as usize).min(self.len - 2);
        let f = u - i as f64;
        values[i] * (1.0 - f) + values[i + 1] * f
    }
}

/// Marginal Q function along the axis at angle `theta`, in displacement units.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalQ {
    pub theta: f64,
    pub axis: AxisGrid,
    pub density: Vec<f64>,
    pub normalized: bool,
    /// Variance taken from an erf fit, when the marginal came from one.
    pub fit_variance: Option<f64>,
    pub fit_variance_se: Option<f64>,
}

impl MarginalQ {
    pub fn new(theta: f64, axis: AxisGrid, density: Vec<f64>) -> Result<Self, ReconstructError> {
        if density.len() != axis.len {
            return Err(invalid(
                "density",
                format!(
                    "length {} does not match axis length {}",
                    density.len(),
                    axis.len
                ),
            ));
        }
        Ok(Self {
            theta,
            axis,
            density,
            normalized: false,
            fit_variance: None,
            fit_variance_se: None,
        })
    }

    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.axis.step
    }

    /// Scales to unit mass; fails on zero or negative mass.
    pub fn normalize(&mut self) -> Result<(), ReconstructError> {
        if self.density.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("density", "values must be finite and >= 0"));
        }
        let mass = self.mass();
        if !(mass > 0.0) {
            return Err(invalid("density", "zero mass cannot be normalized"));
        }
        self.density.iter_mut().for_each(|v| *v /= mass);
        self.normalized = true;
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        let m = self.mass();
        (0..self.axis.len)
            .map(|i| self.axis.value(i) * self.density[i])
            .sum::<f64>()
            * self.axis.step
            / m
    }

    pub fn moment_variance(&self) -> f64 {
        let m = self.mass();
        let mu = self.mean();
        (0..self.axis.len)
            .map(|i| (self.axis.value(i) - mu).powi(2) * self.density[i])
            .sum::<f64>()
            * self.axis.step
            / m
    }

    /// Fit variance when present, otherwise the second central moment.
    pub fn variance(&self) -> f64 {
        self.fit_variance.unwrap_or_else(|| self.moment_variance())
    }
}

/// Marginals on a shared axis at strictly increasing angles in `[0, pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub id: String,
    pub axis: AxisGrid,
    pub marginals: Vec<MarginalQ>,
}

impl Sinogram {
    pub fn new(id: impl Into<String>, marginals: Vec<MarginalQ>) -> Result<Self, ReconstructError> {
        let first = marginals
            .first()
            .ok_or(ReconstructError::InsufficientAngles { needed: 1, got: 0 })?;
        let axis = first.axis;
        for (i, m) in marginals.iter().enumerate() {
            if !m.axis.matches(&axis) {
                return Err(ReconstructError::AxisMismatch { index: i });
            }
            if !(0.0..PI).contains(&m.theta) {
                return Err(ReconstructError::AngleOrder(format!(
                    "angle {} outside [0, pi)",
                    m.theta
                )));
            }
        }
        if let Some(w) = marginals.windows(2).find(|w| !(w[1].theta > w[0].theta)) {
            return Err(ReconstructError::AngleOrder(format!(
                "{} follows {}",
                w[1].theta, w[0].theta
            )));
        }
        Ok(Self {
            id: id.into(),
            axis,
            marginals,
        })
    }

    pub fn angles(&self) -> Vec<f64> {
        self.marginals.iter().map(|m| m.theta).collect()
    }
}

/// Square 2D density on cells of side `cell`, centred on the origin.
///
/// `values` is row-major: `values[iy * n + ix]` with x increasing along a row.
#[derive(Debug, Clone, PartialEq)]
pub struct QGrid {
    pub n: usize,
    pub cell: f64,
    pub values: Vec<f64>,
    pub source: String,
    /// Negative mass removed by clipping, relative to the positive mass.
    pub clipped_fraction: f64,
}

impl QGrid {
    pub fn from_fn(
        n: usize,
        cell: f64,
        source: impl Into<String>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                values.push(f(coord(n, cell, ix), coord(n, cell, iy)));
            }
        }
        Self {
            n,
            cell,
            values,
            source: source.into(),
            clipped_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ReconstructError> {
        if self.n < 2 || !(self.cell.is_finite() && self.cell > 0.0) {
            return Err(invalid("grid", "need n >= 2 and cell > 0"));
        }
        if self.values.len() != self.n * self.n {
            return Err(invalid("grid", "value count does not match n * n"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grid", "values must be finite"));
        }
        Ok(())
    }

    pub fn x(&self, i: usize) -> f64 {
        coord(self.n, self.cell, i)
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.n + ix]
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell * self.cell
    }

    pub fn normalize(&mut self) -> Result<(), ReconstructError> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(invalid("grid", "zero mass cannot be normalized"));
        }
        self.values.iter_mut().for_each(|v| *v /= m);
        Ok(())
    }

    /// Bilinear interpolation at `(x, y)`; zero outside the grid.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let half = (self.n - 1) as f64 / 2.0;
        let u = x / self.cell + half;
        let v = y / self.cell + half;
        let last = (self.n - 1) as f64;
        if !(u >= 0.0 && u <= last && v >= 0.0 && v <= last) {
            return 0.0;
        }
        let i = (u.floor() as usize).min(self.n - 2);
        let j = (v.floor() as usize).min(self.n - 2);
        let fu = u - i as f64;
        let fv = v - j as f64;
        let a = self.at(i, j) * (1.0 - fu) + self.at(i + 1, j) * fu;
        let b = self.at(i, j + 1) * (1.0 - fu) + self.at(i + 1, j + 1) * fu;
        a * (1.0 - fv) + b * fv
    }

    /// The grid rotated counter-clockwise by `angle` about the origin.
    pub fn rotated(&self, angle: f64) -> QGrid {
        let (s, c) = angle.sin_cos();
        let mut out = QGrid::from_fn(self.n, self.cell, self.source.clone(), |x, y| {
            self.sample(c * x + s * y, -s * x + c * y)
        });
        out.clipped_fraction = self.clipped_fraction;
        out
    }

    /// Mean and covariance `[[xx, xy], [xy, yy]]` of the density.
    pub fn moments(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        let m: f64 = self.values.iter().sum();
        let (mut mx, mut my) = (0.0, 0.0);
        for iy in 0..self.n {
            for ix in 0..self.n {
                let v = self.at(ix, iy);
                mx += v * self.x(ix);
                my += v * self.x(iy);
            }
        }
        mx /= m;
        my /= m;
        let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
        for iy in 0..self.n {
            for ix in 0..self.n {
                let v = self.at(ix, iy);
                let dx = self.x(ix) - mx;
                let dy = self.x(iy) - my;
                xx += v * dx * dx;
                xy += v * dx * dy;
                yy += v * dy * dy;
            }
        }
        ([mx, my], [[xx / m, xy / m], [xy / m, yy / m]])
    }

    /// Relative L2 distance to `other` over cells where `keep(x, y)` holds.
    pub fn relative_l2(&self, other: &QGrid, keep: impl Fn(f64, f64) -> bool) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for iy in 0..self.n {
            for ix in 0..self.n {
                if keep(self.x(ix), self.x(iy)) {
                    let r = other.at(ix, iy);
                    num += (self.at(ix, iy) - r).powi(2);
                    den += r * r;
                }
            }
        }
        (num / den).sqrt()
    }
}

fn coord(n: usize, cell: f64, i: usize) -> f64 {
    (i as f64 - (n - 1) as f64 / 2.0) * cell
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marginal(theta: f64, axis: AxisGrid) -> MarginalQ {
        MarginalQ::new(theta, axis, vec![1.0; axis.len]).unwrap()
    }

    #[test]
    fn axis_interpolation() {
        let a = AxisGrid::new(0.0, 0.5, 3).unwrap();
        let v = [0.0, 1.0, 4.0];
        assert_eq!(a.interpolate(&v, 0.25), 0.5);
        assert_eq!(a.interpolate(&v, 1.0), 4.0);
        assert_eq!(a.interpolate(&v, 1.01), 0.0);
        assert_eq!(a.interpolate(&v, -0.01), 0.0);
    }

    #[test]
    fn sinogram_checks() {
        let a = AxisGrid::symmetric(3.0, 11).unwrap();
        let b = AxisGrid::symmetric(3.1, 11).unwrap();
        assert!(Sinogram::new("s", vec![marginal(0.0, a), marginal(1.0, a)]).is_ok());
        assert!(matches!(
            Sinogram::new("s", vec![marginal(0.0, a), marginal(0.0, b)]),
            Err(ReconstructError::AxisMismatch { index: 1 })
        ));
        assert!(matches!(
            Sinogram::new("s", vec![marginal(1.0, a), marginal(0.5, a)]),
            Err(ReconstructError::AngleOrder(_))
        ));
        assert!(Sinogram::new("s", vec![marginal(PI, a)]).is_err());
        assert!(Sinogram::new("s", vec![]).is_err());
    }

    #[test]
    fn marginal_normalization() {
        let a = AxisGrid::symmetric(1.0, 5).unwrap();
        let mut m = MarginalQ::new(0.0, a, vec![0.0, 1.0, 2.0, 1.0, 0.0]).unwrap();
        m.normalize().unwrap();
        assert!((m.mass() - 1.0).abs() < 1e-12);
        assert!(m.mean().abs() < 1e-12);
        let mut z = MarginalQ::new(0.0, a, vec![0.0; 5]).unwrap();
        assert!(z.normalize().is_err());
    }

    #[test]
    fn grid_rotation_and_moments() {
        let g = QGrid::from_fn(101, 0.1, "t", |x, y| (-(x * x / 2.0 + y * y / 0.5)).exp());
        let (_, cov) = g.moments();
        assert!((cov[0][0] - 1.0).abs() < 1e-3 && (cov[1][1] - 0.25).abs() < 1e-3);
        let r = g.rotated(PI / 2.0);
        let (_, cov) = r.moments();
        assert!((cov[0][0] - 0.25).abs() < 1e-3 && (cov[1][1] - 1.0).abs() < 1e-3);
    }
}
