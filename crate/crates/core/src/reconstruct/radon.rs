use std::f64::consts::PI;

use rayon::prelude::*;

use super::{AxisGrid, MarginalQ, QGrid, ReconstructError, Sinogram};

const MIN_ANGLES: usize = 4;

/// Line integrals of `q` along the direction perpendicular to angle `theta`,
/// sampled on the grid's own coordinates: `s = x cos(theta) + y sin(theta)`.
pub fn forward_project(q: &QGrid, theta: f64) -> MarginalQ {
    let n = q.n;
    let axis = AxisGrid {
        start: q.x(0),
        step: q.cell,
        len: n,
    };
    let (sn, cs) = theta.sin_cos();
    // Rays must cross the whole grid, including its corners.
    let reach = ((n as f64) * std::f64::consts::SQRT_2 / 2.0).ceil() as i64 + 1;
    let density = (0..n)
        .map(|k| {
            let s = axis.value(k);
            let mut acc = 0.0;
            for j in -reach..=reach {
                let t = j as f64 * q.cell;
                acc += q.sample(s * cs - t * sn, s * sn + t * cs);
            }
            acc * q.cell
        })
        .collect();
    MarginalQ {
        theta,
        axis,
        density,
        normalized: false,
        fit_variance: None,
        fit_variance_se: None,
    }
}

/// Convolves `p` with the spatial Ram-Lak kernel of spacing `tau`.
fn ramp_filter(p: &[f64], tau: f64) -> Vec<f64> {
    let n = p.len() as i64;
    let kernel: Vec<f64> = (0..n)
        .map(|d| match d {
            0 => 1.0 / (4.0 * tau * tau),
            d if d % 2 == 1 => -1.0 / ((d * d) as f64 * PI * PI * tau * tau),
            _ => 0.0,
        })
        .collect();
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..n {
                acc += p[j as usize] * kernel[(i - j).unsigned_abs() as usize];
            }
            acc * tau
        })
        .collect()
}

/// Angular quadrature weights: half the gap to each neighbour, with the
/// last angle wrapping to the first plus pi.
fn angle_weights(angles: &[f64]) -> Vec<f64> {
    let k = angles.len();
    (0..k)
        .map(|i| {
            let prev = if i == 0 {
                angles[k - 1] - PI
            } else {
                angles[i - 1]
            };
            let next = if i + 1 == k {
                angles[0] + PI
            } else {
                angles[i + 1]
            };
            0.5 * (next - prev)
        })
        .collect()
}

/// Filtered back-projection onto a `grid_size` square grid spanning the
/// sinogram axis.
///
/// Negative values are clipped and the result is renormalised to unit mass;
/// the clipped negative mass relative to the positive mass is kept in
/// [`QGrid::clipped_fraction`].
pub fn inverse_radon(sinogram: &Sinogram, grid_size: usize) -> Result<QGrid, ReconstructError> {
    let k = sinogram.marginals.len();
    if k < MIN_ANGLES {
        return Err(ReconstructError::InsufficientAngles {
            needed: MIN_ANGLES,
            got: k,
        });
    }
    if grid_size < 2 {
        return Err(super::invalid(
            "grid_size",
            format!("must be >= 2, got {grid_size}"),
        ));
    }
    let axis = sinogram.axis;
    for (i, m) in sinogram.marginals.iter().enumerate() {
        if !m.axis.matches(&axis) {
            return Err(ReconstructError::AxisMismatch { index: i });
        }
    }
    let angles = sinogram.angles();
    let weights = angle_weights(&angles);
    let filtered: Vec<Vec<f64>> = sinogram
        .marginals
        .par_iter()
        .map(|m| ramp_filter(&m.density, axis.step))
        .collect();
    let trig: Vec<(f64, f64)> = angles.iter().map(|t| t.sin_cos()).collect();

    let centre = 0.5 * (axis.start + axis.end());
    let span = axis.end() - axis.start;
    let cell = span / (grid_size - 1) as f64;
    let coord = |i: usize| (i as f64 - (grid_size - 1) as f64 / 2.0) * cell;
    // Projections only cover |s| <= span / 2, so nothing outside that disk is
    // measured.
    let support = (0.5 * span).powi(2);
    // Each row sums the angles in a fixed order.
    let rows: Vec<Vec<f64>> = (0..grid_size)
        .into_par_iter()
        .map(|iy| {
            let y = coord(iy);
            (0..grid_size)
                .map(|ix| {
                    let x = coord(ix);
                    if x * x + y * y > support {
                        return 0.0;
                    }
                    let mut acc = 0.0;
                    for a in 0..k {
                        let (sn, cs) = trig[a];
                        acc +=
                            weights[a] * axis.interpolate(&filtered[a], centre + x * cs + y * sn);
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let mut values: Vec<f64> = rows.into_iter().flatten().collect();

    let positive: f64 = values.iter().filter(|v| **v > 0.0).sum();
    let negative: f64 = -values.iter().filter(|v| **v < 0.0).sum::<f64>();
    if !(positive > 0.0) {
        return Err(super::invalid(
            "sinogram",
            "reconstruction has no positive mass",
        ));
    }
    values.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut grid = QGrid {
        n: grid_size,
        cell,
        values,
        source: sinogram.id.clone(),
        clipped_fraction: negative / positive,
    };
    grid.normalize()?;
    Ok(grid)
}
