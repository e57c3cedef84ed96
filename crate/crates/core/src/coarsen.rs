//! Coarse trajectory targets: a cubic Bézier through four waypoints of the
//! absolute path, resampled at uniform curve parameters.

use thiserror::Error;

pub type Point = [f64; 2];

/// Horizon the coarsening rule is defined for.
pub const COARSE_HORIZON: usize = 6;
/// 1-based waypoint indices used as control points.
pub const CONTROL_INDICES: [usize; 4] = [1, 3, 4, 6];

#[derive(Clone, Debug, PartialEq, Error)]
pub enum CoarsenError {
    #[error("coarsening needs exactly {COARSE_HORIZON} waypoints, got {0}")]
    Horizon(usize),
    #[error("curve parameter {0} outside [0, 1]")]
    ParamRange(f64),
}

pub fn offsets_to_absolute(offsets: &[Point]) -> Vec<Point> {
    let mut acc = [0.0, 0.0];
    offsets
        .iter()
        .map(|o| {
            acc = [acc[0] + o[0], acc[1] + o[1]];
            acc
        })
        .collect()
}

pub fn absolute_to_offsets(points: &[Point]) -> Vec<Point> {
    let mut prev = [0.0, 0.0];
    points
        .iter()
        .map(|p| {
            let d = [p[0] - prev[0], p[1] - prev[1]];
            prev = *p;
            d
        })
        .collect()
}

pub fn control_points(absolute: &[Point]) -> Result<[Point; 4], CoarsenError> {
    if absolute.len() != COARSE_HORIZON {
        return Err(CoarsenError::Horizon(absolute.len()));
    }
    Ok(CONTROL_INDICES.map(|i| absolute[i - 1]))
}

/// Cubic Bernstein combination of the four control points.
pub fn bezier_point(cp: &[Point; 4], t: f64) -> Result<Point, CoarsenError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(CoarsenError::ParamRange(t));
    }
    let s = 1.0 - t;
    let w = [s * s * s, 3.0 * t * s * s, 3.0 * t * t * s, t * t * t];
    let mut out = [0.0, 0.0];
    for (wk, c) in w.iter().zip(cp) {
        out[0] += wk * c[0];
        out[1] += wk * c[1];
    }
    Ok(out)
}

/// Coarse offsets for a 6-waypoint trajectory. The first and last absolute
/// points are kept exactly.
pub fn coarsen_trajectory(offsets: &[Point]) -> Result<Vec<Point>, CoarsenError> {
    let abs = offsets_to_absolute(offsets);
    let cp = control_points(&abs)?;
    let n = COARSE_HORIZON - 1;
    let mut samples = Vec::with_capacity(COARSE_HORIZON);
    for k in 0..=n {
        let p = match k {
            0 => cp[0],
            k if k == n => cp[3],
            k => bezier_point(&cp, k as f64 / n as f64)?,
        };
        samples.push(p);
    }
    Ok(absolute_to_offsets(&samples))
}
