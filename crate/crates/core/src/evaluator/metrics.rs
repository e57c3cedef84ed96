use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::coarsen::{offsets_to_absolute, Point};
use crate::corpus::AgentTrack;

/// Waypoint indices (1-based) of the 1 s, 2 s and 3 s horizons.
pub const HORIZON_STEPS: [usize; 3] = [2, 4, 6];
pub const DEFAULT_EGO_RADIUS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Horizon value = mean over waypoints `1..=h`.
    VadAvg,
    /// Horizon value = value at waypoint `h`.
    UniadPoint,
}

impl Convention {
    pub const ALL: [Convention; 2] = [Convention::VadAvg, Convention::UniadPoint];

    pub fn label(self) -> &'static str {
        match self {
            Convention::VadAvg => "vad_avg",
            Convention::UniadPoint => "uniad_point",
        }
    }
}

/// Values at 1 s, 2 s, 3 s and their mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HorizonValues {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub avg: f64,
}

impl HorizonValues {
    pub fn from_horizons(v: [f64; 3]) -> Self {
        Self {
            s1: v[0],
            s2: v[1],
            s3: v[2],
            avg: (v[0] + v[1] + v[2]) / 3.0,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.s1, self.s2, self.s3, self.avg]
    }
}

fn check_horizon(len: usize) -> Result<(), EvalError> {
    let need = HORIZON_STEPS[2];
    if len < need {
        return Err(EvalError::Horizon {
            requested: need,
            available: len,
        });
    }
    Ok(())
}

/// Euclidean error at every waypoint, after converting offsets to absolute
/// positions.
pub fn l2_per_step(pred: &[Point], gt: &[Point]) -> Result<Vec<f64>, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::Dimension(format!(
            "prediction has {} waypoints, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let p = offsets_to_absolute(pred);
    let g = offsets_to_absolute(gt);
    Ok(p.iter().zip(&g).map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1])).collect())
}

pub fn l2_metric(pred: &[Point], gt: &[Point], convention: Convention) -> Result<HorizonValues, EvalError> {
    let err = l2_per_step(pred, gt)?;
    check_horizon(err.len())?;
    let v = HORIZON_STEPS.map(|h| match convention {
        Convention::VadAvg => err[..h].iter().sum::<f64>() / h as f64,
        Convention::UniadPoint => err[h - 1],
    });
    Ok(HorizonValues::from_horizons(v))
}

/// Per waypoint: does the ego disc strictly overlap any agent disc?
pub fn collision_steps(pred: &[Point], agents: &[AgentTrack], ego_radius: f64) -> Result<Vec<bool>, EvalError> {
    let ego = offsets_to_absolute(pred);
    for a in agents {
        if a.positions.len() != ego.len() {
            return Err(EvalError::Dimension(format!(
                "agent track has {} positions, trajectory {}",
                a.positions.len(),
                ego.len()
            )));
        }
    }
    Ok(ego
        .iter()
        .enumerate()
        .map(|(i, e)| {
            agents.iter().any(|a| {
                let q = a.positions[i];
                (e[0] - q[0]).hypot(e[1] - q[1]) < ego_radius + a.radius
            })
        })
        .collect())
}

/// Percentage of samples with a collision at or before each horizon.
pub fn collision_metric(
    preds: &[Vec<Point>],
    agents: &[&[AgentTrack]],
    ego_radius: f64,
) -> Result<HorizonValues, EvalError> {
    if preds.len() != agents.len() {
        return Err(EvalError::Dimension("one agent set per prediction required".into()));
    }
    if preds.is_empty() {
        return Ok(HorizonValues::default());
    }
    let mut hits = [0usize; 3];
    for (p, a) in preds.iter().zip(agents) {
        let steps = collision_steps(p, a, ego_radius)?;
        check_horizon(steps.len())?;
        for (k, h) in HORIZON_STEPS.iter().enumerate() {
            if steps[..*h].iter().any(|&c| c) {
                hits[k] += 1;
            }
        }
    }
    let n = preds.len() as f64;
    Ok(HorizonValues::from_horizons(hits.map(|c| 100.0 * c as f64 / n)))
}
