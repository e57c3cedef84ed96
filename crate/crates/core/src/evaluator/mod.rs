//! Open-loop metrics, the reasoning cache and a kinematic closed-loop
//! replay.
//!
//! The collision metric is a disc-overlap proxy and is not comparable to
//! occupancy-based collision rates.

mod buffer;
mod metrics;
mod replay;

pub use buffer::{BufferEntry, MemoryBuffer};
pub use metrics::{
    collision_metric, collision_steps, l2_metric, l2_per_step, Convention, HorizonValues, DEFAULT_EGO_RADIUS,
    HORIZON_STEPS,
};
pub use replay::{replay_closedloop, ReplayReport, RouteFollower, SimAgent, SimConfig, DEFAULT_REUSE_THRESHOLD};

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Graph;
use crate::coarsen::{offsets_to_absolute, Point};
use crate::corpus::{AgentTrack, ScenarioRecord};
use crate::hier_decoder::{to_points, PlanNoise, SampleMode};
use crate::model::{forward_sample, prepare_sample, Batch, ModelConfig, Sample};
use crate::nn::ParamStore;
use crate::reasoner::{ReasonerError, ReasonerOutput};
use crate::training::Checkpoint;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("horizon {requested} requested but only {available} waypoints available")]
    Horizon { requested: usize, available: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("memory buffer is empty")]
    EmptyBuffer,
    #[error("query key has zero norm")]
    ZeroQuery,
    #[error("buffer keys must have nonzero norm")]
    ZeroKey,
    #[error("rollout produced a non-finite state at step {step}")]
    RolloutNan { step: usize },
    #[error("invalid simulation config: {0}")]
    Sim(String),
    #[error(transparent)]
    Pipeline(Box<crate::error::Error>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<crate::error::Error> for EvalError {
    fn from(e: crate::error::Error) -> Self {
        EvalError::Pipeline(Box::new(e))
    }
}

impl From<ReasonerError> for EvalError {
    fn from(e: ReasonerError) -> Self {
        EvalError::Pipeline(Box::new(e.into()))
    }
}

/// One planned trajectory, as per-step offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedTrajectory {
    pub fine: Vec<Point>,
    pub coarse: Option<Vec<Point>>,
}

/// Anything that maps reasoned scenarios to trajectories. `plan` must
/// return one trajectory per input, in order, and must not depend on how
/// the inputs are batched.
pub trait Planner: Sync {
    fn plan(&self, inputs: &[(&ScenarioRecord, &ReasonerOutput)]) -> Result<Vec<PlannedTrajectory>, EvalError>;
}

/// Test hook: replays the ground truth.
#[derive(Clone, Copy, Debug, Default)]
pub struct GtReplay;

impl Planner for GtReplay {
    fn plan(&self, inputs: &[(&ScenarioRecord, &ReasonerOutput)]) -> Result<Vec<PlannedTrajectory>, EvalError> {
        Ok(inputs
            .iter()
            .map(|(rec, _)| PlannedTrajectory {
                fine: rec.gt_traj.clone(),
                coarse: None,
            })
            .collect())
    }
}

/// The trained planner. In stochastic mode the latent noise of each
/// record is seeded from `(seed, record.seed)`, so results do not depend
/// on batching or order.
#[derive(Clone, Debug)]
pub struct ModelPlanner {
    pub params: ParamStore,
    pub config: ModelConfig,
    pub mode: SampleMode,
    pub seed: u64,
}

impl ModelPlanner {
    pub fn new(params: ParamStore, config: ModelConfig) -> Self {
        Self {
            params,
            config,
            mode: SampleMode::Mean,
            seed: 0,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, EvalError> {
        let params = ck.param_store().map_err(crate::error::Error::from)?;
        let cfg = ck.config.model.clone();
        let reference = crate::model::init_params(&cfg, 0)?;
        for (name, t) in reference.iter() {
            match params.get(name) {
                Some(p) if p.dim() == t.dim() => {}
                Some(p) => {
                    return Err(EvalError::Dimension(format!(
                        "checkpoint parameter `{name}` has shape {:?}, config implies {:?}",
                        p.dim(),
                        t.dim()
                    )))
                }
                None => return Err(EvalError::Dimension(format!("checkpoint lacks parameter `{name}`"))),
            }
        }
        Ok(Self::new(params, cfg))
    }

    fn noise_for(&self, samples: &[(&ScenarioRecord, Sample)]) -> Option<PlanNoise> {
        if self.mode != SampleMode::Stochastic {
            return None;
        }
        let latent = self.config.latent;
        let mut eps_c = crate::autodiff::Tensor::zeros((samples.len(), latent));
        let mut eps_f = eps_c.clone();
        for (i, (rec, _)) in samples.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(rec.seed);
            let n = PlanNoise::draw(&mut rng, 1, latent);
            eps_c.row_mut(i).assign(&n.eps_c.row(0));
            eps_f.row_mut(i).assign(&n.eps_f.row(0));
        }
        Some(PlanNoise { eps_c, eps_f })
    }
}

impl Planner for ModelPlanner {
    fn plan(&self, inputs: &[(&ScenarioRecord, &ReasonerOutput)]) -> Result<Vec<PlannedTrajectory>, EvalError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let samples = inputs
            .iter()
            .map(|(rec, out)| Ok((*rec, prepare_sample(rec, out, &self.config)?)))
            .collect::<Result<Vec<_>, crate::error::Error>>()
            .map_err(|e| match e {
                crate::error::Error::Shape(s) => EvalError::Dimension(s.to_string()),
                other => other.into(),
            })?;
        let refs: Vec<&Sample> = samples.iter().map(|(_, s)| s).collect();
        let batch = Batch::new(&refs);
        let noise = self.noise_for(&samples);
        let mut g = Graph::new();
        let v = forward_sample(&mut g, &self.params, &self.config, &batch, noise.as_ref());
        let fine = g.value(v.pred_fine).clone();
        let coarse = v.pred_coarse.map(|c| g.value(c).clone());
        Ok((0..inputs.len())
            .map(|i| PlannedTrajectory {
                fine: to_points(&fine.row(i).to_vec()),
                coarse: coarse.as_ref().map(|c| to_points(&c.row(i).to_vec())),
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub ego_radius: f64,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ego_radius: DEFAULT_EGO_RADIUS,
            batch_size: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub convention: Convention,
    /// Metres.
    pub l2_at: HorizonValues,
    /// Percent of samples.
    pub collision_at: HorizonValues,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub id: String,
    pub gt: Vec<Point>,
    pub plan: PlannedTrajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpenLoopReport {
    /// One table per convention, in [`Convention::ALL`] order.
    pub tables: Vec<MetricsTable>,
    /// Sorted by record id.
    pub scenarios: Vec<ScenarioResult>,
}

impl OpenLoopReport {
    pub fn table(&self, convention: Convention) -> &MetricsTable {
        self.tables
            .iter()
            .find(|t| t.convention == convention)
            .expect("every convention is evaluated")
    }
}

/// Reasons about every record, plans in batches and aggregates both metric
/// conventions. Records are evaluated in id order, so the result does not
/// depend on the order of `records`.
pub fn evaluate_openloop<R>(
    planner: &dyn Planner,
    records: &[ScenarioRecord],
    reason: R,
    opts: &EvalOptions,
) -> Result<OpenLoopReport, EvalError>
where
    R: Fn(&ScenarioRecord) -> Result<ReasonerOutput, ReasonerError> + Sync,
{
    let mut sorted: Vec<&ScenarioRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let reasoning: Vec<ReasonerOutput> = sorted
        .par_iter()
        .map(|r| reason(r))
        .collect::<Result<_, _>>()?;
    let pairs: Vec<(&ScenarioRecord, &ReasonerOutput)> = sorted.iter().copied().zip(&reasoning).collect();
    let plans: Vec<Vec<PlannedTrajectory>> = pairs
        .par_chunks(opts.batch_size.max(1))
        .map(|chunk| {
            let out = planner.plan(chunk)?;
            if out.len() != chunk.len() {
                return Err(EvalError::Dimension(format!(
                    "planner returned {} trajectories for {} inputs",
                    out.len(),
                    chunk.len()
                )));
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    let plans: Vec<PlannedTrajectory> = plans.into_iter().flatten().collect();

    let mut tables = Vec::new();
    for convention in Convention::ALL {
        let mut sum = [0.0; 3];
        for (rec, p) in sorted.iter().zip(&plans) {
            let m = l2_metric(&p.fine, &rec.gt_traj, convention)?;
            sum[0] += m.s1;
            sum[1] += m.s2;
            sum[2] += m.s3;
        }
        let n = sorted.len().max(1) as f64;
        let preds: Vec<Vec<Point>> = plans.iter().map(|p| p.fine.clone()).collect();
        let agents: Vec<&[AgentTrack]> = sorted.iter().map(|r| r.agents_future.as_slice()).collect();
        tables.push(MetricsTable {
            convention,
            l2_at: HorizonValues::from_horizons(sum.map(|s| s / n)),
            collision_at: collision_metric(&preds, &agents, opts.ego_radius)?,
            samples: sorted.len(),
        });
    }
    let scenarios = sorted
        .iter()
        .zip(plans)
        .map(|(rec, plan)| ScenarioResult {
            id: rec.id.clone(),
            gt: rec.gt_traj.clone(),
            plan,
        })
        .collect();
    Ok(OpenLoopReport { tables, scenarios })
}

/// CSV with columns `convention, metric, 1s, 2s, 3s, avg`.
pub fn write_metrics_csv(tables: &[MetricsTable], out: impl Write) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["convention", "metric", "1s", "2s", "3s", "avg"])?;
    for t in tables {
        for (metric, v) in [("l2_m", &t.l2_at), ("collision_pct", &t.collision_at)] {
            let mut rec = vec![t.convention.label().to_string(), metric.to_string()];
            rec.extend(v.as_array().iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn format_metrics_table(tables: &[MetricsTable]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:<14} {:>8} {:>8} {:>8} {:>8}",
        "convention", "metric", "1s", "2s", "3s", "avg"
    );
    for t in tables {
        for (metric, v) in [("L2 (m)", &t.l2_at), ("collision (%)", &t.collision_at)] {
            let [a, b, c, d] = v.as_array();
            let _ = writeln!(
                s,
                "{:<12} {:<14} {a:>8.4} {b:>8.4} {c:>8.4} {d:>8.4}",
                t.convention.label(),
                metric
            );
        }
    }
    if let Some(t) = tables.first() {
        let _ = writeln!(s, "samples: {} (collision uses a disc-overlap proxy)", t.samples);
    }
    s
}

/// Per-scenario CSV with columns `t, gt_x, gt_y, coarse_x, coarse_y,
/// fine_x, fine_y` (absolute positions; coarse columns empty if absent).
pub fn write_scenario_csv(res: &ScenarioResult, out: impl Write) -> Result<(), EvalError> {
    let gt = offsets_to_absolute(&res.gt);
    let fine = offsets_to_absolute(&res.plan.fine);
    let coarse = res.plan.coarse.as_deref().map(offsets_to_absolute);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "gt_x", "gt_y", "coarse_x", "coarse_y", "fine_x", "fine_y"])?;
    for i in 0..gt.len() {
        let t = (i + 1) as f64 * crate::corpus::DT;
        let (cx, cy) = match coarse.as_ref().and_then(|c| c.get(i)) {
            Some(p) => (p[0].to_string(), p[1].to_string()),
            None => (String::new(), String::new()),
        };
        let f = fine.get(i).copied().unwrap_or([f64::NAN; 2]);
        w.write_record([
            t.to_string(),
            gt[i][0].to_string(),
            gt[i][1].to_string(),
            cx,
            cy,
            f[0].to_string(),
            f[1].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Static plot of the three paths: ground truth black, coarse blue,
/// fine red.
pub fn scenario_svg(res: &ScenarioResult) -> String {
    let mut paths: Vec<(&str, Vec<Point>)> = vec![("black", offsets_to_absolute(&res.gt))];
    if let Some(c) = &res.plan.coarse {
        paths.push(("steelblue", offsets_to_absolute(c)));
    }
    paths.push(("crimson", offsets_to_absolute(&res.plan.fine)));
    for (_, p) in &mut paths {
        p.insert(0, [0.0, 0.0]);
    }
    let all = paths.iter().flat_map(|(_, p)| p.iter()).filter(|p| p[0].is_finite() && p[1].is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (0.0f64, 1.0f64, -1.0f64, 1.0f64);
    for p in all {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let (w, h, pad) = (400.0, 400.0, 20.0);
    let scale = ((w - 2.0 * pad) / (x1 - x0)).min((h - 2.0 * pad) / (y1 - y0));
    // Forward (+x) points up, left (+y) points left.
    let map = |p: &Point| (w / 2.0 - (p[1] - (y0 + y1) / 2.0) * scale, h - pad - (p[0] - x0) * scale);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <title>{}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        res.id
    );
    for (color, p) in &paths {
        let pts: Vec<String> = p
            .iter()
            .map(|q| {
                let (x, y) = map(q);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<id>.csv` and `<id>.svg` for every scenario into `dir`.
pub fn dump_scenarios(report: &OpenLoopReport, dir: impl AsRef<Path>) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for res in &report.scenarios {
        write_scenario_csv(res, std::fs::File::create(dir.join(format!("{}.csv", res.id)))?)?;
        std::fs::write(dir.join(format!("{}.svg", res.id)), scenario_svg(res))?;
    }
    Ok(())
}
