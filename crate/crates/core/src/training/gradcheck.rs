use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LossConfig;
use crate::autodiff::{Graph, Tensor};
use crate::hier_decoder::PlanNoise;
use crate::model::{forward_train, Batch, ModelConfig, Sample};
use crate::nn::{group_of, linear, param_grads, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Scalars checked per group (all of them if the group is smaller).
    pub per_group: usize,
    pub tolerance: f64,
    /// Lower bound on the denominator of the relative error.
    pub abs_floor: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            per_group: 64,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            batch_size: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub enum GradScope {
    All,
    Group(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub checked: usize,
    /// Candidates rejected because a ±eps step crossed a non-smooth point.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub worst: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub groups: Vec<GroupReport>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Objective evaluated at the current parameter values. Returns the value
/// and the fingerprint of the smooth piece it was evaluated on.
trait Objective {
    fn eval(&self, params: &ParamStore) -> (f64, u64);
    fn gradient(&self, params: &ParamStore) -> BTreeMap<String, Tensor>;
}

struct FullModel<'a> {
    model: &'a ModelConfig,
    loss: &'a LossConfig,
    batch: Batch,
    noise: PlanNoise,
}

impl Objective for FullModel<'_> {
    fn eval(&self, params: &ParamStore) -> (f64, u64) {
        let mut g = Graph::with_kink_trace();
        let v = forward_train(&mut g, params, self.model, self.loss, &self.batch, &self.noise);
        (g.scalar(v.total), g.kink_signature().unwrap_or(0))
    }

    fn gradient(&self, params: &ParamStore) -> BTreeMap<String, Tensor> {
        let mut g = Graph::new();
        let v = forward_train(&mut g, params, self.model, self.loss, &self.batch, &self.noise);
        let grads = g.backward(v.total);
        param_grads(&g, &grads, params)
    }
}

/// `mean(c ⊙ (h W + b))`: linear in the head's last layer.
struct LinearHead {
    prefix: String,
    hidden: Tensor,
    weights: Tensor,
}

impl LinearHead {
    fn build(&self, g: &mut Graph, params: &ParamStore) -> crate::autodiff::Var {
        let h = g.constant(self.hidden.clone());
        let c = g.constant(self.weights.clone());
        let y = linear(g, params, &self.prefix, h);
        let y = g.mul(y, c);
        g.mean(y)
    }
}

impl Objective for LinearHead {
    fn eval(&self, params: &ParamStore) -> (f64, u64) {
        let mut g = Graph::new();
        let v = self.build(&mut g, params);
        (g.scalar(v), 0)
    }

    fn gradient(&self, params: &ParamStore) -> BTreeMap<String, Tensor> {
        let mut g = Graph::new();
        let v = self.build(&mut g, params);
        let grads = g.backward(v);
        param_grads(&g, &grads, params)
    }
}

fn run(
    objective: &dyn Objective,
    params: &ParamStore,
    names: &[String],
    groups: &[String],
    cfg: &GradCheckConfig,
) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7);
    let analytic = objective.gradient(params);
    let (_, base_sig) = objective.eval(params);
    let mut work = params.clone();
    let mut reports = Vec::new();

    for group in groups {
        // Every scalar of the group as (parameter name, flat index).
        let coords: Vec<(&String, usize)> = names
            .iter()
            .filter(|n| group_of(n) == group)
            .flat_map(|n| (0..params.get(n).unwrap().len()).map(move |i| (n, i)))
            .collect();
        let order: Vec<usize> = if coords.len() <= cfg.per_group {
            (0..coords.len()).collect()
        } else {
            sample_indices(&mut rng, coords.len(), coords.len()).into_vec()
        };
        let mut report = GroupReport {
            group: group.clone(),
            checked: 0,
            skipped_kinks: 0,
            max_rel_error: 0.0,
            worst: String::new(),
            passed: true,
        };
        for idx in order {
            if report.checked >= cfg.per_group {
                break;
            }
            let (name, flat) = coords[idx];
            let orig = params.get(name).unwrap().as_slice().unwrap()[flat];
            let mut at = |v: f64| {
                work.get_mut(name).unwrap().as_slice_mut().unwrap()[flat] = v;
                objective.eval(&work)
            };
            let (fp, sp) = at(orig + cfg.eps);
            let (fm, sm) = at(orig - cfg.eps);
            work.get_mut(name).unwrap().as_slice_mut().unwrap()[flat] = orig;
            if sp != base_sig || sm != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.eps);
            let a = analytic[name].as_slice().unwrap()[flat];
            let err = rel_error(a, numeric, cfg.abs_floor);
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{name}[{flat}]");
            }
        }
        report.passed = report.checked > 0 && report.max_rel_error < cfg.tolerance;
        reports.push(report);
    }
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    GradReport {
        passed: reports.iter().all(|r| r.passed),
        groups: reports,
        max_rel_error,
        tolerance: cfg.tolerance,
    }
}

/// Central differences of the total training loss, with frozen latent
/// noise, against its analytic gradient. One report entry per group.
pub fn grad_check(
    params: &ParamStore,
    model: &ModelConfig,
    loss: &LossConfig,
    samples: &[Sample],
    cfg: &GradCheckConfig,
    scope: &GradScope,
) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let take = cfg.batch_size.min(samples.len()).max(1);
    let picked: Vec<&Sample> = samples.iter().take(take).collect();
    let batch = Batch::new(&picked);
    let noise = PlanNoise::draw(&mut rng, batch.len(), model.latent);
    let objective = FullModel {
        model,
        loss,
        batch,
        noise,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let groups: Vec<String> = match scope {
        GradScope::All => params.groups().into_iter().collect(),
        GradScope::Group(g) => vec![g.clone()],
    };
    run(&objective, params, &names, &groups, cfg)
}

/// The same harness on an objective that is linear in the parameters of
/// the affine map at `prefix` (e.g. `head_f.l2`).
pub fn grad_check_linear_head(params: &ParamStore, prefix: &str, cfg: &GradCheckConfig) -> GradReport {
    let w = params
        .get(&format!("{prefix}.w"))
        .unwrap_or_else(|| panic!("no affine map at `{prefix}`"));
    let (fan_in, fan_out) = w.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let b = cfg.batch_size.max(1);
    let hidden = Tensor::from_shape_simple_fn((b, fan_in), || rng.random_range(-1.0..1.0));
    let weights = Tensor::from_shape_simple_fn((b, fan_out), || rng.random_range(-1.0..1.0));
    let mut sub = ParamStore::default();
    for part in ["w", "b"] {
        let n = format!("{prefix}.{part}");
        sub.insert(&n, params.get(&n).unwrap().clone());
    }
    let objective = LinearHead {
        prefix: prefix.to_string(),
        hidden,
        weights,
    };
    let names: Vec<String> = sub.names().map(str::to_string).collect();
    let groups: Vec<String> = sub.groups().into_iter().collect();
    run(&objective, &sub, &names, &groups, cfg)
}
