//! Python bindings: scenario generation, command parsing, coarsening, the
//! planner (train / plan / evaluate / save / load) and the memory buffer.

use std::collections::HashMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use planhead::coarsen::coarsen_trajectory;
use planhead::command_codec::{format_commands, parse_commands, Category, CommandDictionaries};
use planhead::corpus::{generate_scenario, CorpusConfig, ScenarioRecord};
use planhead::evaluator::{self, evaluate_openloop, Convention, EvalOptions, ModelPlanner, Planner as _};
use planhead::model::{init_params, ModelConfig, Variant};
use planhead::reasoner::{oracle_reason, ReasonerOutput};
use planhead::training::{self, prepare_corpus, Checkpoint, TrainConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn points(v: Vec<(f64, f64)>) -> Vec<[f64; 2]> {
    v.into_iter().map(|(x, y)| [x, y]).collect()
}

fn tuples(v: &[[f64; 2]]) -> Vec<(f64, f64)> {
    v.iter().map(|p| (p[0], p[1])).collect()
}

/// One synthetic driving scenario.
#[pyclass(module = "planhead_py", frozen, from_py_object)]
#[derive(Clone)]
struct Scenario {
    inner: ScenarioRecord,
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ScenarioRecord = serde_json::from_str(text).map_err(value_err)?;
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(runtime_err)
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn tag(&self) -> String {
        self.inner.tag.label().to_string()
    }

    #[getter]
    fn scene_descriptor(&self) -> Vec<f64> {
        self.inner.scene_descriptor.clone()
    }

    #[getter]
    fn gt_traj(&self) -> Vec<(f64, f64)> {
        tuples(&self.inner.gt_traj)
    }

    fn __repr__(&self) -> String {
        format!("Scenario(id={:?}, tag={:?})", self.inner.id, self.inner.tag.label())
    }
}

#[pyfunction]
#[pyo3(signature = (seed, count, horizon = 6, k_agents = 4))]
fn generate_corpus(seed: u64, count: u64, horizon: usize, k_agents: usize) -> PyResult<Vec<Scenario>> {
    let cfg = CorpusConfig {
        horizon,
        k_agents,
        ..Default::default()
    };
    (seed..seed + count)
        .map(|s| {
            generate_scenario(s, &cfg)
                .map(|inner| Scenario { inner })
                .map_err(value_err)
        })
        .collect()
}

/// Parses a four-line command block into `{header: option}`.
#[pyfunction]
fn parse_command_block(text: &str) -> PyResult<HashMap<String, String>> {
    let set = parse_commands(text, &CommandDictionaries::default()).map_err(value_err)?;
    Ok(Category::ALL
        .iter()
        .map(|&c| (c.header().to_string(), set.get(c).option.clone()))
        .collect())
}

/// Rule-based reasoning for a scenario: `(strategy_text, command_block)`.
#[pyfunction]
fn oracle_reasoning(scenario: &Scenario) -> (String, String) {
    let out = oracle_reason(&scenario.inner);
    (out.strategy_text, out.raw_command_text)
}

#[pyfunction]
fn round_trip_commands(text: &str) -> PyResult<String> {
    let set = parse_commands(text, &CommandDictionaries::default()).map_err(value_err)?;
    Ok(format_commands(&set))
}

/// Bézier-smoothed version of six per-step offsets.
#[pyfunction]
fn coarsen(offsets: Vec<(f64, f64)>) -> PyResult<Vec<(f64, f64)>> {
    let out = coarsen_trajectory(&points(offsets)).map_err(value_err)?;
    Ok(tuples(&out))
}

#[pyfunction]
fn kl_gaussian(mu_curr: Vec<f64>, log_sigma_curr: Vec<f64>, mu_fut: Vec<f64>, log_sigma_fut: Vec<f64>) -> PyResult<f64> {
    let n = mu_curr.len();
    if [log_sigma_curr.len(), mu_fut.len(), log_sigma_fut.len()].iter().any(|&l| l != n) {
        return Err(value_err("all four vectors must have the same length"));
    }
    let c = planhead::hier_decoder::LatentGaussian {
        mu: mu_curr,
        log_sigma: log_sigma_curr,
    };
    let f = planhead::hier_decoder::LatentGaussian {
        mu: mu_fut,
        log_sigma: log_sigma_fut,
    };
    Ok(training::kl_gaussian(&c, &f))
}

/// `{1s, 2s, 3s, avg}` L2 error; `convention` is `vad_avg` or `uniad_point`.
#[pyfunction]
#[pyo3(signature = (pred, gt, convention = "vad_avg"))]
fn l2_metric(pred: Vec<(f64, f64)>, gt: Vec<(f64, f64)>, convention: &str) -> PyResult<HashMap<String, f64>> {
    let conv = parse_convention(convention)?;
    let m = evaluator::l2_metric(&points(pred), &points(gt), conv).map_err(value_err)?;
    Ok(horizon_map(&m))
}

fn parse_convention(s: &str) -> PyResult<Convention> {
    match s {
        "vad_avg" => Ok(Convention::VadAvg),
        "uniad_point" => Ok(Convention::UniadPoint),
        other => Err(value_err(format!("unknown convention `{other}`"))),
    }
}

fn horizon_map(m: &evaluator::HorizonValues) -> HashMap<String, f64> {
    HashMap::from([
        ("1s".to_string(), m.s1),
        ("2s".to_string(), m.s2),
        ("3s".to_string(), m.s3),
        ("avg".to_string(), m.avg),
    ])
}

fn oracle_all(s: &[Scenario]) -> Vec<ScenarioRecord> {
    s.iter().map(|x| x.inner.clone()).collect()
}

/// The trajectory planner with its parameters.
#[pyclass(module = "planhead_py")]
struct Planner {
    inner: ModelPlanner,
}

#[pymethods]
impl Planner {
    /// Fresh parameters. `variant` is `full`, `single_level` or `plain`;
    /// `config_json` overrides model settings.
    #[new]
    #[pyo3(signature = (seed = 0, variant = "full", config_json = None))]
    fn new(seed: u64, variant: &str, config_json: Option<&str>) -> PyResult<Self> {
        let base: ModelConfig = match config_json {
            Some(t) => serde_json::from_str(t).map_err(value_err)?,
            None => ModelConfig::default(),
        };
        let v = match variant {
            "full" => Variant::Full,
            "single_level" => Variant::SingleLevel,
            "plain" => Variant::Plain,
            other => return Err(value_err(format!("unknown variant `{other}`"))),
        };
        let cfg = base.variant(v);
        let params = init_params(&cfg, seed).map_err(value_err)?;
        Ok(Self {
            inner: ModelPlanner::new(params, cfg),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = Checkpoint::load(path).map_err(runtime_err)?;
        Ok(Self {
            inner: ModelPlanner::from_checkpoint(&ck).map_err(value_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        Checkpoint::new(&self.inner.config, &TrainConfig::default(), &self.inner.params)
            .save(path)
            .map_err(runtime_err)
    }

    fn num_parameters(&self) -> usize {
        self.inner.params.scalar_count()
    }

    /// Trains in place with oracle reasoning; returns the per-epoch total
    /// loss.
    #[pyo3(signature = (scenarios, epochs = 5, seed = 0, batch_size = 32, lr = 1e-3))]
    fn train(
        &mut self,
        py: Python<'_>,
        scenarios: Vec<Scenario>,
        epochs: usize,
        seed: u64,
        batch_size: usize,
        lr: f64,
    ) -> PyResult<Vec<f64>> {
        let recs = oracle_all(&scenarios);
        let cfg = self.inner.config.clone();
        let init = self.inner.params.clone();
        let tc = TrainConfig {
            epochs,
            seed,
            batch_size,
            lr,
            ..Default::default()
        };
        let outcome = py
            .detach(|| {
                let samples = prepare_corpus(&recs, &cfg, |r| Ok(oracle_reason(r))).map_err(|e| e.to_string())?;
                training::train(&samples, &cfg, &tc, Some(init)).map_err(|e| e.to_string())
            })
            .map_err(runtime_err)?;
        self.inner.params = outcome.params;
        Ok(outcome.epochs.iter().map(|e| e.losses.total).collect())
    }

    /// Plans one scenario with oracle reasoning: `(fine, coarse or None)`.
    fn plan(&self, scenario: &Scenario) -> PyResult<(Vec<(f64, f64)>, Option<Vec<(f64, f64)>>)> {
        let out: ReasonerOutput = oracle_reason(&scenario.inner);
        let mut res = self.inner.plan(&[(&scenario.inner, &out)]).map_err(value_err)?;
        let p = res.remove(0);
        Ok((tuples(&p.fine), p.coarse.as_deref().map(tuples)))
    }

    /// Open-loop metrics: `{convention: {"l2": {...}, "collision": {...}}}`.
    #[pyo3(signature = (scenarios, ego_radius = 1.0))]
    fn evaluate(
        &self,
        py: Python<'_>,
        scenarios: Vec<Scenario>,
        ego_radius: f64,
    ) -> PyResult<HashMap<String, HashMap<String, HashMap<String, f64>>>> {
        let recs = oracle_all(&scenarios);
        let opts = EvalOptions {
            ego_radius,
            ..Default::default()
        };
        let report = py
            .detach(|| evaluate_openloop(&self.inner, &recs, |r| Ok(oracle_reason(r)), &opts))
            .map_err(runtime_err)?;
        Ok(report
            .tables
            .iter()
            .map(|t| {
                (
                    t.convention.label().to_string(),
                    HashMap::from([
                        ("l2".to_string(), horizon_map(&t.l2_at)),
                        ("collision".to_string(), horizon_map(&t.collision_at)),
                    ]),
                )
            })
            .collect())
    }
}

/// Cosine-similarity cache from feature vectors to strings.
#[pyclass(module = "planhead_py")]
#[derive(Default)]
struct MemoryBuffer {
    inner: evaluator::MemoryBuffer<String>,
}

#[pymethods]
impl MemoryBuffer {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, key: Vec<f64>, payload: String) -> PyResult<usize> {
        self.inner.insert(key, payload).map_err(value_err)
    }

    /// `(index, payload, similarity)` of the most similar key.
    fn lookup(&self, query: Vec<f64>) -> PyResult<(usize, String, f64)> {
        let (i, e, s) = self.inner.lookup(&query).map_err(value_err)?;
        Ok((i, e.payload.clone(), s))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pymodule]
fn planhead_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<Planner>()?;
    m.add_class::<MemoryBuffer>()?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(parse_command_block, m)?)?;
    m.add_function(wrap_pyfunction!(round_trip_commands, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_reasoning, m)?)?;
    m.add_function(wrap_pyfunction!(coarsen, m)?)?;
    m.add_function(wrap_pyfunction!(kl_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(l2_metric, m)?)?;
    Ok(())
}
