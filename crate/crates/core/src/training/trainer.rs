use std::f64::consts::PI;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, LossBreakdown, LossConfig, TrainError};
use crate::autodiff::Graph;
use crate::corpus::ScenarioRecord;
use crate::error::Error;
use crate::hier_decoder::PlanNoise;
use crate::model::{forward_train, init_params, prepare_sample, Batch, ModelConfig, Sample};
use crate::nn::{param_grads, Adam, ParamStore};
use crate::reasoner::{ReasonerError, ReasonerOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Cosine decay of the step size to zero over the run.
    pub cosine_decay: bool,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_iterations: Option<usize>,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            cosine_decay: false,
            max_iterations: None,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(format!("lr = {} must be positive", self.lr));
        }
        self.loss.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    /// Sample-weighted mean of each term per epoch.
    pub epochs: Vec<EpochLog>,
    /// One entry per optimizer step.
    pub iterations: Vec<LossBreakdown>,
    pub checkpoint: Checkpoint,
}

/// Runs the reasoner on every record and builds model samples, in record
/// order. Records are processed in parallel.
pub fn prepare_corpus<F>(records: &[ScenarioRecord], cfg: &ModelConfig, reason: F) -> Result<Vec<Sample>, Error>
where
    F: Fn(&ScenarioRecord) -> Result<ReasonerOutput, ReasonerError> + Sync,
{
    records
        .par_iter()
        .map(|rec| {
            let out = reason(rec)?;
            prepare_sample(rec, &out, cfg)
        })
        .collect()
}

/// Mini-batch Adam on the total loss. Parameters start from `init` or a
/// fresh draw from `cfg.seed`; shuffling and latent noise use separate
/// streams of the same seed, so equal inputs give equal logs.
pub fn train(
    samples: &[Sample],
    model: &ModelConfig,
    cfg: &TrainConfig,
    init: Option<ParamStore>,
) -> Result<TrainOutcome, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    cfg.validate().map_err(TrainError::InvalidConfig)?;
    let mut params = match init {
        Some(p) => p,
        None => init_params(model, cfg.seed).map_err(|e| TrainError::InvalidConfig(e.to_string()))?,
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(2);

    let per_epoch = samples.len().div_ceil(cfg.batch_size);
    let planned = cfg.epochs * per_epoch;
    let total_iters = cfg.max_iterations.map_or(planned, |m| m.min(planned));
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::new();
    let mut iterations = Vec::with_capacity(total_iters);

    'outer: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut acc = LossBreakdown::default();
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if iterations.len() >= total_iters {
                break;
            }
            let batch_samples: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch = Batch::new(&batch_samples);
            let noise = PlanNoise::draw(&mut noise_rng, batch.len(), model.latent);
            let mut g = Graph::new();
            let v = forward_train(&mut g, &params, model, &cfg.loss, &batch, &noise);
            let b = LossBreakdown {
                baseline: g.scalar(v.baseline),
                sim: g.scalar(v.sim),
                gt_recon: g.scalar(v.gt_recon),
                coarse: g.scalar(v.coarse),
                hier_kl: g.scalar(v.hier_kl),
                total: g.scalar(v.total),
            };
            if let Some(term) = first_non_finite(&b) {
                return Err(TrainError::Diverged {
                    epoch,
                    iteration: iterations.len(),
                    term,
                    last_good: Box::new(Checkpoint::new(model, cfg, &params)),
                });
            }
            let grads = g.backward(v.total);
            let grads = param_grads(&g, &grads, &params);
            let lr = if cfg.cosine_decay {
                cfg.lr * 0.5 * (1.0 + (PI * iterations.len() as f64 / total_iters as f64).cos())
            } else {
                cfg.lr
            };
            adam.step(&mut params, &grads, lr);

            let n = batch.len() as f64;
            acc.baseline += n * b.baseline;
            acc.sim += n * b.sim;
            acc.gt_recon += n * b.gt_recon;
            acc.coarse += n * b.coarse;
            acc.hier_kl += n * b.hier_kl;
            acc.total += n * b.total;
            seen += batch.len();
            iterations.push(b);
        }
        if seen > 0 {
            let n = seen as f64;
            epochs.push(EpochLog {
                epoch: epoch + 1,
                losses: LossBreakdown {
                    baseline: acc.baseline / n,
                    sim: acc.sim / n,
                    gt_recon: acc.gt_recon / n,
                    coarse: acc.coarse / n,
                    hier_kl: acc.hier_kl / n,
                    total: acc.total / n,
                },
            });
        }
        if iterations.len() >= total_iters {
            break 'outer;
        }
    }

    let checkpoint = Checkpoint::new(model, cfg, &params);
    Ok(TrainOutcome {
        params,
        epochs,
        iterations,
        checkpoint,
    })
}

fn first_non_finite(b: &LossBreakdown) -> Option<&'static str> {
    [
        ("baseline", b.baseline),
        ("sim", b.sim),
        ("gt_recon", b.gt_recon),
        ("coarse", b.coarse),
        ("hier_kl", b.hier_kl),
        ("total", b.total),
    ]
    .into_iter()
    .find(|(_, v)| !v.is_finite())
    .map(|(n, _)| n)
}

/// CSV with columns `epoch, baseline, sim, gt_recon, coarse, hier_kl, total`.
pub fn write_log_csv(log: &[EpochLog], out: impl Write) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "baseline", "sim", "gt_recon", "coarse", "hier_kl", "total"])?;
    for e in log {
        let l = &e.losses;
        w.write_record([
            e.epoch.to_string(),
            l.baseline.to_string(),
            l.sim.to_string(),
            l.gt_recon.to_string(),
            l.coarse.to_string(),
            l.hier_kl.to_string(),
            l.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
