//! Loss terms, the optimizer loop, checkpoints and the finite-difference
//! gradient check.

mod checkpoint;
mod gradcheck;
mod trainer;

pub use checkpoint::{Checkpoint, CheckpointConfig, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_linear_head, GradCheckConfig, GradReport, GradScope, GroupReport};
pub use trainer::{prepare_corpus, train, write_log_csv, EpochLog, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{row, Graph};
use crate::coarsen::Point;
use crate::error::ShapeError;
use crate::hier_decoder::{decode_stream_forward, DecoderError, Latent, LatentGaussian, Level};
use crate::nn::ParamStore;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss term `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch}, iteration {iteration}: {term} is not finite")]
    Diverged {
        epoch: usize,
        iteration: usize,
        term: &'static str,
        last_good: Box<Checkpoint>,
    },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Loss weights. `total = baseline + λ0·sim + λ1·gt_recon + λ2·coarse +
/// λ3·hier_kl` with `hier_kl = β_c·KL_coarse + β_f·KL_fine`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub beta_c: f64,
    pub beta_f: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            lambda1: 0.5,
            lambda2: 0.5,
            lambda3: 1.0,
            beta_c: 0.5,
            beta_f: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("lambda0", self.lambda0),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("beta_c", self.beta_c),
            ("beta_f", self.beta_f),
        ];
        match all.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            Some((name, v)) => Err(format!("{name} = {v} must be finite and non-negative")),
            None => Ok(()),
        }
    }
}

/// Unweighted loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub baseline: f64,
    pub sim: f64,
    pub gt_recon: f64,
    pub coarse: f64,
    pub hier_kl: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub baseline: f64,
    pub sim: f64,
    pub gt_recon: f64,
    pub coarse: f64,
    pub hier_kl: f64,
    pub total: f64,
}

pub fn total_loss(parts: LossParts, cfg: &LossConfig) -> Result<LossBreakdown, TrainError> {
    for (name, v) in [
        ("baseline", parts.baseline),
        ("sim", parts.sim),
        ("gt_recon", parts.gt_recon),
        ("coarse", parts.coarse),
        ("hier_kl", parts.hier_kl),
    ] {
        if !v.is_finite() {
            return Err(TrainError::NonFinite(name));
        }
    }
    Ok(LossBreakdown {
        baseline: parts.baseline,
        sim: parts.sim,
        gt_recon: parts.gt_recon,
        coarse: parts.coarse,
        hier_kl: parts.hier_kl,
        total: parts.baseline
            + cfg.lambda0 * parts.sim
            + cfg.lambda1 * parts.gt_recon
            + cfg.lambda2 * parts.coarse
            + cfg.lambda3 * parts.hier_kl,
    })
}

/// Mean absolute error over every offset coordinate.
pub fn baseline_loss(pred: &[Point], gt: &[Point]) -> Result<f64, ShapeError> {
    ShapeError::check("trajectory length", gt.len(), pred.len())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p[0] - g[0]).abs() + (p[1] - g[1]).abs())
        .sum();
    Ok(sum / (2 * pred.len()) as f64)
}

/// [`baseline_loss`] against the coarse target.
pub fn coarse_loss(pred_coarse: &[Point], gt_coarse: &[Point]) -> Result<f64, ShapeError> {
    baseline_loss(pred_coarse, gt_coarse)
}

/// `½ Σ (log(σ²_fut/σ²_curr) − 1 + (σ²_curr + (μ_curr − μ_fut)²)/σ²_fut)`.
pub fn kl_gaussian(curr: &LatentGaussian, fut: &LatentGaussian) -> f64 {
    let mut kl = 0.0;
    for i in 0..curr.mu.len() {
        let var_c = (2.0 * curr.log_sigma[i]).exp();
        let var_f = (2.0 * fut.log_sigma[i]).exp();
        let dmu = curr.mu[i] - fut.mu[i];
        kl += 0.5 * ((var_f / var_c).ln() - 1.0 + (var_c + dmu * dmu) / var_f);
    }
    kl
}

/// `β_c · KL(coarse) + β_f · KL(fine)` for `(current, future)` pairs.
pub fn hier_kl(
    c_pair: (&LatentGaussian, &LatentGaussian),
    f_pair: (&LatentGaussian, &LatentGaussian),
    cfg: &LossConfig,
) -> f64 {
    cfg.beta_c * kl_gaussian(c_pair.0, c_pair.1) + cfg.beta_f * kl_gaussian(f_pair.0, f_pair.1)
}

/// Euclidean norm of the error of the fine stream decoded from `z_f` with
/// the trajectory feature as its initial state.
pub fn gt_recon_loss(f_gt: &[f64], z_f: &Latent, gt: &[Point], params: &ParamStore) -> Result<f64, DecoderError> {
    if gt.is_empty() {
        return Err(DecoderError::EmptyHorizon);
    }
    let mut g = Graph::new();
    let z = g.constant(row(&z_f.z));
    let h = g.constant(row(f_gt));
    let out = decode_stream_forward(&mut g, params, Level::Fine, z, h, gt.len());
    let flat: Vec<f64> = g.value(out).iter().copied().collect();
    let sq: f64 = flat
        .chunks_exact(2)
        .zip(gt)
        .map(|(p, t)| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2))
        .sum();
    Ok(sq.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(mu: f64, sigma: f64, n: usize) -> LatentGaussian {
        LatentGaussian {
            mu: vec![mu; n],
            log_sigma: vec![sigma.ln(); n],
        }
    }

    #[test]
    fn kl_hand_values() {
        let g = gauss(0.3, 0.7, 4);
        assert_eq!(kl_gaussian(&g, &g), 0.0);
        assert!((kl_gaussian(&gauss(0.0, 1.0, 1), &gauss(1.0, 1.0, 1)) - 0.5).abs() < 1e-12);
        let v = kl_gaussian(&gauss(0.0, 1.0, 1), &gauss(0.0, 2.0, 1));
        assert!((v - 0.5 * (4f64.ln() - 1.0 + 0.25)).abs() < 1e-12);
        assert!((v - 0.31815).abs() < 1e-5);
    }

    #[test]
    fn hier_kl_weights() {
        let a = gauss(0.0, 1.0, 1);
        let b = gauss(1.0, 1.0, 1);
        let cfg = LossConfig::default();
        assert_eq!(hier_kl((&a, &a), (&a, &a), &cfg), 0.0);
        // Two dims at 0.5 each give a coarse KL of exactly 1.
        let a2 = gauss(0.0, 1.0, 2);
        let b2 = gauss(1.0, 1.0, 2);
        assert!((hier_kl((&a2, &b2), (&a, &a), &cfg) - 0.5).abs() < 1e-12);
        assert!((hier_kl((&a, &a), (&a2, &b2), &cfg) - 1.0).abs() < 1e-12);
        assert!(hier_kl((&a, &b), (&a, &b), &cfg) > 0.0);
    }

    #[test]
    fn baseline_examples() {
        let gt = vec![[1.0, 2.0], [0.5, -1.0]];
        assert_eq!(baseline_loss(&gt, &gt).unwrap(), 0.0);
        let shifted: Vec<Point> = gt.iter().map(|p| [p[0] + 1.0, p[1] + 1.0]).collect();
        assert_eq!(baseline_loss(&shifted, &gt).unwrap(), 1.0);
        assert_eq!(baseline_loss(&shifted, &gt).unwrap(), baseline_loss(&gt, &shifted).unwrap());
        assert!(baseline_loss(&gt[..1], &gt).is_err());
    }

    #[test]
    fn total_loss_weighting() {
        let cfg = LossConfig::default();
        assert_eq!(total_loss(LossParts::default(), &cfg).unwrap().total, 0.0);
        let one = LossParts {
            baseline: 1.0,
            ..Default::default()
        };
        assert_eq!(total_loss(one, &cfg).unwrap().total, 1.0);
        let unit = LossParts {
            baseline: 0.0,
            sim: 1.0,
            gt_recon: 1.0,
            coarse: 1.0,
            hier_kl: 1.0,
        };
        assert_eq!(total_loss(unit, &cfg).unwrap().total, 3.0);
        let bad = LossParts {
            coarse: f64::NAN,
            ..Default::default()
        };
        assert!(matches!(total_loss(bad, &cfg), Err(TrainError::NonFinite("coarse"))));
    }
}
