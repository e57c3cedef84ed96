//! The complete planner: scene encoder, strategy injection, command
//! embeddings, ego features and the latent trajectory decoder, wired into
//! batched training and inference graphs.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{rows, Graph, Tensor, Var};
use crate::coarsen::{coarsen_trajectory, Point, COARSE_HORIZON};
use crate::command_codec::{
    batch_weights, embed_graph, init_embeddings, parse_commands, CommandDictionaries, CommandInput, CommandSet,
    FUSED_DIM,
};
use crate::corpus::{init_scene_encoder, scene_dim, scene_encoder_forward, ScenarioRecord};
use crate::error::{Error, ShapeError};
use crate::hier_decoder::{decode_stream_forward, init_decoder, plan_graph, DecoderConfig, Level, PlanNoise, PlanVars};
use crate::nn::ParamStore;
use crate::reasoner::ReasonerOutput;
use crate::strategy_injector::{
    adapter_forward, embed_text_dim, ego_features_forward, gt_encoder_forward, init_adapter, init_ego_features,
    init_gt_encoder, sim_loss_graph,
};
use crate::training::LossConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Ego-query / feature width.
    pub d: usize,
    pub horizon: usize,
    pub k_agents: usize,
    pub text_dim: usize,
    pub gt_layers: usize,
    pub gt_hidden: usize,
    pub latent: usize,
    pub min_log_sigma: f64,
    pub max_log_sigma: f64,
    /// Strategy-text injection and its two auxiliary losses.
    pub use_strategy: bool,
    /// Command embeddings; when off the decoder sees zeros in their place.
    pub use_commands: bool,
    /// Two-level decoder; when off only the fine level exists.
    pub hierarchical: bool,
    /// Keep the similarity loss from updating the trajectory encoder.
    pub sim_stop_grad: bool,
    /// Keep the reconstruction loss from updating the fine decoder.
    pub recon_stop_grad: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            horizon: 6,
            k_agents: 4,
            text_dim: crate::strategy_injector::TEXT_DIM,
            gt_layers: 2,
            gt_hidden: 64,
            latent: 32,
            min_log_sigma: -5.0,
            max_log_sigma: 5.0,
            use_strategy: true,
            use_commands: true,
            hierarchical: true,
            sim_stop_grad: false,
            recon_stop_grad: false,
        }
    }
}

/// Named ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Fine stream only: no coarse latent, no coarse loss or KL.
    SingleLevel,
    /// No strategy injection, no commands, single-level decoder.
    Plain,
}

impl ModelConfig {
    pub fn variant(self, v: Variant) -> Self {
        match v {
            Variant::Full => Self {
                use_strategy: true,
                use_commands: true,
                hierarchical: true,
                ..self
            },
            Variant::SingleLevel => Self {
                hierarchical: false,
                ..self
            },
            Variant::Plain => Self {
                use_strategy: false,
                use_commands: false,
                hierarchical: false,
                ..self
            },
        }
    }

    pub fn scene_dim(&self) -> usize {
        scene_dim(self.k_agents)
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            latent: self.latent,
            hidden: self.d,
            horizon: self.horizon,
            min_log_sigma: self.min_log_sigma,
            max_log_sigma: self.max_log_sigma,
            hierarchical: self.hierarchical,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("d", self.d),
            ("horizon", self.horizon),
            ("k_agents", self.k_agents),
            ("text_dim", self.text_dim),
            ("gt_hidden", self.gt_hidden),
            ("latent", self.latent),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be positive"));
        }
        if self.d % 2 != 0 {
            return Err(format!("d = {} must be even (distribution encoders halve their input)", self.d));
        }
        if self.hierarchical && self.latent % 2 != 0 {
            return Err(format!(
                "latent = {} must be even (the fine encoder input includes the coarse latent)",
                self.latent
            ));
        }
        if !(self.min_log_sigma < self.max_log_sigma) {
            return Err("min_log_sigma must be below max_log_sigma".into());
        }
        if self.hierarchical && self.horizon != COARSE_HORIZON {
            return Err(format!("the two-level decoder needs horizon {COARSE_HORIZON}"));
        }
        Ok(())
    }
}

/// Fresh parameters drawn from `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore, Error> {
    cfg.validate().map_err(crate::config::ConfigError::Invalid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::default();
    init_scene_encoder(&mut p, &mut rng, cfg.scene_dim(), cfg.d);
    if cfg.use_strategy {
        init_adapter(&mut p, &mut rng, cfg.text_dim, cfg.d);
    }
    init_gt_encoder(&mut p, &mut rng, cfg.gt_layers, cfg.gt_hidden, cfg.d);
    init_ego_features(&mut p, &mut rng, cfg.d, cfg.scene_dim());
    if cfg.use_commands {
        init_embeddings(&mut p, &mut rng);
    }
    init_decoder(&mut p, &mut rng, &cfg.decoder(), cfg.d)?;
    Ok(p)
}

/// One record turned into model inputs and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub scene: Vec<f64>,
    pub text: Vec<f64>,
    pub commands: CommandSet,
    /// `x1, y1, ..., xT, yT` offsets.
    pub gt: Vec<f64>,
    pub gt_coarse: Vec<f64>,
}

pub fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flatten().copied().collect()
}

pub fn prepare_sample(rec: &ScenarioRecord, reasoning: &ReasonerOutput, cfg: &ModelConfig) -> Result<Sample, Error> {
    ShapeError::check("scene descriptor", cfg.scene_dim(), rec.scene_descriptor.len())?;
    ShapeError::check("ground-truth horizon", cfg.horizon, rec.gt_traj.len())?;
    let commands = parse_commands(&reasoning.raw_command_text, &CommandDictionaries::default())?;
    let gt_coarse = if rec.gt_traj.len() == COARSE_HORIZON {
        coarsen_trajectory(&rec.gt_traj)?
    } else {
        rec.gt_traj.clone()
    };
    Ok(Sample {
        id: rec.id.clone(),
        scene: rec.scene_descriptor.clone(),
        text: embed_text_dim(&reasoning.strategy_text, cfg.text_dim),
        commands,
        gt: flatten(&rec.gt_traj),
        gt_coarse: flatten(&gt_coarse),
    })
}

/// Stacked samples, one per row.
#[derive(Clone, Debug)]
pub struct Batch {
    pub scene: Tensor,
    pub text: Tensor,
    pub commands: [Tensor; 4],
    pub gt: Tensor,
    pub gt_coarse: Tensor,
}

impl Batch {
    pub fn new(samples: &[&Sample]) -> Self {
        let stack = |f: &dyn Fn(&Sample) -> &Vec<f64>| rows(&samples.iter().map(|s| f(s).clone()).collect::<Vec<_>>());
        let cmds: Vec<CommandInput<'_>> = samples.iter().map(|s| CommandInput::OneHot(&s.commands)).collect();
        Self {
            scene: stack(&|s| &s.scene),
            text: stack(&|s| &s.text),
            commands: batch_weights(&cmds),
            gt: stack(&|s| &s.gt),
            gt_coarse: stack(&|s| &s.gt_coarse),
        }
    }

    pub fn len(&self) -> usize {
        self.scene.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Front {
    f_ego: Var,
    g_reactive: Var,
    g_regulatory: Var,
    strategy: Option<Var>,
}

fn front(g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, batch: &Batch) -> Front {
    let b = batch.len();
    let scene = g.constant(batch.scene.clone());
    let mut q = scene_encoder_forward(g, store, scene);
    let mut strategy = None;
    if cfg.use_strategy {
        let text = g.constant(batch.text.clone());
        let fs = adapter_forward(g, store, text);
        q = g.add(q, fs);
        strategy = Some(fs);
    }
    let f_ego = ego_features_forward(g, store, q, scene);
    let (g_reactive, g_regulatory) = if cfg.use_commands {
        embed_graph(g, store, &batch.commands).expect("command tables checked at init")
    } else {
        (
            g.constant(Array2::zeros((b, FUSED_DIM))),
            g.constant(Array2::zeros((b, FUSED_DIM))),
        )
    };
    Front {
        f_ego,
        g_reactive,
        g_regulatory,
        strategy,
    }
}

/// Inference pass: current posteriors, latent means.
pub fn forward_infer(g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, batch: &Batch) -> PlanVars {
    forward_sample(g, store, cfg, batch, None)
}

/// Inference pass from the current posteriors; with `noise` the latents are
/// reparameterized draws instead of the means.
pub fn forward_sample(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    batch: &Batch,
    noise: Option<&PlanNoise>,
) -> PlanVars {
    let fr = front(g, store, cfg, batch);
    plan_graph(g, store, &cfg.decoder(), fr.f_ego, fr.g_reactive, fr.g_regulatory, None, noise)
}

/// Loss nodes of one training pass.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub baseline: Var,
    pub sim: Var,
    pub gt_recon: Var,
    pub coarse: Var,
    pub hier_kl: Var,
    pub total: Var,
}

/// Summed-over-dimensions, batch-averaged KL between two diagonal
/// Gaussians given as `(mu, log_sigma)` nodes.
pub fn kl_graph(g: &mut Graph, curr: (Var, Var), fut: (Var, Var)) -> Var {
    let (mu_c, ls_c) = curr;
    let (mu_f, ls_f) = fut;
    // ½(2(ls_f − ls_c) − 1 + (e^{2 ls_c} + (mu_c − mu_f)²) e^{−2 ls_f})
    let log_ratio = g.sub(ls_f, ls_c);
    let var_ratio = g.affine(log_ratio, -2.0, 0.0);
    let var_ratio = g.exp(var_ratio);
    let dmu = g.sub(mu_c, mu_f);
    let dmu2 = g.square(dmu);
    let inv_var_f = g.affine(ls_f, -2.0, 0.0);
    let inv_var_f = g.exp(inv_var_f);
    let mean_term = g.mul(dmu2, inv_var_f);
    let a = g.add(var_ratio, mean_term);
    let a = g.affine(a, 0.5, -0.5);
    let per_dim = g.add(log_ratio, a);
    let per_sample = g.row_sum(per_dim);
    g.mean(per_sample)
}

fn mean_abs_diff(g: &mut Graph, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let d = g.abs(d);
    g.mean(d)
}

/// Training pass: latents drawn from the future posteriors with the given
/// noise; all five loss terms and their weighted total.
pub fn forward_train(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    loss: &LossConfig,
    batch: &Batch,
    noise: &PlanNoise,
) -> LossVars {
    let fr = front(g, store, cfg, batch);
    let gt = g.constant(batch.gt.clone());
    let f_gt = gt_encoder_forward(g, store, gt, cfg.horizon);
    let plan = plan_graph(
        g,
        store,
        &cfg.decoder(),
        fr.f_ego,
        fr.g_reactive,
        fr.g_regulatory,
        Some(f_gt),
        Some(noise),
    );
    let zero = g.constant(Array2::zeros((1, 1)));

    let baseline = mean_abs_diff(g, plan.pred_fine, gt);
    let coarse = match plan.pred_coarse {
        Some(pc) => {
            let target = g.constant(batch.gt_coarse.clone());
            mean_abs_diff(g, pc, target)
        }
        None => zero,
    };

    let (sim, gt_recon) = match fr.strategy {
        Some(fs) => {
            let fg = if cfg.sim_stop_grad { g.detach(f_gt) } else { f_gt };
            let sim = sim_loss_graph(g, fs, fg);
            g.set_params_frozen(cfg.recon_stop_grad);
            let recon = decode_stream_forward(g, store, Level::Fine, plan.z_f, f_gt, cfg.horizon);
            g.set_params_frozen(false);
            let diff = g.sub(recon, gt);
            let norms = g.row_norm(diff);
            (sim, g.mean(norms))
        }
        None => (zero, zero),
    };

    let kl_f = kl_graph(g, plan.f_curr, plan.f_fut.expect("future posterior in training"));
    let kl_f = g.affine(kl_f, loss.beta_f, 0.0);
    let hier_kl = match (plan.c_curr, plan.c_fut) {
        (Some(c), Some(cf)) => {
            let kl_c = kl_graph(g, c, cf);
            let kl_c = g.affine(kl_c, loss.beta_c, 0.0);
            g.add(kl_c, kl_f)
        }
        _ => kl_f,
    };

    let mut total = baseline;
    for (term, w) in [
        (sim, loss.lambda0),
        (gt_recon, loss.lambda1),
        (coarse, loss.lambda2),
        (hier_kl, loss.lambda3),
    ] {
        let t = g.affine(term, w, 0.0);
        total = g.add(total, t);
    }
    LossVars {
        baseline,
        sim,
        gt_recon,
        coarse,
        hier_kl,
        total,
    }
}
