//! Two-level latent trajectory decoder.
//!
//! A coarse latent is drawn from a Gaussian conditioned on the ego features
//! and the reactive command features; a fine latent from one conditioned on
//! the ego features, the coarse latent and the regulatory command features.
//! Each latent is repeated over the horizon and decoded by its own GRU and
//! output head. During training a second, "future" encoder per level also
//! sees the encoded ground-truth plan; latents are then drawn from it and a
//! KL term pulls the current encoder towards it.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{row, Graph, Tensor, Var};
use crate::coarsen::Point;
use crate::command_codec::FUSED_DIM;
use crate::error::ShapeError;
use crate::nn::{gru_step, init_gru, init_linear, init_mlp2, linear, linear_in, mlp2, ParamStore};

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("distribution encoder input width {0} is odd")]
    OddWidth(usize),
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("distribution encoder input has no positions")]
    EmptySequence,
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Coarse,
    Fine,
}

impl Level {
    pub fn encoder(self) -> &'static str {
        match self {
            Level::Coarse => "enc_c",
            Level::Fine => "enc_f",
        }
    }

    pub fn future_encoder(self) -> &'static str {
        match self {
            Level::Coarse => "enc_c_fut",
            Level::Fine => "enc_f_fut",
        }
    }

    pub fn gru(self) -> &'static str {
        match self {
            Level::Coarse => "gru_c",
            Level::Fine => "gru_f",
        }
    }

    pub fn head(self) -> &'static str {
        match self {
            Level::Coarse => "head_c",
            Level::Fine => "head_f",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Stochastic,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Latent width.
    pub latent: usize,
    /// GRU hidden width; the ego features are projected when it differs from `d`.
    pub hidden: usize,
    pub horizon: usize,
    pub min_log_sigma: f64,
    pub max_log_sigma: f64,
    /// `false` drops the coarse level: no coarse latent, no coarse stream.
    pub hierarchical: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            latent: 32,
            hidden: 64,
            horizon: 6,
            min_log_sigma: -5.0,
            max_log_sigma: 5.0,
            hierarchical: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub z: Vec<f64>,
    pub level: Level,
}

/// Distribution encoder over `[T_in, d_in]` inputs: three per-position
/// channel maps `d_in -> 2 d_in -> 2 d_in -> d_in / 2` (ReLU after the
/// first two), a mean over positions and a final map to `2 * latent`.
pub fn init_dist_encoder(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    prefix: &str,
    d_in: usize,
    latent: usize,
) -> Result<(), DecoderError> {
    if d_in % 2 != 0 {
        return Err(DecoderError::OddWidth(d_in));
    }
    init_linear(store, rng, &format!("{prefix}.c1"), d_in, 2 * d_in);
    init_linear(store, rng, &format!("{prefix}.c2"), 2 * d_in, 2 * d_in);
    init_linear(store, rng, &format!("{prefix}.c3"), 2 * d_in, d_in / 2);
    init_linear(store, rng, &format!("{prefix}.out"), d_in / 2, 2 * latent);
    Ok(())
}

/// `x` is `[B * t_in, d_in]`, positions of one sample contiguous. Returns
/// `(mu, log_sigma)`, each `[B, latent]`.
pub fn dist_encoder_forward(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    t_in: usize,
    clamp: (f64, f64),
) -> (Var, Var) {
    let h = linear(g, store, &format!("{prefix}.c1"), x);
    let h = g.relu(h);
    let h = linear(g, store, &format!("{prefix}.c2"), h);
    let h = g.relu(h);
    let h = linear(g, store, &format!("{prefix}.c3"), h);
    let pooled = if t_in == 1 { h } else { g.group_mean(h, t_in) };
    let out = linear(g, store, &format!("{prefix}.out"), pooled);
    let two_l = g.shape(out).1;
    let mu = g.slice_cols(out, 0, two_l / 2);
    let ls = g.slice_cols(out, two_l / 2, two_l);
    let ls = g.clamp(ls, clamp.0, clamp.1);
    (mu, ls)
}

pub fn dist_encode(
    input_seq: &[Vec<f64>],
    params: &ParamStore,
    prefix: &str,
    clamp: (f64, f64),
) -> Result<LatentGaussian, DecoderError> {
    let t_in = input_seq.len();
    if t_in == 0 {
        return Err(DecoderError::EmptySequence);
    }
    let d_in = input_seq[0].len();
    if d_in % 2 != 0 {
        return Err(DecoderError::OddWidth(d_in));
    }
    let c1 = format!("{prefix}.c1");
    let expected = linear_in(params, &c1).ok_or(DecoderError::MissingParam(format!("{c1}.w")))?;
    for r in input_seq {
        ShapeError::check("distribution encoder input", expected, r.len())?;
    }
    let mut g = Graph::new();
    let x = g.constant(crate::autodiff::rows(input_seq));
    let (mu, ls) = dist_encoder_forward(&mut g, params, prefix, x, t_in, clamp);
    Ok(LatentGaussian {
        mu: g.value(mu).iter().copied().collect(),
        log_sigma: g.value(ls).iter().copied().collect(),
    })
}

/// `mu + exp(log_sigma) * eps`.
pub fn reparameterize(g: &mut Graph, mu: Var, log_sigma: Var, eps: Tensor) -> Var {
    let sigma = g.exp(log_sigma);
    let e = g.constant(eps);
    let scaled = g.mul(sigma, e);
    g.add(mu, scaled)
}

pub fn standard_normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn sample(gauss: &LatentGaussian, level: Level, rng: &mut impl Rng, mode: SampleMode) -> Latent {
    let z = match mode {
        SampleMode::Mean => gauss.mu.clone(),
        SampleMode::Stochastic => gauss
            .mu
            .iter()
            .zip(&gauss.log_sigma)
            .map(|(m, ls)| {
                let e: f64 = StandardNormal.sample(rng);
                m + ls.exp() * e
            })
            .collect(),
    };
    Latent { z, level }
}

pub fn init_stream(store: &mut ParamStore, rng: &mut impl Rng, level: Level, latent: usize, d: usize, hidden: usize) {
    init_gru(store, rng, level.gru(), latent, hidden);
    if hidden != d {
        init_linear(store, rng, &format!("{}.h_proj", level.gru()), d, hidden);
    }
    init_mlp2(store, rng, level.head(), hidden, hidden, 2);
}

/// GRU over `z` repeated `horizon` times starting from `h0`; each hidden
/// state goes through the head. Returns `[B, 2 * horizon]` offsets.
pub fn decode_stream_forward(g: &mut Graph, store: &ParamStore, level: Level, z: Var, h0: Var, horizon: usize) -> Var {
    let proj = format!("{}.h_proj", level.gru());
    let mut h = if store.contains(&format!("{proj}.w")) {
        linear(g, store, &proj, h0)
    } else {
        h0
    };
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        h = gru_step(g, store, level.gru(), z, h);
        steps.push(mlp2(g, store, level.head(), h));
    }
    g.concat(&steps)
}

pub fn decode_stream(z: &Latent, f_ego: &[f64], params: &ParamStore, horizon: usize) -> Result<Vec<Point>, DecoderError> {
    if horizon == 0 {
        return Err(DecoderError::EmptyHorizon);
    }
    let w_ih = format!("{}.w_ih", z.level.gru());
    let latent = params.get(&w_ih).ok_or_else(|| DecoderError::MissingParam(w_ih.clone()))?.nrows();
    ShapeError::check("latent", latent, z.z.len())?;
    let mut g = Graph::new();
    let zv = g.constant(row(&z.z));
    let hv = g.constant(row(f_ego));
    let out = decode_stream_forward(&mut g, params, z.level, zv, hv, horizon);
    Ok(to_points(g.value(out).row(0).as_slice().unwrap()))
}

pub fn to_points(flat: &[f64]) -> Vec<Point> {
    flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

/// Creates every decoder parameter for ego features of width `d`.
pub fn init_decoder(store: &mut ParamStore, rng: &mut impl Rng, cfg: &DecoderConfig, d: usize) -> Result<(), DecoderError> {
    let l = cfg.latent;
    if cfg.hierarchical {
        init_dist_encoder(store, rng, Level::Coarse.encoder(), d + FUSED_DIM, l)?;
        init_dist_encoder(store, rng, Level::Coarse.future_encoder(), d + FUSED_DIM + d, l)?;
        init_stream(store, rng, Level::Coarse, l, d, cfg.hidden);
    }
    let fine_in = d + if cfg.hierarchical { l } else { 0 } + FUSED_DIM;
    init_dist_encoder(store, rng, Level::Fine.encoder(), fine_in, l)?;
    init_dist_encoder(store, rng, Level::Fine.future_encoder(), fine_in + d, l)?;
    init_stream(store, rng, Level::Fine, l, d, cfg.hidden);
    Ok(())
}

/// Graph handles of one planning pass.
pub struct PlanVars {
    pub pred_coarse: Option<Var>,
    pub pred_fine: Var,
    /// `(mu, log_sigma)` pairs.
    pub c_curr: Option<(Var, Var)>,
    pub f_curr: (Var, Var),
    pub c_fut: Option<(Var, Var)>,
    pub f_fut: Option<(Var, Var)>,
    pub z_c: Option<Var>,
    pub z_f: Var,
}

/// Standard-normal noise for both levels, `[B, latent]` each.
#[derive(Clone, Debug)]
pub struct PlanNoise {
    pub eps_c: Tensor,
    pub eps_f: Tensor,
}

impl PlanNoise {
    pub fn draw(rng: &mut impl Rng, batch: usize, latent: usize) -> Self {
        Self {
            eps_c: standard_normal(rng, batch, latent),
            eps_f: standard_normal(rng, batch, latent),
        }
    }
}

/// Batched planning pass. With `future` the latents come from the future
/// encoders, otherwise from the current ones. With `noise` they are
/// reparameterized samples, otherwise the means.
pub fn plan_graph(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &DecoderConfig,
    f_ego: Var,
    g_reactive: Var,
    g_regulatory: Var,
    future: Option<Var>,
    noise: Option<&PlanNoise>,
) -> PlanVars {
    let clamp = (cfg.min_log_sigma, cfg.max_log_sigma);
    let draw = |g: &mut Graph, (mu, ls): (Var, Var), eps: Option<&Tensor>| match eps {
        Some(e) => reparameterize(g, mu, ls, e.clone()),
        None => mu,
    };

    let (mut c_curr, mut c_fut, mut z_c, mut pred_coarse) = (None, None, None, None);
    if cfg.hierarchical {
        let x = g.concat(&[f_ego, g_reactive]);
        let curr = dist_encoder_forward(g, store, Level::Coarse.encoder(), x, 1, clamp);
        c_curr = Some(curr);
        let src = match future {
            Some(fut) => {
                let xf = g.concat(&[x, fut]);
                let p = dist_encoder_forward(g, store, Level::Coarse.future_encoder(), xf, 1, clamp);
                c_fut = Some(p);
                p
            }
            None => curr,
        };
        let z = draw(g, src, noise.map(|n| &n.eps_c));
        z_c = Some(z);
        pred_coarse = Some(decode_stream_forward(g, store, Level::Coarse, z, f_ego, cfg.horizon));
    }

    let x = match z_c {
        Some(z) => g.concat(&[f_ego, z, g_regulatory]),
        None => g.concat(&[f_ego, g_regulatory]),
    };
    let f_curr = dist_encoder_forward(g, store, Level::Fine.encoder(), x, 1, clamp);
    let mut f_fut = None;
    let src = match future {
        Some(fut) => {
            let xf = g.concat(&[x, fut]);
            let p = dist_encoder_forward(g, store, Level::Fine.future_encoder(), xf, 1, clamp);
            f_fut = Some(p);
            p
        }
        None => f_curr,
    };
    let z_f = draw(g, src, noise.map(|n| &n.eps_f));
    let pred_fine = decode_stream_forward(g, store, Level::Fine, z_f, f_ego, cfg.horizon);

    PlanVars {
        pred_coarse,
        pred_fine,
        c_curr,
        f_curr,
        c_fut,
        f_fut,
        z_c,
        z_f,
    }
}

/// Plain-vector result of [`plan`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanOutput {
    pub pred_coarse: Option<Vec<Point>>,
    pub pred_fine: Vec<Point>,
    pub gauss_c_curr: Option<LatentGaussian>,
    pub gauss_f_curr: LatentGaussian,
    pub gauss_c_fut: Option<LatentGaussian>,
    pub gauss_f_fut: Option<LatentGaussian>,
    pub z_c: Option<Vec<f64>>,
    pub z_f: Vec<f64>,
}

/// Single-sample planning pass. Stochastic mode draws fresh noise from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn plan(
    f_ego: &[f64],
    g_reactive: &[f64],
    g_regulatory: &[f64],
    params: &ParamStore,
    cfg: &DecoderConfig,
    mode: SampleMode,
    rng: &mut impl Rng,
    future_context: Option<&[f64]>,
) -> Result<PlanOutput, DecoderError> {
    if cfg.horizon == 0 {
        return Err(DecoderError::EmptyHorizon);
    }
    ShapeError::check("g_reactive", FUSED_DIM, g_reactive.len())?;
    ShapeError::check("g_regulatory", FUSED_DIM, g_regulatory.len())?;
    let enc_f = format!("{}.c1", Level::Fine.encoder());
    let fine_in = linear_in(params, &enc_f).ok_or_else(|| DecoderError::MissingParam(format!("{enc_f}.w")))?;
    let z_width = if cfg.hierarchical { cfg.latent } else { 0 };
    ShapeError::check("ego features", fine_in - z_width - FUSED_DIM, f_ego.len())?;
    if let Some(fc) = future_context {
        ShapeError::check("future context", f_ego.len(), fc.len())?;
    }

    let mut g = Graph::new();
    let fe = g.constant(row(f_ego));
    let gr = g.constant(row(g_reactive));
    let gg = g.constant(row(g_regulatory));
    let fut = future_context.map(|f| g.constant(row(f)));
    let noise = match mode {
        SampleMode::Stochastic => Some(PlanNoise::draw(rng, 1, cfg.latent)),
        SampleMode::Mean => None,
    };
    let v = plan_graph(&mut g, params, cfg, fe, gr, gg, fut, noise.as_ref());

    let vec_of = |x: Var| -> Vec<f64> { g.value(x).iter().copied().collect() };
    let gauss = |p: (Var, Var)| LatentGaussian {
        mu: vec_of(p.0),
        log_sigma: vec_of(p.1),
    };
    Ok(PlanOutput {
        pred_coarse: v.pred_coarse.map(|p| to_points(&vec_of(p))),
        pred_fine: to_points(&vec_of(v.pred_fine)),
        gauss_c_curr: v.c_curr.map(gauss),
        gauss_f_curr: gauss(v.f_curr),
        gauss_c_fut: v.c_fut.map(gauss),
        gauss_f_fut: v.f_fut.map(gauss),
        z_c: v.z_c.map(vec_of),
        z_f: vec_of(v.z_f),
    })
}
