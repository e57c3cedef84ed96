//! Strategy-text features, the ground-truth trajectory encoder and the
//! residual update of the ego query.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::Rng;

use crate::autodiff::{cosine_parts, row, Graph, Var};
use crate::coarsen::Point;
use crate::corpus::{EgoQuery, ScenarioRecord};
use crate::error::ShapeError;
use crate::nn::{init_linear, init_mlp2, linear, linear_in, mlp2, ParamStore};

/// Width of the hashed text feature.
pub const TEXT_DIM: usize = 128;

pub const ADAPTER_PREFIX: &str = "adapter";
pub const GT_ENC_PREFIX: &str = "gt_enc";
pub const EGO_PREFIX: &str = "ego";

/// Frozen bag-of-tokens text feature: lowercase, split on
/// non-alphanumerics, signed feature hashing into `dim` buckets, then
/// L2-normalised. Text without tokens maps to zeros.
pub fn embed_text_dim(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let lower = text.to_lowercase();
    for tok in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let mut h = FnvHasher::default();
        h.write(tok.as_bytes());
        let h = h.finish();
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn embed_text(text: &str) -> Vec<f64> {
    embed_text_dim(text, TEXT_DIM)
}

pub fn init_adapter(store: &mut ParamStore, rng: &mut impl Rng, text_dim: usize, d: usize) {
    init_mlp2(store, rng, ADAPTER_PREFIX, text_dim, d, d);
}

pub fn adapter_forward(g: &mut Graph, store: &ParamStore, text_feat: Var) -> Var {
    mlp2(g, store, ADAPTER_PREFIX, text_feat)
}

/// Strategy feature for one text feature vector.
pub fn adapt(text_feat: &[f64], params: &ParamStore) -> Result<Vec<f64>, ShapeError> {
    let expected = linear_in(params, &format!("{ADAPTER_PREFIX}.l1")).unwrap_or(0);
    ShapeError::check("adapter input", expected, text_feat.len())?;
    let mut g = Graph::new();
    let x = g.constant(row(text_feat));
    let y = adapter_forward(&mut g, params, x);
    Ok(g.value(y).iter().copied().collect())
}

/// Trajectory encoder: `layers` rounds of per-point `Linear + ReLU` to
/// `hidden` channels, each followed by max-pooling over time and
/// concatenating the pooled vector back onto every point. A last max-pool
/// and a linear projection give a length-`d` feature.
pub fn init_gt_encoder(store: &mut ParamStore, rng: &mut impl Rng, layers: usize, hidden: usize, d: usize) {
    let mut input = 2;
    for i in 1..=layers {
        init_linear(store, rng, &format!("{GT_ENC_PREFIX}.l{i}"), input, hidden);
        input = 2 * hidden;
    }
    init_linear(store, rng, &format!("{GT_ENC_PREFIX}.proj"), input, d);
}

fn gt_layers(store: &ParamStore) -> usize {
    (1..)
        .take_while(|i| store.contains(&format!("{GT_ENC_PREFIX}.l{i}.w")))
        .count()
}

/// `gt` is `[B, 2T]` with waypoints laid out `x1, y1, x2, y2, ...`.
pub fn gt_encoder_forward(g: &mut Graph, store: &ParamStore, gt: Var, horizon: usize) -> Var {
    let (b, cols) = g.shape(gt);
    assert_eq!(cols, 2 * horizon, "gt encoder: width must be 2T");
    let mut f = g.reshape(gt, b * horizon, 2);
    for i in 1..=gt_layers(store) {
        let h = linear(g, store, &format!("{GT_ENC_PREFIX}.l{i}"), f);
        let h = g.relu(h);
        let pooled = g.group_max(h, horizon);
        let spread = g.repeat_rows(pooled, horizon);
        f = g.concat(&[h, spread]);
    }
    let pooled = g.group_max(f, horizon);
    linear(g, store, &format!("{GT_ENC_PREFIX}.proj"), pooled)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GtEncodeError {
    #[error("trajectory has no waypoints")]
    Empty,
}

/// Plan feature of a single trajectory of any length `T >= 1`.
pub fn encode_gt_traj(gt: &[Point], params: &ParamStore) -> Result<Vec<f64>, GtEncodeError> {
    if gt.is_empty() {
        return Err(GtEncodeError::Empty);
    }
    let flat: Vec<f64> = gt.iter().flatten().copied().collect();
    let mut g = Graph::new();
    let x = g.constant(row(&flat));
    let y = gt_encoder_forward(&mut g, params, x, gt.len());
    Ok(g.value(y).iter().copied().collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimLoss {
    pub value: f64,
    /// Set when either input had (near) zero norm and the loss was pinned to 1.
    pub degenerate: bool,
}

/// `1 - cos(fs, fg)`.
pub fn sim_loss(fs: &[f64], fg: &[f64]) -> Result<SimLoss, ShapeError> {
    ShapeError::check("sim_loss operands", fs.len(), fg.len())?;
    let (cos, na, nb) = cosine_parts(fs, fg);
    let degenerate = na < crate::autodiff::COSINE_NORM_FLOOR || nb < crate::autodiff::COSINE_NORM_FLOOR;
    Ok(SimLoss {
        value: 1.0 - cos,
        degenerate,
    })
}

/// Batch mean of `1 - cos` over rows.
pub fn sim_loss_graph(g: &mut Graph, fs: Var, fg: Var) -> Var {
    let c = g.cosine_rows(fs, fg);
    let m = g.mean(c);
    g.affine(m, -1.0, 1.0)
}

/// `q + fs`, leaving `q` untouched.
pub fn inject(q: &EgoQuery, fs: &[f64]) -> Result<EgoQuery, ShapeError> {
    ShapeError::check("strategy feature", q.0.len(), fs.len())?;
    Ok(EgoQuery(q.0.iter().zip(fs).map(|(a, b)| a + b).collect()))
}

pub fn init_ego_features(store: &mut ParamStore, rng: &mut impl Rng, d: usize, scene_dim: usize) {
    init_mlp2(store, rng, EGO_PREFIX, d + scene_dim, d, d);
}

/// Ego features from `[q_injected ; scene]`.
pub fn ego_features_forward(g: &mut Graph, store: &ParamStore, q: Var, scene: Var) -> Var {
    let x = g.concat(&[q, scene]);
    mlp2(g, store, EGO_PREFIX, x)
}

pub fn build_ego_features(q: &EgoQuery, rec: &ScenarioRecord, params: &ParamStore) -> Result<Vec<f64>, ShapeError> {
    let expected = linear_in(params, &format!("{EGO_PREFIX}.l1")).unwrap_or(0);
    ShapeError::check("ego feature input", expected, q.0.len() + rec.scene_descriptor.len())?;
    let mut g = Graph::new();
    let qv = g.constant(row(&q.0));
    let sv = g.constant(row(&rec.scene_descriptor));
    let y = ego_features_forward(&mut g, params, qv, sv);
    Ok(g.value(y).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn text_embedding_basics() {
        assert_eq!(embed_text(""), vec![0.0; TEXT_DIM]);
        assert_eq!(embed_text("--  ,"), vec![0.0; TEXT_DIM]);
        let a = embed_text("A pedestrian is crossing");
        assert_eq!(a, embed_text("a PEDESTRIAN is crossing!"));
        let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sim_loss_canonical_values() {
        let v = [0.3, -1.0, 2.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(sim_loss(&v, &v).unwrap().value, 0.0);
        assert_eq!(sim_loss(&[1.0, 0.0], &[0.0, 2.0]).unwrap().value, 1.0);
        assert_eq!(sim_loss(&v, &neg).unwrap().value, 2.0);
        let z = sim_loss(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(z.degenerate && z.value == 1.0);
    }

    #[test]
    fn inject_is_additive() {
        let q = EgoQuery(vec![1.0, 2.0]);
        assert_eq!(inject(&q, &[0.0, 0.0]).unwrap(), q);
        let twice = inject(&inject(&q, &[0.5, -1.0]).unwrap(), &[0.5, -1.0]).unwrap();
        assert_eq!(twice.0, vec![2.0, 0.0]);
        assert!(inject(&q, &[1.0]).is_err());
    }

    fn gt_params() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = ParamStore::default();
        init_gt_encoder(&mut p, &mut rng, 2, 16, 8);
        p
    }

    #[test]
    fn gt_encoder_pooling_properties() {
        let p = gt_params();
        let one = encode_gt_traj(&[[1.0, 0.5]], &p).unwrap();
        let same = encode_gt_traj(&[[1.0, 0.5]; 6], &p).unwrap();
        assert_eq!(one, same);
        assert_eq!(one.len(), 8);
        assert!(encode_gt_traj(&[], &p).is_err());
    }

    #[test]
    fn gt_encoder_ignores_duplicated_waypoints() {
        let p = gt_params();
        let traj = [[2.0, 0.1], [2.1, 0.3], [1.9, 0.6], [2.4, -0.2]];
        let base = encode_gt_traj(&traj, &p).unwrap();
        let mut dup = traj.to_vec();
        dup.push(traj[1]);
        let with_dup = encode_gt_traj(&dup, &p).unwrap();
        for (a, b) in base.iter().zip(&with_dup) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamStore::default();
        init_adapter(&mut p, &mut rng, TEXT_DIM, 8);
        init_ego_features(&mut p, &mut rng, 8, 28);
        for (_, t) in p.iter_mut() {
            t.fill(0.0);
        }
        assert_eq!(adapt(&embed_text("clear road"), &p).unwrap(), vec![0.0; 8]);
        assert_eq!(adapt(&[0.0; TEXT_DIM], &p).unwrap(), vec![0.0; 8]);
        assert!(adapt(&[0.0; 3], &p).is_err());
    }
}
