//! Parameter storage and the small layer vocabulary the planner is built
//! from: affine maps, two-layer perceptrons and a GRU cell.
//!
//! Parameters are addressed by dotted names (`"head_f.l2.w"`); the prefix
//! before the first dot is the parameter group.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};

/// Named trainable tensors, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

/// Nested `{group: {name: rows}}` form used by checkpoint files.
pub type GroupedParams = BTreeMap<String, BTreeMap<String, Vec<Vec<f64>>>>;

pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

impl ParamStore {
    pub fn insert(&mut self, name: &str, value: Tensor) {
        self.tensors.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn groups(&self) -> BTreeSet<String> {
        self.names().map(|n| group_of(n).to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn to_grouped(&self) -> GroupedParams {
        let mut out = GroupedParams::new();
        for (name, t) in &self.tensors {
            let rows = t.outer_iter().map(|r| r.to_vec()).collect();
            out.entry(group_of(name).to_string())
                .or_default()
                .insert(name.clone(), rows);
        }
        out
    }

    /// Inverse of [`ParamStore::to_grouped`]. Fails on ragged rows or a
    /// name filed under the wrong group.
    pub fn from_grouped(grouped: &GroupedParams) -> Result<Self, String> {
        let mut store = Self::default();
        for (group, entries) in grouped {
            for (name, rows) in entries {
                if group_of(name) != group {
                    return Err(format!("parameter `{name}` filed under group `{group}`"));
                }
                let r = rows.len();
                let c = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|row| row.len() != c) {
                    return Err(format!("parameter `{name}` has ragged rows"));
                }
                let flat = rows.iter().flatten().copied().collect();
                let t = Array2::from_shape_vec((r, c), flat).map_err(|e| e.to_string())?;
                store.insert(name, t);
            }
        }
        Ok(store)
    }
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

/// Weight `[fan_in, fan_out]` and bias `[1, fan_out]`, both uniform in
/// `±1/sqrt(fan_in)`.
pub fn init_linear(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, fan_in: usize, fan_out: usize) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    store.insert(&format!("{prefix}.w"), uniform(rng, fan_in, fan_out, bound));
    store.insert(&format!("{prefix}.b"), uniform(rng, 1, fan_out, bound));
}

pub fn init_uniform(store: &mut ParamStore, rng: &mut impl Rng, name: &str, rows: usize, cols: usize, bound: f64) {
    store.insert(name, uniform(rng, rows, cols, bound));
}

/// `x · W + b`.
pub fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Var {
    let w = g.param(store, &format!("{prefix}.w"));
    let b = g.param(store, &format!("{prefix}.b"));
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

/// Input width expected by the affine map at `prefix`.
pub fn linear_in(store: &ParamStore, prefix: &str) -> Option<usize> {
    store.get(&format!("{prefix}.w")).map(|w| w.nrows())
}

/// Two-layer perceptron `prefix.l1 -> ReLU -> prefix.l2`.
pub fn init_mlp2(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, input: usize, hidden: usize, output: usize) {
    init_linear(store, rng, &format!("{prefix}.l1"), input, hidden);
    init_linear(store, rng, &format!("{prefix}.l2"), hidden, output);
}

pub fn mlp2(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Var {
    let h = linear(g, store, &format!("{prefix}.l1"), x);
    let h = g.relu(h);
    linear(g, store, &format!("{prefix}.l2"), h)
}

/// GRU cell weights, gates packed as `[reset | update | candidate]`.
pub fn init_gru(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, input: usize, hidden: usize) {
    let bound = 1.0 / (hidden as f64).sqrt();
    init_uniform(store, rng, &format!("{prefix}.w_ih"), input, 3 * hidden, bound);
    init_uniform(store, rng, &format!("{prefix}.w_hh"), hidden, 3 * hidden, bound);
    init_uniform(store, rng, &format!("{prefix}.b_ih"), 1, 3 * hidden, bound);
    init_uniform(store, rng, &format!("{prefix}.b_hh"), 1, 3 * hidden, bound);
}

/// One GRU step:
///
/// ```text
/// r  = σ(x W_ir + b_ir + h W_hr + b_hr)
/// u  = σ(x W_iu + b_iu + h W_hu + b_hu)
/// n  = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 - u) ⊙ n + u ⊙ h
/// ```
pub fn gru_step(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, h: Var) -> Var {
    let hidden = g.shape(h).1;
    let w_ih = g.param(store, &format!("{prefix}.w_ih"));
    let w_hh = g.param(store, &format!("{prefix}.w_hh"));
    let b_ih = g.param(store, &format!("{prefix}.b_ih"));
    let b_hh = g.param(store, &format!("{prefix}.b_hh"));
    let gi = g.matmul(x, w_ih);
    let gi = g.add_row(gi, b_ih);
    let gh = g.matmul(h, w_hh);
    let gh = g.add_row(gh, b_hh);

    let gi_r = g.slice_cols(gi, 0, hidden);
    let gi_u = g.slice_cols(gi, hidden, 2 * hidden);
    let gi_n = g.slice_cols(gi, 2 * hidden, 3 * hidden);
    let gh_r = g.slice_cols(gh, 0, hidden);
    let gh_u = g.slice_cols(gh, hidden, 2 * hidden);
    let gh_n = g.slice_cols(gh, 2 * hidden, 3 * hidden);

    let r = g.add(gi_r, gh_r);
    let r = g.sigmoid(r);
    let u = g.add(gi_u, gh_u);
    let u = g.sigmoid(u);
    let rn = g.mul(r, gh_n);
    let n = g.add(gi_n, rn);
    let n = g.tanh(n);

    let keep = g.affine(u, -1.0, 1.0);
    let a = g.mul(keep, n);
    let b = g.mul(u, h);
    g.add(a, b)
}

/// Adaptive-moment optimizer state, one slot per parameter name.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    #[serde(skip)]
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr` (callers pass a scheduled
    /// value or `self.lr`). Parameters missing from `grads` are untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Array2::zeros(g.dim()), Array2::zeros(g.dim())));
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

/// Gradients of the bound parameters, zero-filled for any parameter of
/// `store` that the graph never touched.
pub fn param_grads(g: &Graph, grads: &crate::autodiff::Gradients, store: &ParamStore) -> BTreeMap<String, Tensor> {
    let mut out: BTreeMap<String, Tensor> = store
        .iter()
        .map(|(n, t)| (n.clone(), Array2::zeros(t.dim())))
        .collect();
    for (name, v) in g.bound_params() {
        if let Some(gr) = grads.get(*v) {
            out.insert(name.clone(), gr.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::row;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Straight-line scalar GRU step over plain slices, written from the
    /// gate equations without the graph.
    fn reference_gru(store: &ParamStore, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
        let w_ih = store.get(&format!("{prefix}.w_ih")).unwrap();
        let w_hh = store.get(&format!("{prefix}.w_hh")).unwrap();
        let b_ih = store.get(&format!("{prefix}.b_ih")).unwrap();
        let b_hh = store.get(&format!("{prefix}.b_hh")).unwrap();
        let hs = h.len();
        let affine = |col: usize, src: &[f64], w: &Tensor, b: &Tensor| -> f64 {
            b[[0, col]] + src.iter().enumerate().map(|(k, v)| v * w[[k, col]]).sum::<f64>()
        };
        (0..hs)
            .map(|j| {
                let r = sigmoid(affine(j, x, w_ih, b_ih) + affine(j, h, w_hh, b_hh));
                let u = sigmoid(affine(hs + j, x, w_ih, b_ih) + affine(hs + j, h, w_hh, b_hh));
                let n = (affine(2 * hs + j, x, w_ih, b_ih) + r * affine(2 * hs + j, h, w_hh, b_hh)).tanh();
                (1.0 - u) * n + u * h[j]
            })
            .collect()
    }

    #[test]
    fn gru_step_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut store = ParamStore::default();
            init_gru(&mut store, &mut rng, "gru", 3, 4);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut g = Graph::new();
            let xv = g.constant(row(&x));
            let hv = g.constant(row(&h));
            let out = gru_step(&mut g, &store, "gru", xv, hv);
            let expect = reference_gru(&store, "gru", &x, &h);
            for (a, b) in g.value(out).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn grouped_round_trip() {
        let mut store = ParamStore::default();
        store.insert("a.w", array![[1.0, 2.0], [3.0, 4.0]]);
        store.insert("b.x.y", array![[5.0]]);
        let back = ParamStore::from_grouped(&store.to_grouped()).unwrap();
        assert_eq!(back, store);
        assert_eq!(store.groups().into_iter().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn misfiled_group_is_rejected() {
        let mut grouped = GroupedParams::new();
        grouped.entry("a".into()).or_default().insert("b.w".into(), vec![vec![1.0]]);
        assert!(ParamStore::from_grouped(&grouped).is_err());
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut store = ParamStore::default();
        store.insert("p.w", array![[1.0, -1.0]]);
        let mut grads = BTreeMap::new();
        grads.insert("p.w".to_string(), array![[0.5, -0.5]]);
        let mut opt = Adam::new(1e-3);
        opt.step(&mut store, &grads, 1e-3);
        let p = store.get("p.w").unwrap();
        // First bias-corrected step has magnitude lr.
        assert!((p[[0, 0]] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[[0, 1]] - (-1.0 + 1e-3)).abs() < 1e-9);
    }
}
