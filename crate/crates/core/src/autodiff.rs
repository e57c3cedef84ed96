//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Graph`] records each operation of a forward pass as a node that owns
//! its value. [`Graph::backward`] walks the nodes in reverse insertion order
//! and accumulates adjoints. Every tensor is a row-major `[rows, cols]`
//! matrix of `f64`; batched code lays out one sample per row.
//!
//! Shape errors inside the graph are programming errors and panic. Public
//! model entry points validate user-supplied shapes before building a graph.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

use crate::nn::ParamStore;

pub type Tensor = Array2<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Reshape(Var),
    GroupMax(Var, usize),
    GroupMean(Var, usize),
    RepeatRows(Var, usize),
    RowSum(Var),
    RowNorm(Var),
    Cosine(Var, Var),
    Mean(Var),
    Sum(Var),
}

/// Norm below which a row is treated as the zero vector by [`Graph::cosine_rows`].
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

/// Computation graph for one forward/backward pass.
#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    requires_grad: Vec<bool>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
    frozen_index: HashMap<String, Var>,
    freeze_params: bool,
    kinks: Option<u64>,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that fingerprints every branch taken by a non-smooth op
    /// (ReLU sign, max-pool argmax, clamp region, `|x|` sign). Two forward
    /// passes with equal fingerprints lie on the same smooth piece.
    pub fn with_kink_trace() -> Self {
        Self {
            kinks: Some(FNV_OFFSET),
            ..Self::default()
        }
    }

    pub fn kink_signature(&self) -> Option<u64> {
        self.kinks
    }

    fn mix(&mut self, byte: u8) {
        if let Some(h) = self.kinks.as_mut() {
            *h ^= u64::from(byte);
            *h = h.wrapping_mul(FNV_PRIME);
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.requires_grad.push(requires_grad);
        Var(self.values.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf that is not backed by a [`ParamStore`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds the named parameter as a differentiable leaf. Binding the same
    /// name twice returns the same node, so shared weights accumulate one
    /// gradient.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if self.freeze_params {
            return self.frozen_param(store, name);
        }
        if let Some(&v) = self.param_index.get(name) {
            return v;
        }
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not in the store"))
            .clone();
        let v = self.push(value, Op::Leaf, true);
        self.param_index.insert(name.to_string(), v);
        self.params.push((name.to_string(), v));
        v
    }

    fn frozen_param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.frozen_index.get(name) {
            return v;
        }
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not in the store"))
            .clone();
        let v = self.constant(value);
        self.frozen_index.insert(name.to_string(), v);
        v
    }

    /// While set, [`Graph::param`] binds parameters as constants, so the
    /// operations recorded in between pass no gradient to them.
    pub fn set_params_frozen(&mut self, frozen: bool) {
        self.freeze_params = frozen;
    }

    /// Parameters bound so far, in binding order.
    pub fn bound_params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = &self.values[v.0];
        assert_eq!(t.dim(), (1, 1), "scalar() on a non-scalar node");
        t[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.values[v.0].dim()
    }

    /// Copies the value into a new constant; no gradient flows back.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.values[v.0].clone();
        self.constant(value)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: shape mismatch");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = &self.values[a.0] + &self.values[b.0];
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = &self.values[a.0] - &self.values[b.0];
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = &self.values[a.0] * &self.values[b.0];
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "div");
        let v = &self.values[a.0] / &self.values[b.0];
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Div(a, b), rg)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.values[x.0].mapv(|e| scale * e + shift);
        let rg = self.rg(x);
        self.push(v, Op::Affine(x, scale), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (_, k) = self.shape(a);
        let (k2, _) = self.shape(b);
        assert_eq!(k, k2, "matmul: inner dimensions {k} vs {k2}");
        let v = self.values[a.0].dot(&self.values[b.0]);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `x [n, m] + row [1, m]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (_, m) = self.shape(x);
        assert_eq!(self.shape(row), (1, m), "add_row: bias shape");
        let v = &self.values[x.0] + &self.values[row.0];
        let rg = self.rg(x) || self.rg(row);
        self.push(v, Op::AddRow(x, row), rg)
    }

    /// `x [n, m] * col [n, 1]` broadcast over columns.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Var {
        let (n, _) = self.shape(x);
        assert_eq!(self.shape(col), (n, 1), "mul_col: column shape");
        let v = &self.values[x.0] * &self.values[col.0];
        let rg = self.rg(x) || self.rg(col);
        self.push(v, Op::MulCol(x, col), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        if self.kinks.is_some() {
            let bits: Vec<u8> = self.values[x.0].iter().map(|&e| u8::from(e > 0.0)).collect();
            bits.into_iter().for_each(|b| self.mix(b));
        }
        let v = self.values[x.0].mapv(|e| e.max(0.0));
        let rg = self.rg(x);
        self.push(v, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.values[x.0].mapv(|e| 1.0 / (1.0 + (-e).exp()));
        let rg = self.rg(x);
        self.push(v, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.values[x.0].mapv(f64::tanh);
        let rg = self.rg(x);
        self.push(v, Op::Tanh(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.values[x.0].mapv(f64::exp);
        let rg = self.rg(x);
        self.push(v, Op::Exp(x), rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        if self.kinks.is_some() {
            let bits: Vec<u8> = self.values[x.0].iter().map(|&e| u8::from(e > 0.0)).collect();
            bits.into_iter().for_each(|b| self.mix(b));
        }
        let v = self.values[x.0].mapv(f64::abs);
        let rg = self.rg(x);
        self.push(v, Op::Abs(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.values[x.0].mapv(|e| e * e);
        let rg = self.rg(x);
        self.push(v, Op::Square(x), rg)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        if self.kinks.is_some() {
            let bits: Vec<u8> = self.values[x.0]
                .iter()
                .map(|&e| if e < lo { 0 } else if e > hi { 2 } else { 1 })
                .collect();
            bits.into_iter().for_each(|b| self.mix(b));
        }
        let v = self.values[x.0].mapv(|e| e.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(v, Op::Clamp(x, lo, hi), rg)
    }

    /// Column-wise concatenation; all parts share the row count.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0]).0;
        let views: Vec<_> = parts
            .iter()
            .map(|p| {
                assert_eq!(self.shape(*p).0, rows, "concat: row mismatch");
                self.values[p.0].view()
            })
            .collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat");
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(v, Op::Concat(parts.to_vec()), rg)
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        assert!(start < end && end <= self.shape(x).1, "slice_cols out of range");
        let v = self.values[x.0].slice(s![.., start..end]).to_owned();
        let rg = self.rg(x);
        self.push(v, Op::Slice(x, start), rg)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let src = &self.values[x.0];
        assert_eq!(src.len(), rows * cols, "reshape: element count");
        let flat: Vec<f64> = src.iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).expect("reshape");
        let rg = self.rg(x);
        self.push(v, Op::Reshape(x), rg)
    }

    /// Max over consecutive groups of `group` rows: `[n*group, m] -> [n, m]`.
    /// Ties resolve to the first row of the group.
    pub fn group_max(&mut self, x: Var, group: usize) -> Var {
        let (r, m) = self.shape(x);
        assert!(group > 0 && r % group == 0, "group_max: rows not divisible");
        let n = r / group;
        let src = &self.values[x.0];
        let mut out = Array2::zeros((n, m));
        let mut arg: Vec<u8> = Vec::new();
        for i in 0..n {
            for j in 0..m {
                let mut best = 0;
                for k in 1..group {
                    if src[[i * group + k, j]] > src[[i * group + best, j]] {
                        best = k;
                    }
                }
                out[[i, j]] = src[[i * group + best, j]];
                arg.push(best as u8);
            }
        }
        if self.kinks.is_some() {
            arg.into_iter().for_each(|b| self.mix(b));
        }
        let rg = self.rg(x);
        self.push(out, Op::GroupMax(x, group), rg)
    }

    /// Mean over consecutive groups of `group` rows.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Var {
        let (r, m) = self.shape(x);
        assert!(group > 0 && r % group == 0, "group_mean: rows not divisible");
        let n = r / group;
        let src = &self.values[x.0];
        let out = src
            .to_shape((n, group, m))
            .expect("group_mean reshape")
            .sum_axis(Axis(1))
            / group as f64;
        let rg = self.rg(x);
        self.push(out, Op::GroupMean(x, group), rg)
    }

    /// Repeats each row `times` times consecutively: `[n, m] -> [n*times, m]`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Var {
        let (n, m) = self.shape(x);
        let src = &self.values[x.0];
        let out = Array2::from_shape_fn((n * times, m), |(i, j)| src[[i / times, j]]);
        let rg = self.rg(x);
        self.push(out, Op::RepeatRows(x, times), rg)
    }

    /// `[n, m] -> [n, 1]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let v = self.values[x.0].sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(x);
        self.push(v, Op::RowSum(x), rg)
    }

    /// Euclidean norm of each row, `[n, m] -> [n, 1]`. The subgradient at a
    /// zero row is taken as zero.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let v = self.values[x.0]
            .map_axis(Axis(1), |r| r.dot(&r).sqrt())
            .insert_axis(Axis(1));
        let rg = self.rg(x);
        self.push(v, Op::RowNorm(x), rg)
    }

    /// Row-wise cosine similarity `[n, m] x [n, m] -> [n, 1]`. A row pair in
    /// which either side has norm below [`COSINE_NORM_FLOOR`] yields 0 and
    /// passes no gradient.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "cosine_rows");
        let (n, _) = self.shape(a);
        let av = &self.values[a.0];
        let bv = &self.values[b.0];
        let out = Array2::from_shape_fn((n, 1), |(i, _)| {
            cosine_parts(av.row(i).as_slice().unwrap(), bv.row(i).as_slice().unwrap()).0
        });
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Cosine(a, b), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = &self.values[x.0];
        let v = Array2::from_elem((1, 1), t.sum() / t.len() as f64);
        let rg = self.rg(x);
        self.push(v, Op::Mean(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.values[x.0].sum());
        let rg = self.rg(x);
        self.push(v, Op::Sum(x), rg)
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::ones((1, 1)));
        for i in (0..=root.0).rev() {
            if !self.requires_grad[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.requires_grad[v.0] {
            return;
        }
        match grads[v.0].as_mut() {
            Some(g) => *g += &delta,
            None => grads[v.0] = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.values[v.0];
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g * val(*b));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, g * val(*a));
                }
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                if self.rg(*a) {
                    self.acc(grads, *a, g / bv);
                }
                if self.rg(*b) {
                    let mut d = g * val(*a);
                    Zip::from(&mut d).and(bv).for_each(|d, &b| *d = -*d / (b * b));
                    self.acc(grads, *b, d);
                }
            }
            Op::Affine(x, scale) => self.acc(grads, *x, g * *scale),
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g.dot(&val(*b).t()));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, val(*a).t().dot(g));
                }
            }
            Op::AddRow(x, row) => {
                self.acc(grads, *x, g.clone());
                if self.rg(*row) {
                    self.acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulCol(x, col) => {
                if self.rg(*x) {
                    self.acc(grads, *x, g * val(*col));
                }
                if self.rg(*col) {
                    let d = (g * val(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.acc(grads, *col, d);
                }
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*x)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                });
                self.acc(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&self.values[i])
                    .for_each(|d, &y| *d *= y * (1.0 - y));
                self.acc(grads, *x, d);
            }
            Op::Tanh(x) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&self.values[i])
                    .for_each(|d, &y| *d *= 1.0 - y * y);
                self.acc(grads, *x, d);
            }
            Op::Exp(x) => self.acc(grads, *x, g * &self.values[i]),
            Op::Abs(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*x)).for_each(|d, &x| {
                    *d *= if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                self.acc(grads, *x, d);
            }
            Op::Square(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*x)).for_each(|d, &x| *d *= 2.0 * x);
                self.acc(grads, *x, d);
            }
            Op::Clamp(x, lo, hi) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*x)).for_each(|d, &x| {
                    if x < *lo || x > *hi {
                        *d = 0.0;
                    }
                });
                self.acc(grads, *x, d);
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    if self.rg(*p) {
                        self.acc(grads, *p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::Slice(x, start) => {
                let mut d = Array2::zeros(self.shape(*x));
                let w = g.ncols();
                d.slice_mut(s![.., *start..*start + w]).assign(g);
                self.acc(grads, *x, d);
            }
            Op::Reshape(x) => {
                let flat: Vec<f64> = g.iter().copied().collect();
                let d = Array2::from_shape_vec(self.shape(*x), flat).expect("reshape grad");
                self.acc(grads, *x, d);
            }
            Op::GroupMax(x, group) => {
                let src = val(*x);
                let mut d = Array2::zeros(src.dim());
                let (n, m) = g.dim();
                for r in 0..n {
                    for j in 0..m {
                        let mut best = 0;
                        for k in 1..*group {
                            if src[[r * group + k, j]] > src[[r * group + best, j]] {
                                best = k;
                            }
                        }
                        d[[r * group + best, j]] += g[[r, j]];
                    }
                }
                self.acc(grads, *x, d);
            }
            Op::GroupMean(x, group) => {
                let scale = 1.0 / *group as f64;
                let d = Array2::from_shape_fn(self.shape(*x), |(r, j)| g[[r / group, j]] * scale);
                self.acc(grads, *x, d);
            }
            Op::RepeatRows(x, times) => {
                let (n, m) = self.shape(*x);
                let d = g
                    .to_shape((n, *times, m))
                    .expect("repeat grad")
                    .sum_axis(Axis(1));
                self.acc(grads, *x, d);
            }
            Op::RowSum(x) => {
                let d = Array2::from_shape_fn(self.shape(*x), |(r, _)| g[[r, 0]]);
                self.acc(grads, *x, d);
            }
            Op::RowNorm(x) => {
                let y = &self.values[i];
                let d = Array2::from_shape_fn(self.shape(*x), |(r, j)| {
                    if y[[r, 0]] > 0.0 {
                        g[[r, 0]] * val(*x)[[r, j]] / y[[r, 0]]
                    } else {
                        0.0
                    }
                });
                self.acc(grads, *x, d);
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, m) = av.dim();
                let mut da = Array2::zeros((n, m));
                let mut db = Array2::zeros((n, m));
                for r in 0..n {
                    let ar = av.row(r);
                    let br = bv.row(r);
                    let (c, na, nb) =
                        cosine_parts(ar.as_slice().unwrap(), br.as_slice().unwrap());
                    if na < COSINE_NORM_FLOOR || nb < COSINE_NORM_FLOOR {
                        continue;
                    }
                    let gr = g[[r, 0]];
                    for j in 0..m {
                        da[[r, j]] = gr * (br[j] / (na * nb) - c * ar[j] / (na * na));
                        db[[r, j]] = gr * (ar[j] / (na * nb) - c * br[j] / (nb * nb));
                    }
                }
                self.acc(grads, *a, da);
                self.acc(grads, *b, db);
            }
            Op::Mean(x) => {
                let n = self.values[x.0].len() as f64;
                let d = Array2::from_elem(self.shape(*x), g[[0, 0]] / n);
                self.acc(grads, *x, d);
            }
            Op::Sum(x) => {
                let d = Array2::from_elem(self.shape(*x), g[[0, 0]]);
                self.acc(grads, *x, d);
            }
        }
    }
}

/// `(cos, |a|, |b|)`; `cos` is 0 when either norm is below the floor.
pub(crate) fn cosine_parts(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < COSINE_NORM_FLOOR || nb < COSINE_NORM_FLOOR {
        (0.0, na, nb)
    } else {
        ((dot / (na * nb)).clamp(-1.0, 1.0), na, nb)
    }
}

pub fn row(values: &[f64]) -> Tensor {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row tensor")
}

pub fn rows(data: &[Vec<f64>]) -> Tensor {
    let n = data.len();
    let m = data.first().map_or(0, Vec::len);
    let flat: Vec<f64> = data.iter().flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((n, m), flat).expect("ragged rows")
}
