//! The computation tape.
//!
//! Nodes hold `f64` vectors (scalars are length-1 vectors) or matrices.
//! Matrices appear as parameters, as the associative-memory weight state, and
//! as outputs of the Hebbian update; everything else is vector-valued.

use ndarray::{Array1, Array2, Axis};

use super::params::{GradStore, ParamId, ParamSet, PVal};

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub enum Value {
    V(Array1<f64>),
    M(Array2<f64>),
}

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatVec(NodeId, NodeId),
    Dot(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize, usize),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Softplus(NodeId),
    Clamp(NodeId, f64, f64),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Hebbian {
        w: NodeId,
        key: NodeId,
        val: NodeId,
        gain_pos: NodeId,
        gain_neg: NodeId,
        w_max: NodeId,
    },
}

struct Node {
    op: Op,
    val: Value,
}

/// Reverse-mode tape. Create one per forward pass; ops append nodes and
/// [`Graph::backward`] replays them in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_cache: Vec<Option<NodeId>>,
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, val: Value) -> NodeId {
        self.nodes.push(Node { op, val });
        self.nodes.len() - 1
    }

    pub fn vec(&self, id: NodeId) -> &Array1<f64> {
        match &self.nodes[id].val {
            Value::V(a) => a,
            Value::M(_) => panic!("node {id} is a matrix, expected vector"),
        }
    }

    pub fn mat(&self, id: NodeId) -> &Array2<f64> {
        match &self.nodes[id].val {
            Value::M(a) => a,
            Value::V(_) => panic!("node {id} is a vector, expected matrix"),
        }
    }

    /// Value of a length-1 node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = self.vec(id);
        assert_eq!(v.len(), 1, "scalar_value on node of length {}", v.len());
        v[0]
    }

    // ── leaves ──────────────────────────────────────────────────────

    pub fn constant(&mut self, v: Array1<f64>) -> NodeId {
        self.push(Op::Const, Value::V(v))
    }

    pub fn constant_mat(&mut self, m: Array2<f64>) -> NodeId {
        self.push(Op::Const, Value::M(m))
    }

    pub fn scalar(&mut self, x: f64) -> NodeId {
        self.constant(Array1::from_elem(1, x))
    }

    pub fn zeros(&mut self, n: usize) -> NodeId {
        self.constant(Array1::zeros(n))
    }

    /// Parameter leaf. Cached, so repeated lookups of the same tensor share
    /// one node per graph.
    pub fn param(&mut self, ps: &ParamSet, id: ParamId) -> NodeId {
        if self.param_cache.len() <= id.index() {
            self.param_cache.resize(id.index() + 1, None);
        }
        if let Some(n) = self.param_cache[id.index()] {
            return n;
        }
        let val = match ps.val(id) {
            PVal::V(a) => Value::V(a.clone()),
            PVal::M(a) => Value::M(a.clone()),
        };
        let n = self.push(Op::Param(id), val);
        self.param_cache[id.index()] = Some(n);
        n
    }

    // ── arithmetic ──────────────────────────────────────────────────

    fn broadcast_zip(a: &Array1<f64>, b: &Array1<f64>, f: impl Fn(f64, f64) -> f64) -> Array1<f64> {
        if a.len() == b.len() {
            let mut out = a.clone();
            out.zip_mut_with(b, |x, &y| *x = f(*x, y));
            out
        } else if b.len() == 1 {
            a.mapv(|x| f(x, b[0]))
        } else if a.len() == 1 {
            b.mapv(|y| f(a[0], y))
        } else {
            panic!("shape mismatch: {} vs {}", a.len(), b.len());
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = Self::broadcast_zip(self.vec(a), self.vec(b), |x, y| x + y);
        self.push(Op::Add(a, b), Value::V(v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = Self::broadcast_zip(self.vec(a), self.vec(b), |x, y| x - y);
        self.push(Op::Sub(a, b), Value::V(v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = Self::broadcast_zip(self.vec(a), self.vec(b), |x, y| x * y);
        self.push(Op::Mul(a, b), Value::V(v))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.vec(a).mapv(|x| x * c);
        self.push(Op::Scale(a, c), Value::V(v))
    }

    pub fn add_many(&mut self, ids: &[NodeId]) -> NodeId {
        assert!(!ids.is_empty());
        let mut acc = ids[0];
        for &id in &ids[1..] {
            acc = self.add(acc, id);
        }
        acc
    }

    pub fn matvec(&mut self, m: NodeId, x: NodeId) -> NodeId {
        let v = self.mat(m).dot(self.vec(x));
        self.push(Op::MatVec(m, x), Value::V(v))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.vec(a).dot(self.vec(b));
        self.push(Op::Dot(a, b), Value::V(Array1::from_elem(1, s)))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.vec(a).sum();
        self.push(Op::Sum(a), Value::V(Array1::from_elem(1, s)))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.vec(a);
        let s = v.sum() / v.len() as f64;
        self.push(Op::Mean(a), Value::V(Array1::from_elem(1, s)))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let total: usize = parts.iter().map(|&p| self.vec(p).len()).sum();
        let mut out = Array1::zeros(total);
        let mut off = 0;
        for &p in parts {
            let v = self.vec(p);
            out.slice_mut(ndarray::s![off..off + v.len()]).assign(v);
            off += v.len();
        }
        self.push(Op::Concat(parts.to_vec()), Value::V(out))
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.vec(a).slice(ndarray::s![start..start + len]).to_owned();
        self.push(Op::Slice(a, start, len), Value::V(v))
    }

    // ── nonlinearities ──────────────────────────────────────────────

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.vec(a).mapv(stable_sigmoid);
        self.push(Op::Sigmoid(a), Value::V(v))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.vec(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), Value::V(v))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.vec(a).mapv(f64::exp);
        self.push(Op::Exp(a), Value::V(v))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.vec(a).mapv(stable_softplus);
        self.push(Op::Softplus(a), Value::V(v))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.vec(a).mapv(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), Value::V(v))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let x = self.vec(a);
        let m = x.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        let mut e = x.mapv(|v| (v - m).exp());
        let s = e.sum();
        e /= s;
        self.push(Op::Softmax(a), Value::V(e))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let x = self.vec(a);
        let m = x.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        let lse = x.mapv(|v| (v - m).exp()).sum().ln() + m;
        let v = x.mapv(|v| v - lse);
        self.push(Op::LogSoftmax(a), Value::V(v))
    }

    // ── associative-memory update ───────────────────────────────────

    /// One Hebbian step: `W' = W + gain_pos*(w_max − W)∘(val⊗key) − gain_neg*W∘(1⊗key²)`.
    ///
    /// `w` is `d_val × d_key`; `gain_pos`, `gain_neg`, `w_max` are length-1
    /// nodes. Gradients flow into every operand; the weight state itself is
    /// graph state, never an optimizer parameter.
    pub fn hebbian(
        &mut self,
        w: NodeId,
        key: NodeId,
        val: NodeId,
        gain_pos: NodeId,
        gain_neg: NodeId,
        w_max: NodeId,
    ) -> NodeId {
        let wm = self.mat(w);
        let k = self.vec(key);
        let v = self.vec(val);
        let gp = self.scalar_value(gain_pos);
        let gm = self.scalar_value(gain_neg);
        let wx = self.scalar_value(w_max);
        assert_eq!(wm.nrows(), v.len(), "hebbian value length mismatch");
        assert_eq!(wm.ncols(), k.len(), "hebbian key length mismatch");
        let mut out = wm.clone();
        for r in 0..out.nrows() {
            for c in 0..out.ncols() {
                let cur = out[(r, c)];
                out[(r, c)] = cur + gp * (wx - cur) * v[r] * k[c] - gm * cur * k[c] * k[c];
            }
        }
        self.push(
            Op::Hebbian {
                w,
                key,
                val,
                gain_pos,
                gain_neg,
                w_max,
            },
            Value::M(out),
        )
    }

    // ── composite conveniences ──────────────────────────────────────

    /// Mean squared error between a vector node and a constant target.
    pub fn mse_to(&mut self, pred: NodeId, target: &Array1<f64>) -> NodeId {
        let t = self.constant(target.clone());
        let d = self.sub(pred, t);
        let sq = self.mul(d, d);
        self.mean(sq)
    }

    /// Cross-entropy of a class index under logits: `−log_softmax(logits)[class]`.
    pub fn cross_entropy(&mut self, logits: NodeId, class: usize) -> NodeId {
        let ls = self.log_softmax(logits);
        let picked = self.slice(ls, class, 1);
        self.scale(picked, -1.0)
    }

    // ── backward ────────────────────────────────────────────────────

    /// Accumulate `d seed / d params` into `grads`. The seed must be a
    /// length-1 node. May be called several times on one graph (for
    /// single-loss backward passes over a shared forward).
    pub fn backward(&self, seed: NodeId, grads: &mut GradStore) {
        let mut adj: Vec<Option<Value>> = (0..=seed).map(|_| None).collect();
        adj[seed] = Some(Value::V(Array1::from_elem(1, 1.0)));

        for id in (0..=seed).rev() {
            let g = match adj[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Const => {}
                Op::Param(pid) => match &g {
                    Value::V(gv) => grads.add_vec(*pid, gv),
                    Value::M(gm) => grads.add_mat(*pid, gm),
                },
                Op::Add(a, b) => {
                    let gv = as_vec(&g);
                    self.bcast_into(&mut adj, *a, gv, 1.0);
                    self.bcast_into(&mut adj, *b, gv, 1.0);
                }
                Op::Sub(a, b) => {
                    let gv = as_vec(&g);
                    self.bcast_into(&mut adj, *a, gv, 1.0);
                    self.bcast_into(&mut adj, *b, gv, -1.0);
                }
                Op::Mul(a, b) => {
                    let gv = as_vec(&g);
                    let (av, bv) = (self.vec(*a), self.vec(*b));
                    // d/da = g∘b, d/db = g∘a, with len-1 broadcast on either side
                    let ga = Self::broadcast_zip(gv, bv, |x, y| x * y);
                    let gb = Self::broadcast_zip(gv, av, |x, y| x * y);
                    self.bcast_grad_into(&mut adj, *a, ga);
                    self.bcast_grad_into(&mut adj, *b, gb);
                }
                Op::Scale(a, c) => {
                    let gv = as_vec(&g).mapv(|x| x * c);
                    add_vec_adj(&mut adj, *a, &gv);
                }
                Op::MatVec(m, x) => {
                    let gv = as_vec(&g);
                    let xv = self.vec(*x);
                    let mv = self.mat(*m);
                    // dW = g ⊗ x
                    let gm = gv
                        .view()
                        .insert_axis(Axis(1))
                        .dot(&xv.view().insert_axis(Axis(0)));
                    add_mat_adj(&mut adj, *m, &gm);
                    // dx = Wᵀ g
                    let gx = mv.t().dot(gv);
                    add_vec_adj(&mut adj, *x, &gx);
                }
                Op::Dot(a, b) => {
                    let g0 = as_vec(&g)[0];
                    let ga = self.vec(*b).mapv(|y| y * g0);
                    let gb = self.vec(*a).mapv(|y| y * g0);
                    add_vec_adj(&mut adj, *a, &ga);
                    add_vec_adj(&mut adj, *b, &gb);
                }
                Op::Sum(a) => {
                    let g0 = as_vec(&g)[0];
                    let ga = Array1::from_elem(self.vec(*a).len(), g0);
                    add_vec_adj(&mut adj, *a, &ga);
                }
                Op::Mean(a) => {
                    let n = self.vec(*a).len();
                    let g0 = as_vec(&g)[0] / n as f64;
                    let ga = Array1::from_elem(n, g0);
                    add_vec_adj(&mut adj, *a, &ga);
                }
                Op::Concat(parts) => {
                    let gv = as_vec(&g);
                    let mut off = 0;
                    for &p in parts {
                        let n = self.vec(p).len();
                        let gp = gv.slice(ndarray::s![off..off + n]).to_owned();
                        add_vec_adj(&mut adj, p, &gp);
                        off += n;
                    }
                }
                Op::Slice(a, start, len) => {
                    let gv = as_vec(&g);
                    let mut ga = Array1::zeros(self.vec(*a).len());
                    ga.slice_mut(ndarray::s![*start..*start + *len]).assign(gv);
                    add_vec_adj(&mut adj, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let y = self.vec(id);
                    let ga = as_vec(&g) * &y.mapv(|v| v * (1.0 - v));
                    add_vec_adj(&mut adj, *a, &ga);
                }
                Op::Tanh(a) => {
                    let y = self.vec(id);
                    let ga = as_vec(&g) * &y.mapv(|v| 1.0 - v * v);
                    add_vec_adj(&mut adj, *a, &ga);
                }
                Op::Exp(a) => {
                    let ga = as_vec(&g) * self.vec(id);
                    add_vec_adj(&mut adj, *a, &ga);
                }
                Op::Softplus(a) => {
                    let ga = as_vec(&g) * &self.vec(*a).mapv(stable_sigmoid);
                    add_vec_adj(&mut adj, *a, &ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.vec(*a);
                    let gv = as_vec(&g);
                    let ga = Array1::from_shape_fn(x.len(), |i| {
                        if x[i] > *lo && x[i] < *hi {
                            gv[i]
                        } else {
                            0.0
                        }
                    });
                    add_vec_adj(&mut adj, *a, &ga);
                }
                Op::Softmax(a) => {
                    let y = self.vec(id);
                    let gv = as_vec(&g);
                    let inner = (gv * y).sum();
                    let ga = Array1::from_shape_fn(y.len(), |i| y[i] * (gv[i] - inner));
                    add_vec_adj(&mut adj, *a, &ga);
                }
                Op::LogSoftmax(a) => {
                    let y = self.vec(id); // log-probs
                    let gv = as_vec(&g);
                    let gsum = gv.sum();
                    let ga = Array1::from_shape_fn(y.len(), |i| gv[i] - y[i].exp() * gsum);
                    add_vec_adj(&mut adj, *a, &ga);
                }
                Op::Hebbian {
                    w,
                    key,
                    val,
                    gain_pos,
                    gain_neg,
                    w_max,
                } => {
                    let gm = as_mat(&g);
                    let wv = self.mat(*w);
                    let k = self.vec(*key);
                    let v = self.vec(*val);
                    let gp = self.scalar_value(*gain_pos);
                    let gneg = self.scalar_value(*gain_neg);
                    let wx = self.scalar_value(*w_max);
                    let (rows, cols) = (wv.nrows(), wv.ncols());
                    let mut gw = Array2::zeros((rows, cols));
                    let mut gk = Array1::zeros(cols);
                    let mut gv_val = Array1::zeros(rows);
                    let (mut ggp, mut ggn, mut gwx) = (0.0, 0.0, 0.0);
                    for r in 0..rows {
                        for c in 0..cols {
                            let go = gm[(r, c)];
                            if go == 0.0 {
                                continue;
                            }
                            let wrc = wv[(r, c)];
                            gw[(r, c)] += go * (1.0 - gp * v[r] * k[c] - gneg * k[c] * k[c]);
                            gv_val[r] += go * gp * (wx - wrc) * k[c];
                            gk[c] += go * (gp * (wx - wrc) * v[r] - 2.0 * gneg * wrc * k[c]);
                            ggp += go * (wx - wrc) * v[r] * k[c];
                            ggn -= go * wrc * k[c] * k[c];
                            gwx += go * gp * v[r] * k[c];
                        }
                    }
                    add_mat_adj(&mut adj, *w, &gw);
                    add_vec_adj(&mut adj, *key, &gk);
                    add_vec_adj(&mut adj, *val, &gv_val);
                    add_vec_adj(&mut adj, *gain_pos, &Array1::from_elem(1, ggp));
                    add_vec_adj(&mut adj, *gain_neg, &Array1::from_elem(1, ggn));
                    add_vec_adj(&mut adj, *w_max, &Array1::from_elem(1, gwx));
                }
            }
        }
    }

    /// Add gradient for an operand of a broadcasting binary op whose incoming
    /// gradient has the *output* length, scaled by `sign`.
    fn bcast_into(&self, adj: &mut [Option<Value>], operand: NodeId, g: &Array1<f64>, sign: f64) {
        let n = self.vec(operand).len();
        if n == g.len() {
            let gv = g.mapv(|x| x * sign);
            add_vec_adj(adj, operand, &gv);
        } else {
            debug_assert_eq!(n, 1);
            let s = g.sum() * sign;
            add_vec_adj(adj, operand, &Array1::from_elem(1, s));
        }
    }

    /// Same, but the per-entry gradient is already computed at output length.
    fn bcast_grad_into(&self, adj: &mut [Option<Value>], operand: NodeId, g: Array1<f64>) {
        let n = self.vec(operand).len();
        if n == g.len() {
            add_vec_adj(adj, operand, &g);
        } else {
            debug_assert_eq!(n, 1);
            add_vec_adj(adj, operand, &Array1::from_elem(1, g.sum()));
        }
    }
}

fn as_vec(v: &Value) -> &Array1<f64> {
    match v {
        Value::V(a) => a,
        Value::M(_) => panic!("expected vector gradient"),
    }
}

fn as_mat(v: &Value) -> &Array2<f64> {
    match v {
        Value::M(a) => a,
        Value::V(_) => panic!("expected matrix gradient"),
    }
}

fn add_vec_adj(adj: &mut [Option<Value>], id: NodeId, g: &Array1<f64>) {
    match &mut adj[id] {
        Some(Value::V(a)) => *a += g,
        None => adj[id] = Some(Value::V(g.clone())),
        Some(Value::M(_)) => panic!("gradient kind mismatch at node {id}"),
    }
}

fn add_mat_adj(adj: &mut [Option<Value>], id: NodeId, g: &Array2<f64>) {
    match &mut adj[id] {
        Some(Value::M(a)) => *a += g,
        None => adj[id] = Some(Value::M(g.clone())),
        Some(Value::V(_)) => panic!("gradient kind mismatch at node {id}"),
    }
}

impl std::fmt::Debug for Graph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Graph({} nodes)", self.nodes.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn forward_values() {
        let mut g = Graph::new();
        let a = g.constant(array![1.0, 2.0, 3.0]);
        let b = g.constant(array![0.5, 0.5, 0.5]);
        let s = g.add(a, b);
        assert_eq!(g.vec(s), &array![1.5, 2.5, 3.5]);
        let d = g.dot(a, b);
        assert!((g.scalar_value(d) - 3.0).abs() < 1e-12);
        let sm = g.softmax(a);
        assert!((g.vec(sm).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn broadcast_scalar_operand() {
        let mut g = Graph::new();
        let a = g.constant(array![1.0, 2.0]);
        let c = g.scalar(3.0);
        let m = g.mul(a, c);
        assert_eq!(g.vec(m), &array![3.0, 6.0]);
        let s = g.add(c, a);
        assert_eq!(g.vec(s), &array![4.0, 5.0]);
    }

    #[test]
    fn hebbian_forward_matches_elementwise_rule() {
        let mut g = Graph::new();
        let w = g.constant_mat(array![[0.0, 0.2], [0.1, 0.0]]);
        let key = g.constant(array![1.0, 0.5]);
        let val = g.constant(array![1.0, 2.0]);
        let gp = g.scalar(0.1);
        let gm = g.scalar(0.01);
        let wx = g.scalar(1.0);
        let w2 = g.hebbian(w, key, val, gp, gm, wx);
        let out = g.mat(w2);
        // hand-expanded entries
        let expect_00 = 0.0 + 0.1 * (1.0 - 0.0) * 1.0 * 1.0 - 0.01 * 0.0 * 1.0;
        let expect_01 = 0.2 + 0.1 * (1.0 - 0.2) * 1.0 * 0.5 - 0.01 * 0.2 * 0.25;
        assert!((out[(0, 0)] - expect_00).abs() < 1e-12);
        assert!((out[(0, 1)] - expect_01).abs() < 1e-12);
    }

    /// Finite-difference check of every op through a small composite function.
    #[test]
    fn backward_matches_finite_differences() {
        use crate::nn::params::{GradStore, ParamSet};
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ps = ParamSet::new();
        let w = ps.add_mat("w", crate::nn::params::xavier(3, 4, &mut rng));
        let b = ps.add_vec("b", array![0.1, -0.2, 0.3]);
        let u = ps.add_mat("u", crate::nn::params::xavier(2, 3, &mut rng));
        let meta = ps.add_vec("meta", array![0.2, -1.5, 0.4]);

        let loss = |ps: &ParamSet| -> f64 {
            let mut g = Graph::new();
            let x = g.constant(array![0.3, -0.7, 0.5, 0.2]);
            let wn = g.param(ps, w);
            let bn = g.param(ps, b);
            let un = g.param(ps, u);
            let mn = g.param(ps, meta);
            let h = g.matvec(wn, x);
            let h = g.add(h, bn);
            let h = g.tanh(h);
            let y = g.matvec(un, h);
            let y = g.sigmoid(y);
            let sm = g.softmax(y);
            let ce = g.cross_entropy(y, 1);
            // run the hebbian op too
            let w0 = g.constant_mat(array![[0.0, 0.1, 0.0], [0.2, 0.0, 0.1]]);
            let gp = g.slice(mn, 0, 1);
            let gp = g.softplus(gp);
            let gm = g.slice(mn, 1, 1);
            let gm = g.softplus(gm);
            let wx = g.slice(mn, 2, 1);
            let wx = g.softplus(wx);
            let w1 = g.hebbian(w0, h, y, gp, gm, wx);
            let read = g.matvec(w1, h);
            let r = g.mean(read);
            let e = g.mean(sm);
            let s1 = g.add(ce, r);
            let s2 = g.add(s1, e);
            let clamped = g.clamp(s2, -10.0, 10.0);
            let sp = g.softplus(clamped);
            let ex = g.exp(sp);
            let total = g.mean(ex);
            g.scalar_value(total)
        };

        // analytic gradient
        let mut g = Graph::new();
        let mut grads = GradStore::zeros_like(&ps);
        {
            let x = g.constant(array![0.3, -0.7, 0.5, 0.2]);
            let wn = g.param(&ps, w);
            let bn = g.param(&ps, b);
            let un = g.param(&ps, u);
            let mn = g.param(&ps, meta);
            let h = g.matvec(wn, x);
            let h = g.add(h, bn);
            let h = g.tanh(h);
            let y = g.matvec(un, h);
            let y = g.sigmoid(y);
            let sm = g.softmax(y);
            let ce = g.cross_entropy(y, 1);
            let w0 = g.constant_mat(array![[0.0, 0.1, 0.0], [0.2, 0.0, 0.1]]);
            let gp = g.slice(mn, 0, 1);
            let gp = g.softplus(gp);
            let gm = g.slice(mn, 1, 1);
            let gm = g.softplus(gm);
            let wx = g.slice(mn, 2, 1);
            let wx = g.softplus(wx);
            let w1 = g.hebbian(w0, h, y, gp, gm, wx);
            let read = g.matvec(w1, h);
            let r = g.mean(read);
            let e = g.mean(sm);
            let s1 = g.add(ce, r);
            let s2 = g.add(s1, e);
            let clamped = g.clamp(s2, -10.0, 10.0);
            let sp = g.softplus(clamped);
            let ex = g.exp(sp);
            let total = g.mean(ex);
            g.backward(total, &mut grads);
        }

        let max_err = crate::nn::check::max_rel_error_all(&mut ps, &grads, loss, 1e-6);
        assert!(max_err < 1e-6, "finite-difference mismatch: {max_err}");
    }
}
