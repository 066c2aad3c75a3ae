//! Network building blocks on top of the tape: linear maps and GRU cells.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::params::{xavier, ParamId, ParamSet};

/// Weight initialization scheme for a layer.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Xavier,
    Zero,
}

/// An affine map `y = Wx + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = match init {
            Init::Xavier => xavier(out_dim, in_dim, rng),
            Init::Zero => Array2::zeros((out_dim, in_dim)),
        };
        let w = ps.add_mat(&format!("{name}.w"), w);
        let b = ps.add_vec(&format!("{name}.b"), Array1::zeros(out_dim));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    /// Build with an explicit weight matrix (used for identity-style inits).
    pub fn with_weight(ps: &mut ParamSet, name: &str, w: Array2<f64>) -> Self {
        let (out_dim, in_dim) = (w.nrows(), w.ncols());
        let w = ps.add_mat(&format!("{name}.w"), w);
        let b = ps.add_vec(&format!("{name}.b"), Array1::zeros(out_dim));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamSet, x: NodeId) -> NodeId {
        debug_assert_eq!(g.vec(x).len(), self.in_dim, "linear input width");
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        let wx = g.matvec(w, x);
        g.add(wx, b)
    }
}

/// A gated recurrent cell.
///
/// With `[x;h]` as the concatenated input and previous state:
/// `z = σ(W_z[x;h] + b_z)`, `r = σ(W_r[x;h] + b_r)`,
/// `n = tanh(W_n[x; r∘h] + b_n)`, `h' = n + z∘(h − n)`.
#[derive(Debug, Clone)]
pub struct GruCell {
    z: Linear,
    r: Linear,
    n: Linear,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let z = Linear::new(ps, &format!("{name}.z"), in_dim + hidden, hidden, Init::Xavier, rng);
        let r = Linear::new(ps, &format!("{name}.r"), in_dim + hidden, hidden, Init::Xavier, rng);
        let n = Linear::new(ps, &format!("{name}.n"), in_dim + hidden, hidden, Init::Xavier, rng);
        Self {
            z,
            r,
            n,
            in_dim,
            hidden,
        }
    }

    /// One step; returns the next hidden state.
    pub fn step(&self, g: &mut Graph, ps: &ParamSet, x: NodeId, h: NodeId) -> NodeId {
        debug_assert_eq!(g.vec(x).len(), self.in_dim, "gru input width");
        debug_assert_eq!(g.vec(h).len(), self.hidden, "gru hidden width");
        let xh = g.concat(&[x, h]);
        let z = self.z.forward(g, ps, xh);
        let z = g.sigmoid(z);
        let r = self.r.forward(g, ps, xh);
        let r = g.sigmoid(r);
        let rh = g.mul(r, h);
        let xrh = g.concat(&[x, rh]);
        let n = self.n.forward(g, ps, xrh);
        let n = g.tanh(n);
        let hmn = g.sub(h, n);
        let zh = g.mul(z, hmn);
        g.add(n, zh)
    }

    pub fn zero_state(&self, g: &mut Graph) -> NodeId {
        g.zeros(self.hidden)
    }
}

/// A small stack of linear layers with tanh between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        dims: &[usize],
        final_init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(dims.len() >= 2);
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let init = if i == dims.len() - 2 { final_init } else { Init::Xavier };
            layers.push(Linear::new(
                ps,
                &format!("{name}.{i}"),
                dims[i],
                dims[i + 1],
                init,
                rng,
            ));
        }
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamSet, x: NodeId) -> NodeId {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, ps, h);
            if i + 1 < self.layers.len() {
                h = g.tanh(h);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::GradStore;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn linear_zero_init_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        let l = Linear::new(&mut ps, "l", 3, 2, Init::Zero, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(array![1.0, -2.0, 3.0]);
        let y = l.forward(&mut g, &ps, x);
        assert_eq!(g.vec(y), &array![0.0, 0.0]);
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let cell = GruCell::new(&mut ps, "gru", 3, 4, &mut rng);

        let run = |ps: &ParamSet| -> f64 {
            let mut g = Graph::new();
            let mut h = g.zeros(4);
            for t in 0..3 {
                let x = g.constant(array![0.1 * t as f64, -0.2, 0.3]);
                h = cell.step(&mut g, ps, x, h);
            }
            let m = g.mean(h);
            g.scalar_value(m)
        };

        let mut g = Graph::new();
        let mut grads = GradStore::zeros_like(&ps);
        {
            let mut h = g.zeros(4);
            for t in 0..3 {
                let x = g.constant(array![0.1 * t as f64, -0.2, 0.3]);
                h = cell.step(&mut g, &ps, x, h);
            }
            let m = g.mean(h);
            g.backward(m, &mut grads);
        }
        let err = crate::nn::check::max_rel_error_all(&mut ps, &grads, run, 1e-5);
        assert!(err < 1e-5, "gru finite-difference mismatch: {err}");
    }

    #[test]
    fn mlp_final_zero_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::new();
        let mlp = Mlp::new(&mut ps, "pi", &[4, 8, 3], Init::Zero, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(array![0.4, -0.1, 0.9, 0.2]);
        let y = mlp.forward(&mut g, &ps, x);
        assert_eq!(g.vec(y), &array![0.0, 0.0, 0.0]);
    }
}
