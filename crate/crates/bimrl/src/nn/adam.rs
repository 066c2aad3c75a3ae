//! Adam optimizer with serializable state so training can resume from a
//! checkpoint bit-for-bit.

use serde::{Deserialize, Serialize};

use super::params::{GradStore, ParamSet, PVal};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(ps: &ParamSet, lr: f64) -> Self {
        let m = ps
            .ids()
            .map(|id| vec![0.0; ps.val(id).len()])
            .collect::<Vec<_>>();
        let v = m.clone();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Apply one update from accumulated gradients.
    pub fn step(&mut self, ps: &mut ParamSet, grads: &GradStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in ps.ids().collect::<Vec<_>>() {
            let i = id.index();
            let g = grads.val(id);
            let gflat: Vec<f64> = match g {
                PVal::V(a) => a.iter().copied().collect(),
                PVal::M(a) => a.iter().copied().collect(),
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut upd = vec![0.0; gflat.len()];
            for (j, &gj) in gflat.iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                upd[j] = -self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            match ps.val_mut(id) {
                PVal::V(a) => {
                    for (j, x) in a.iter_mut().enumerate() {
                        *x += upd[j];
                    }
                }
                PVal::M(a) => {
                    for (j, x) in a.iter_mut().enumerate() {
                        *x += upd[j];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Graph;
    use ndarray::array;

    /// Adam on a convex quadratic should approach the minimizer.
    #[test]
    fn converges_on_quadratic() {
        let mut ps = ParamSet::new();
        let p = ps.add_vec("x", array![5.0, -3.0]);
        let mut opt = Adam::new(&ps, 0.1);
        for _ in 0..500 {
            let mut g = Graph::new();
            let x = g.param(&ps, p);
            let sq = g.mul(x, x);
            let loss = g.sum(sq);
            let mut grads = GradStore::zeros_like(&ps);
            g.backward(loss, &mut grads);
            opt.step(&mut ps, &grads);
        }
        let x = ps.val(p).as_vec();
        assert!(x[0].abs() < 1e-3 && x[1].abs() < 1e-3, "did not converge: {x:?}");
    }

    #[test]
    fn state_roundtrips_through_json() {
        let mut ps = ParamSet::new();
        let p = ps.add_vec("x", array![1.0]);
        let mut opt = Adam::new(&ps, 0.01);
        let mut grads = GradStore::zeros_like(&ps);
        grads.add_vec(p, &array![0.5]);
        opt.step(&mut ps, &grads);
        let ser = serde_json::to_string(&opt).unwrap();
        let de: Adam = serde_json::from_str(&ser).unwrap();
        assert_eq!(de.steps_taken(), 1);
        assert_eq!(de.m, opt.m);
        assert_eq!(de.v, opt.v);
    }
}
