//! Recurrent task-inference encoder: consumes (observation embedding,
//! previous action, reward) at each step and produces a diagonal-Gaussian
//! posterior over the task latent `m`.
//!
//! The posterior accumulates across all four episodes of a task — the
//! encoder state is reset only at task boundaries. The prior is a fixed
//! standard normal. Downstream modules consume the posterior as
//! `[mean ⧺ logvar]` when acting and as reparameterized samples inside the
//! variational objective.

use ndarray::Array1;

use crate::env::NUM_ACTIONS;
use crate::nn::graph::{Graph, NodeId};
use crate::nn::layers::{GruCell, Init, Linear};
use crate::nn::params::ParamSet;

/// Clamp bounds on the posterior log-variance.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// A posterior over the task latent, as plain values (for rollout storage).
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefPosterior {
    pub mean: Array1<f64>,
    pub logvar: Array1<f64>,
}

impl BeliefPosterior {
    pub fn d_m(&self) -> usize {
        self.mean.len()
    }

    /// The downstream belief feature: mean concatenated with logvar.
    pub fn feature(&self) -> Array1<f64> {
        let mut out = Array1::zeros(2 * self.mean.len());
        out.slice_mut(ndarray::s![..self.mean.len()]).assign(&self.mean);
        out.slice_mut(ndarray::s![self.mean.len()..]).assign(&self.logvar);
        out
    }
}

/// Graph handles to one posterior (mean node, logvar node).
#[derive(Debug, Clone, Copy)]
pub struct PosteriorNodes {
    pub mean: NodeId,
    pub logvar: NodeId,
}

#[derive(Debug, Clone)]
pub struct BeliefNet {
    pub d_obs: usize,
    pub d_m: usize,
    pub d_enc: usize,
    gru: GruCell,
    mean_head: Linear,
    logvar_head: Linear,
}

impl BeliefNet {
    pub fn new(
        ps: &mut ParamSet,
        d_obs: usize,
        d_m: usize,
        d_enc: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Self {
        let in_dim = d_obs + NUM_ACTIONS + 1;
        Self {
            d_obs,
            d_m,
            d_enc,
            gru: GruCell::new(ps, "belief.gru", in_dim, d_enc, rng),
            mean_head: Linear::new(ps, "belief.mean", d_enc, d_m, Init::Xavier, rng),
            logvar_head: Linear::new(ps, "belief.logvar", d_enc, d_m, Init::Zero, rng),
        }
    }

    pub fn zero_state(&self, g: &mut Graph) -> NodeId {
        g.zeros(self.d_enc)
    }

    /// One encoder step. `action` is the action that *preceded* the
    /// observation (`None` at the first step of a task, encoded as zeros).
    pub fn encode_step(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        hidden: NodeId,
        obs_embed: NodeId,
        action: Option<usize>,
        reward: f64,
    ) -> (NodeId, PosteriorNodes) {
        assert_eq!(g.vec(obs_embed).len(), self.d_obs, "obs embed width");
        let mut act = Array1::zeros(NUM_ACTIONS);
        if let Some(a) = action {
            assert!(a < NUM_ACTIONS, "action index {a} out of range");
            act[a] = 1.0;
        }
        let act = g.constant(act);
        let r = g.scalar(reward);
        let x = g.concat(&[obs_embed, act, r]);
        let h = self.gru.step(g, ps, x, hidden);
        let mean = self.mean_head.forward(g, ps, h);
        let logvar = self.logvar_head.forward(g, ps, h);
        let logvar = g.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX);
        (h, PosteriorNodes { mean, logvar })
    }

    /// Extract plain values for rollout storage.
    pub fn posterior_values(&self, g: &Graph, p: PosteriorNodes) -> BeliefPosterior {
        BeliefPosterior {
            mean: g.vec(p.mean).clone(),
            logvar: g.vec(p.logvar).clone(),
        }
    }
}

/// Closed-form KL of a diagonal Gaussian to the standard normal:
/// `½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_to_prior(g: &mut Graph, post: PosteriorNodes) -> NodeId {
    let mu2 = g.mul(post.mean, post.mean);
    let var = g.exp(post.logvar);
    let a = g.add(mu2, var);
    let b = g.sub(a, post.logvar);
    let s = g.sum(b);
    let d = g.vec(post.mean).len() as f64;
    let shifted = {
        let c = g.scalar(d);
        g.sub(s, c)
    };
    g.scale(shifted, 0.5)
}

/// Plain-value KL, for metrics.
pub fn kl_to_prior_value(post: &BeliefPosterior) -> f64 {
    post.mean
        .iter()
        .zip(post.logvar.iter())
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// Reparameterized sample `m = μ + exp(logvar/2) ⊙ ε` with stored noise.
pub fn sample(g: &mut Graph, post: PosteriorNodes, noise: &Array1<f64>) -> NodeId {
    assert_eq!(
        g.vec(post.mean).len(),
        noise.len(),
        "noise length must match d_m"
    );
    let half = g.scale(post.logvar, 0.5);
    let std = g.exp(half);
    let eps = g.constant(noise.clone());
    let scaled = g.mul(std, eps);
    g.add(post.mean, scaled)
}
