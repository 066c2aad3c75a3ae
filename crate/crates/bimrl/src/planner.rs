//! Level 2 of the hierarchy: a recurrent cell that consumes the level-1
//! state, the current observation, and the next actions (teacher-forced from
//! the realized rollout during training, zero-padded at action-selection
//! time), plus an n-step value decoder `V_ψ(s_i, a_{i..i+j}, h2)` trained
//! against k-step TD returns.
//!
//! TD targets are computed from stored critic values and treated as
//! constants, so no gradient reaches the critic head from this loss. Query
//! pairs whose return window would cross the end of the stored trajectory
//! are dropped.

use thiserror::Error;

use crate::env::NUM_ACTIONS;
use crate::nn::graph::{Graph, NodeId};
use crate::nn::layers::{GruCell, Init, Mlp};
use crate::nn::params::ParamSet;
use ndarray::Array1;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("td_return needs at least one reward")]
    EmptyRewards,
    #[error("action window length {got} outside 1..={max}")]
    WindowLength { got: usize, max: usize },
    #[error("trajectory of {0} transitions is too short; need at least 2")]
    TooShort(usize),
}

/// `R_{T+1} + γR_{T+2} + … + γ^{k−1}R_{T+k} + γ^k·V(S_{T+k})`.
pub fn td_return(rewards: &[f64], bootstrap_value: f64, gamma: f64) -> Result<f64, PlanError> {
    if rewards.is_empty() {
        return Err(PlanError::EmptyRewards);
    }
    let mut acc = 0.0;
    let mut disc = 1.0;
    for &r in rewards {
        acc += disc * r;
        disc *= gamma;
    }
    Ok(acc + disc * bootstrap_value)
}

/// Valid `(i, j)` query pairs for a trajectory of `t_len` transitions:
/// every pair whose k-step target window stays inside the stored critic
/// values (`i + j + k ≤ t_len − 1`).
pub fn valid_query_pairs(t_len: usize, n: usize, k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..t_len {
        for j in 0..=n {
            if i + j + k + 1 <= t_len {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Planner {
    pub d_h2: usize,
    pub n: usize,
    pub td_k: usize,
    pub gamma: f64,
    level2: GruCell,
    act_window: GruCell,
    value_head: Mlp,
}

impl Planner {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        d_obs: usize,
        d_h1: usize,
        d_h2: usize,
        d_window: usize,
        d_dec: usize,
        n: usize,
        td_k: usize,
        gamma: f64,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Self {
        let l2_in = d_h1 + d_obs + d_window;
        Self {
            d_h2,
            n,
            td_k,
            gamma,
            level2: GruCell::new(ps, "plan.level2", l2_in, d_h2, rng),
            act_window: GruCell::new(ps, "plan.actwin", NUM_ACTIONS, d_window, rng),
            value_head: Mlp::new(
                ps,
                "plan.value",
                &[d_obs + d_window + d_h2, d_dec, 1],
                Init::Xavier,
                rng,
            ),
        }
    }

    pub fn zero_state(&self, g: &mut Graph) -> NodeId {
        g.zeros(self.d_h2)
    }

    fn encode_window(&self, g: &mut Graph, ps: &ParamSet, window: &[usize]) -> NodeId {
        let mut h = self.act_window.zero_state(g);
        for &a in window {
            let mut onehot = Array1::zeros(NUM_ACTIONS);
            onehot[a] = 1.0;
            let x = g.constant(onehot);
            h = self.act_window.step(g, ps, x, h);
        }
        h
    }

    /// One level-2 step. `next_actions` may be empty (zero-padded window) —
    /// this is always the case at action-selection time and near the end of
    /// a trajectory during teacher forcing.
    pub fn level2_step(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        h2: NodeId,
        h1: NodeId,
        obs_embed: NodeId,
        next_actions: &[usize],
    ) -> NodeId {
        assert!(
            next_actions.len() <= self.n,
            "next-action window {} exceeds n={}",
            next_actions.len(),
            self.n
        );
        let code = self.encode_window(g, ps, next_actions);
        let x = g.concat(&[h1, obs_embed, code]);
        self.level2.step(g, ps, x, h2)
    }

    /// `V_ψ(s_i, a_{i..i+j}, h2)` — the n-step value prediction.
    pub fn predict_value(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        obs_embed: NodeId,
        action_window: &[usize],
        h2: NodeId,
    ) -> Result<NodeId, PlanError> {
        if action_window.is_empty() || action_window.len() > self.n + 1 {
            return Err(PlanError::WindowLength {
                got: action_window.len(),
                max: self.n + 1,
            });
        }
        let code = self.encode_window(g, ps, action_window);
        let x = g.concat(&[obs_embed, code, h2]);
        Ok(self.value_head.forward(g, ps, x))
    }

    /// Mean squared error between the n-step value predictions and their
    /// k-step TD targets over all valid `(i, j)` pairs. `rewards` and
    /// `critic_values` are stored rollout data (constants); `h2_seq[i]` is
    /// the teacher-forced level-2 state at time `i`. Returns a zero node
    /// when no pair fits inside the trajectory.
    pub fn planner_loss(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        obs_embeds: &[NodeId],
        h2_seq: &[NodeId],
        actions: &[usize],
        rewards: &[f64],
        critic_values: &[f64],
    ) -> Result<NodeId, PlanError> {
        let t_len = actions.len();
        if t_len < 2 {
            return Err(PlanError::TooShort(t_len));
        }
        assert!(obs_embeds.len() >= t_len, "need an embed per step");
        assert!(h2_seq.len() >= t_len, "need an h2 per step");
        assert_eq!(rewards.len(), t_len);
        assert_eq!(critic_values.len(), t_len, "one critic value per step");

        let pairs = valid_query_pairs(t_len, self.n, self.td_k);
        if pairs.is_empty() {
            return Ok(g.scalar(0.0));
        }
        let mut terms = Vec::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            let t_anchor = i + j;
            let target = td_return(
                &rewards[t_anchor..t_anchor + self.td_k],
                critic_values[t_anchor + self.td_k],
                self.gamma,
            )?;
            let v = self.predict_value(g, ps, obs_embeds[i], &actions[i..=i + j], h2_seq[i])?;
            let t = g.scalar(target);
            let d = g.sub(v, t);
            terms.push(g.mul(d, d));
        }
        let sum = g.add_many(&terms);
        Ok(g.scale(sum, 1.0 / pairs.len() as f64))
    }
}
