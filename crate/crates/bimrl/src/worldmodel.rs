//! Level 1 of the recurrent hierarchy: a world-model cell plus three
//! simulation decoders (next state, reward, inverse action) trained with an
//! n-step factorized reconstruction objective.
//!
//! For a trajectory of `T` transitions and lookahead `n`, the objective sums,
//! over anchors `i` and lookbacks `j ≤ min(n, i)`:
//!
//! * `−log p(s_{i+1} | s_{i−j}, a_{i−j..i}, m)` — Gaussian with fixed
//!   variance on the normalized observation tensor, i.e. squared error;
//! * `−log p(r_{i+1} | s_{i−j}, a_{i−j..i}, m)` — same, scalar;
//! * `−log p(a | s_{i−j..i+1}, m)` — cross-entropy of the action taken
//!   between `s_i` and `s_{i+1}` given the state window (inverse dynamics);
//!
//! plus one `−log p(s_0 | m)` term. Each double sum is averaged by its term
//! count so the magnitude is independent of `n`; with `n = 0` the objective
//! reduces to one-step reconstruction with `3·T + 1` raw terms.

use ndarray::Array1;
use thiserror::Error;

use crate::env::NUM_ACTIONS;
use crate::nn::graph::{Graph, NodeId};
use crate::nn::layers::{GruCell, Init, Mlp};
use crate::nn::params::ParamSet;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("action window length {got} outside 1..={max}")]
    WindowLength { got: usize, max: usize },
    #[error("state window length {got} outside 2..={max} (must include the successor state)")]
    StateWindow { got: usize, max: usize },
    #[error("trajectory of {0} transitions is too short; need at least 2")]
    TooShort(usize),
}

/// Number of `(i, j)` pairs in one of the double sums.
pub fn per_sum_term_count(h_plus: usize, n: usize) -> usize {
    (0..h_plus).map(|i| n.min(i) + 1).sum()
}

/// Raw term count of the whole objective: three double sums plus the
/// initial-state term.
pub fn total_term_count(h_plus: usize, n: usize) -> usize {
    3 * per_sum_term_count(h_plus, n) + 1
}

#[derive(Debug, Clone)]
pub struct WorldModel {
    pub d_obs: usize,
    pub d_m: usize,
    pub d_h1: usize,
    pub obs_len: usize,
    pub n: usize,
    level1: GruCell,
    act_window: GruCell,
    state_window: GruCell,
    dec_state: Mlp,
    dec_reward: Mlp,
    dec_action: Mlp,
    dec_s0: Mlp,
}

impl WorldModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        d_obs: usize,
        d_m: usize,
        d_h1: usize,
        d_window: usize,
        d_dec: usize,
        obs_len: usize,
        n: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Self {
        // level-1 consumes the belief feature (mean ⧺ logvar), hence 2·d_m
        let l1_in = d_obs + NUM_ACTIONS + 1 + 2 * d_m;
        Self {
            d_obs,
            d_m,
            d_h1,
            obs_len,
            n,
            level1: GruCell::new(ps, "wm.level1", l1_in, d_h1, rng),
            act_window: GruCell::new(ps, "wm.actwin", NUM_ACTIONS, d_window, rng),
            state_window: GruCell::new(ps, "wm.statewin", d_obs, d_window, rng),
            dec_state: Mlp::new(
                ps,
                "wm.dec_state",
                &[d_obs + d_window + d_m, d_dec, obs_len],
                Init::Xavier,
                rng,
            ),
            dec_reward: Mlp::new(
                ps,
                "wm.dec_reward",
                &[d_obs + d_window + d_m, d_dec, 1],
                Init::Xavier,
                rng,
            ),
            dec_action: Mlp::new(
                ps,
                "wm.dec_action",
                &[d_window + d_m, d_dec, NUM_ACTIONS],
                Init::Zero,
                rng,
            ),
            dec_s0: Mlp::new(ps, "wm.dec_s0", &[d_m, d_dec, obs_len], Init::Xavier, rng),
        }
    }

    pub fn zero_state(&self, g: &mut Graph) -> NodeId {
        g.zeros(self.d_h1)
    }

    /// One world-model step from (observation embedding, previous action,
    /// reward, belief feature).
    pub fn level1_step(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        h1: NodeId,
        obs_embed: NodeId,
        action: Option<usize>,
        reward: f64,
        belief_feature: NodeId,
    ) -> NodeId {
        let mut act = Array1::zeros(NUM_ACTIONS);
        if let Some(a) = action {
            act[a] = 1.0;
        }
        let act = g.constant(act);
        let r = g.scalar(reward);
        let x = g.concat(&[obs_embed, act, r, belief_feature]);
        self.level1.step(g, ps, x, h1)
    }

    fn encode_action_window(&self, g: &mut Graph, ps: &ParamSet, window: &[usize]) -> NodeId {
        let mut h = self.act_window.zero_state(g);
        for &a in window {
            let mut onehot = Array1::zeros(NUM_ACTIONS);
            onehot[a] = 1.0;
            let x = g.constant(onehot);
            h = self.act_window.step(g, ps, x, h);
        }
        h
    }

    fn encode_state_window(&self, g: &mut Graph, ps: &ParamSet, window: &[NodeId]) -> NodeId {
        let mut h = self.state_window.zero_state(g);
        for &s in window {
            h = self.state_window.step(g, ps, s, h);
        }
        h
    }

    /// Predicted next observation tensor (flattened, entries in `[0,1]`)
    /// from an anchor embedding, the actions taken since the anchor, and the
    /// belief sample.
    pub fn decode_state(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        anchor_embed: NodeId,
        action_window: &[usize],
        m: NodeId,
    ) -> Result<NodeId, ModelError> {
        if action_window.is_empty() || action_window.len() > self.n + 1 {
            return Err(ModelError::WindowLength {
                got: action_window.len(),
                max: self.n + 1,
            });
        }
        let code = self.encode_action_window(g, ps, action_window);
        let x = g.concat(&[anchor_embed, code, m]);
        let y = self.dec_state.forward(g, ps, x);
        Ok(g.sigmoid(y))
    }

    /// Predicted reward in `[0,1]` under the same conditioning as
    /// [`WorldModel::decode_state`].
    pub fn decode_reward(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        anchor_embed: NodeId,
        action_window: &[usize],
        m: NodeId,
    ) -> Result<NodeId, ModelError> {
        if action_window.is_empty() || action_window.len() > self.n + 1 {
            return Err(ModelError::WindowLength {
                got: action_window.len(),
                max: self.n + 1,
            });
        }
        let code = self.encode_action_window(g, ps, action_window);
        let x = g.concat(&[anchor_embed, code, m]);
        let y = self.dec_reward.forward(g, ps, x);
        Ok(g.sigmoid(y))
    }

    fn action_logits(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        state_window: &[NodeId],
        m: NodeId,
    ) -> Result<NodeId, ModelError> {
        if state_window.len() < 2 || state_window.len() > self.n + 2 {
            return Err(ModelError::StateWindow {
                got: state_window.len(),
                max: self.n + 2,
            });
        }
        let code = self.encode_state_window(g, ps, state_window);
        let x = g.concat(&[code, m]);
        Ok(self.dec_action.forward(g, ps, x))
    }

    /// Probability vector over the 7 actions given a state window ending at
    /// the successor state, and the belief sample.
    pub fn decode_action(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        state_window: &[NodeId],
        m: NodeId,
    ) -> Result<NodeId, ModelError> {
        let logits = self.action_logits(g, ps, state_window, m)?;
        Ok(g.softmax(logits))
    }

    /// The full factorized reconstruction objective for one belief sample.
    ///
    /// `obs_embeds`/`obs_targets` have length `T+1`; `actions`/`rewards`
    /// length `T`. `anchors` restricts the outer sum to a subset of
    /// `0..T` (training-time subsampling); `None` uses every anchor. The
    /// normalization always uses the summed terms' own count, so subsampling
    /// changes the estimate, not the scale.
    #[allow(clippy::too_many_arguments)]
    pub fn reconstruction_loss(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        obs_embeds: &[NodeId],
        obs_targets: &[Array1<f64>],
        actions: &[usize],
        rewards: &[f64],
        m: NodeId,
        anchors: Option<&[usize]>,
    ) -> Result<NodeId, ModelError> {
        let t_len = actions.len();
        if t_len < 2 {
            return Err(ModelError::TooShort(t_len));
        }
        assert_eq!(obs_embeds.len(), t_len + 1, "need T+1 observation embeds");
        assert_eq!(obs_targets.len(), t_len + 1, "need T+1 observation targets");
        assert_eq!(rewards.len(), t_len, "need T rewards");

        let all: Vec<usize>;
        let anchor_list: &[usize] = match anchors {
            Some(a) => a,
            None => {
                all = (0..t_len).collect();
                &all
            }
        };

        let mut state_terms = Vec::new();
        let mut reward_terms = Vec::new();
        let mut action_terms = Vec::new();
        for &i in anchor_list {
            assert!(i < t_len, "anchor {i} out of range for T={t_len}");
            for j in 0..=self.n.min(i) {
                let window = &actions[i - j..=i];
                let pred = self.decode_state(g, ps, obs_embeds[i - j], window, m)?;
                state_terms.push(g.mse_to(pred, &obs_targets[i + 1]));

                let pred = self.decode_reward(g, ps, obs_embeds[i - j], window, m)?;
                let target = g.scalar(rewards[i]);
                let diff = g.sub(pred, target);
                reward_terms.push(g.mul(diff, diff));

                let states = &obs_embeds[i - j..=i + 1];
                let logits = self.action_logits(g, ps, states, m)?;
                action_terms.push(g.cross_entropy(logits, actions[i]));
            }
        }
        let count = state_terms.len() as f64;
        let state_sum = g.add_many(&state_terms);
        let reward_sum = g.add_many(&reward_terms);
        let action_sum = g.add_many(&action_terms);
        let state_mean = g.scale(state_sum, 1.0 / count);
        let reward_mean = g.scale(reward_sum, 1.0 / count);
        let action_mean = g.scale(action_sum, 1.0 / count);

        let s0_pred = self.dec_s0.forward(g, ps, m);
        let s0_pred = g.sigmoid(s0_pred);
        let s0_term = g.mse_to(s0_pred, &obs_targets[0]);

        let a = g.add(state_mean, reward_mean);
        let b = g.add(a, action_mean);
        Ok(g.add(b, s0_term))
    }

    /// Reconstruction loss without the action sum — the vanilla one-step
    /// style factorization used by the "no n-step" ablation (paired with
    /// `n = 0`).
    #[allow(clippy::too_many_arguments)]
    pub fn reconstruction_loss_no_action(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        obs_embeds: &[NodeId],
        obs_targets: &[Array1<f64>],
        actions: &[usize],
        rewards: &[f64],
        m: NodeId,
        anchors: Option<&[usize]>,
    ) -> Result<NodeId, ModelError> {
        let t_len = actions.len();
        if t_len < 2 {
            return Err(ModelError::TooShort(t_len));
        }
        let all: Vec<usize>;
        let anchor_list: &[usize] = match anchors {
            Some(a) => a,
            None => {
                all = (0..t_len).collect();
                &all
            }
        };
        let mut state_terms = Vec::new();
        let mut reward_terms = Vec::new();
        for &i in anchor_list {
            for j in 0..=self.n.min(i) {
                let window = &actions[i - j..=i];
                let pred = self.decode_state(g, ps, obs_embeds[i - j], window, m)?;
                state_terms.push(g.mse_to(pred, &obs_targets[i + 1]));
                let pred = self.decode_reward(g, ps, obs_embeds[i - j], window, m)?;
                let target = g.scalar(rewards[i]);
                let diff = g.sub(pred, target);
                reward_terms.push(g.mul(diff, diff));
            }
        }
        let count = state_terms.len() as f64;
        let state_sum = g.add_many(&state_terms);
        let reward_sum = g.add_many(&reward_terms);
        let state_mean = g.scale(state_sum, 1.0 / count);
        let reward_mean = g.scale(reward_sum, 1.0 / count);
        let s0_pred = self.dec_s0.forward(g, ps, m);
        let s0_pred = g.sigmoid(s0_pred);
        let s0_term = g.mse_to(s0_pred, &obs_targets[0]);
        let a = g.add(state_mean, reward_mean);
        Ok(g.add(a, s0_term))
    }
}
