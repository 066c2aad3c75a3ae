//! Parameter assembly: observation embedder, the three recurrent levels,
//! memory projections, and the shallow actor-critic heads.

use ndarray::Array1;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::BeliefNet;
use crate::env::{NUM_ACTIONS, OBS_LEN, VIEW_CHANNELS, VIEW_SIZE};
use crate::memory::MemoryNet;
use crate::nn::graph::{Graph, NodeId};
use crate::nn::layers::{GruCell, Init, Linear, Mlp};
use crate::nn::params::ParamSet;
use crate::planner::Planner;
use crate::worldmodel::WorldModel;

/// Every width in the network, plus the factorization depth `n` and the TD
/// parameters the planner bakes in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_obs_embed: usize,
    pub d_patch: usize,
    pub d_m: usize,
    pub d_enc: usize,
    pub d_h1: usize,
    pub d_h2: usize,
    pub d_h3: usize,
    pub d_window: usize,
    pub d_dec: usize,
    pub d_att: usize,
    pub heads: usize,
    pub d_pi: usize,
    pub n: usize,
    pub td_k: usize,
    pub gamma: f64,
}

impl ModelDims {
    /// Memory key width: observation embedding ⧺ belief feature.
    pub fn d_key(&self) -> usize {
        self.d_obs_embed + 2 * self.d_m
    }

    /// Memory value width: the controller state.
    pub fn d_val(&self) -> usize {
        self.d_h3
    }
}

/// Patch-wise observation encoder: nine 3×3 windows (stride 2) over the
/// 7×7×3 view, a shared per-patch linear map, then a mixing layer.
#[derive(Debug, Clone)]
pub struct ObsEmbedder {
    patch: Linear,
    out: Linear,
    d_patch: usize,
    pub d_obs_embed: usize,
}

const PATCH_SIZE: usize = 3;
const PATCH_STRIDE: usize = 2;
const PATCHES_PER_SIDE: usize = 3;
const PATCH_LEN: usize = PATCH_SIZE * PATCH_SIZE * VIEW_CHANNELS;

impl ObsEmbedder {
    pub fn new(
        ps: &mut ParamSet,
        d_patch: usize,
        d_obs_embed: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let patch = Linear::new(ps, "embed.patch", PATCH_LEN, d_patch, Init::Xavier, rng);
        let out = Linear::new(
            ps,
            "embed.out",
            PATCHES_PER_SIDE * PATCHES_PER_SIDE * d_patch,
            d_obs_embed,
            Init::Xavier,
            rng,
        );
        Self {
            patch,
            out,
            d_patch,
            d_obs_embed,
        }
    }

    /// Embed one flattened observation. The observation is leaf data, so the
    /// patches enter the graph as constants; gradient flows only into the
    /// embedder weights.
    pub fn embed(&self, g: &mut Graph, ps: &ParamSet, obs: &Array1<f64>) -> NodeId {
        assert_eq!(obs.len(), OBS_LEN, "observation length");
        let mut codes = Vec::with_capacity(PATCHES_PER_SIDE * PATCHES_PER_SIDE);
        for py in 0..PATCHES_PER_SIDE {
            for px in 0..PATCHES_PER_SIDE {
                let mut vals = Array1::zeros(PATCH_LEN);
                let mut w = 0;
                for dy in 0..PATCH_SIZE {
                    for dx in 0..PATCH_SIZE {
                        let y = py * PATCH_STRIDE + dy;
                        let x = px * PATCH_STRIDE + dx;
                        for c in 0..VIEW_CHANNELS {
                            vals[w] = obs[(y * VIEW_SIZE + x) * VIEW_CHANNELS + c];
                            w += 1;
                        }
                    }
                }
                let node = g.constant(vals);
                let code = self.patch.forward(g, ps, node);
                codes.push(g.tanh(code));
            }
        }
        let cat = g.concat(&codes);
        let mixed = self.out.forward(g, ps, cat);
        g.tanh(mixed)
    }

    pub fn d_patch(&self) -> usize {
        self.d_patch
    }
}

/// The recurrent states carried between steps: belief encoder, the two
/// world-model levels, and the controller. All zeroed at task start; all
/// persist across the four episodes of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyState {
    pub enc: Array1<f64>,
    pub h1: Array1<f64>,
    pub h2: Array1<f64>,
    pub h3: Array1<f64>,
}

impl HierarchyState {
    pub fn zeros(dims: &ModelDims) -> Self {
        Self {
            enc: Array1::zeros(dims.d_enc),
            h1: Array1::zeros(dims.d_h1),
            h2: Array1::zeros(dims.d_h2),
            h3: Array1::zeros(dims.d_h3),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.enc.iter().all(|x| x.is_finite())
            && self.h1.iter().all(|x| x.is_finite())
            && self.h2.iter().all(|x| x.is_finite())
            && self.h3.iter().all(|x| x.is_finite())
    }
}

/// The complete agent: embedder, belief encoder, world model (level 1),
/// planner (level 2), memory system, controller (level 3), and the policy
/// and value heads.
#[derive(Debug, Clone)]
pub struct AgentModel {
    pub dims: ModelDims,
    pub embedder: ObsEmbedder,
    pub belief: BeliefNet,
    pub world: WorldModel,
    pub planner: Planner,
    pub memory: MemoryNet,
    controller: GruCell,
    actor: Mlp,
    critic: Mlp,
}

impl AgentModel {
    pub fn new(ps: &mut ParamSet, dims: ModelDims, rng: &mut ChaCha8Rng) -> Self {
        let embedder = ObsEmbedder::new(ps, dims.d_patch, dims.d_obs_embed, rng);
        let belief = BeliefNet::new(ps, dims.d_obs_embed, dims.d_m, dims.d_enc, rng);
        let world = WorldModel::new(
            ps,
            dims.d_obs_embed,
            dims.d_m,
            dims.d_h1,
            dims.d_window,
            dims.d_dec,
            OBS_LEN,
            dims.n,
            rng,
        );
        let planner = Planner::new(
            ps,
            dims.d_obs_embed,
            dims.d_h1,
            dims.d_h2,
            dims.d_window,
            dims.d_dec,
            dims.n,
            dims.td_k,
            dims.gamma,
            rng,
        );
        let memory = MemoryNet::new(ps, dims.d_key(), dims.d_val(), dims.d_att, dims.heads, rng);
        let ctrl_in = dims.d_obs_embed + 2 * dims.d_m + dims.d_h2 + dims.d_h3;
        let controller = GruCell::new(ps, "ctrl.gru", ctrl_in, dims.d_h3, rng);
        // zero-initialized final layers: uniform policy and zero values at start
        let actor = Mlp::new(
            ps,
            "head.actor",
            &[dims.d_h3, dims.d_pi, NUM_ACTIONS],
            Init::Zero,
            rng,
        );
        let critic = Mlp::new(ps, "head.critic", &[dims.d_h3, dims.d_pi, 1], Init::Zero, rng);
        Self {
            dims,
            embedder,
            belief,
            world,
            planner,
            memory,
            controller,
            actor,
            critic,
        }
    }

    /// Level-3 update: the controller aggregates the fresh level-2 state,
    /// the current observation embedding, the belief feature, and the
    /// combined memory readout.
    pub fn controller_step(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        h3: NodeId,
        h2: NodeId,
        obs_embed: NodeId,
        belief_feature: NodeId,
        memory_readout: NodeId,
    ) -> NodeId {
        assert_eq!(g.vec(memory_readout).len(), self.dims.d_h3, "readout width");
        let x = g.concat(&[obs_embed, belief_feature, h2, memory_readout]);
        self.controller.step(g, ps, x, h3)
    }

    /// Policy logits and state value from the controller state.
    pub fn act(&self, g: &mut Graph, ps: &ParamSet, h3: NodeId) -> (NodeId, NodeId) {
        let logits = self.actor.forward(g, ps, h3);
        let value = self.critic.forward(g, ps, h3);
        (logits, value)
    }

    /// Names of the critic-head tensors (used to verify that planner targets
    /// stay detached from the critic).
    pub fn critic_param_names(&self) -> Vec<String> {
        vec![
            "head.critic.0.w".into(),
            "head.critic.0.b".into(),
            "head.critic.1.w".into(),
            "head.critic.1.b".into(),
        ]
    }
}

/// Small widths shared by the agent test modules.
#[cfg(test)]
pub(crate) fn tiny_dims() -> ModelDims {
    ModelDims {
        d_obs_embed: 6,
        d_patch: 3,
        d_m: 3,
        d_enc: 7,
        d_h1: 5,
        d_h2: 5,
        d_h3: 6,
        d_window: 4,
        d_dec: 5,
        d_att: 4,
        heads: 2,
        d_pi: 5,
        n: 2,
        td_k: 2,
        gamma: 0.95,
    }
}
