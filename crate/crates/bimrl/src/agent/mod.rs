//! The level-3 controller, actor-critic heads, meta-episode rollout loop,
//! and the on-policy trainer that assembles every loss term.
//!
//! A task is played for four consecutive episodes. Belief encoder state,
//! the two world-model recurrent levels, the controller state, and the
//! associative memory all persist across those episodes; the episodic slot
//! store is consolidated and cleared at each episode boundary. Rollouts run
//! on small throwaway graphs (no gradients kept); updates replay the whole
//! task inside one graph so gradient reaches every component, including the
//! plasticity meta-parameters through consolidation.

mod loss;
mod model;
mod rollout;
mod trainer;

pub use loss::{task_loss, LossCoeffs, LossStats};
pub use model::{AgentModel, HierarchyState, ModelDims, ObsEmbedder};
pub use rollout::{meta_rollout, RolloutBatch, RolloutOptions, StepRecord};
pub use trainer::{
    derive_seed, evaluate, EvalReport, IterationMetrics, TrainParams, Trainer,
};

use thiserror::Error;

use crate::env::EnvError;
use crate::planner::PlanError;
use crate::worldmodel::ModelError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("stale batch: policy ratio {max_ratio:.3} exceeds the sanity bound {bound}")]
    StaleBatch { max_ratio: f64, bound: f64 },
    #[error("off-policy drift on the first replay: max log-prob gap {max_gap:.3e}")]
    OffPolicy { max_gap: f64 },
    #[error("non-finite {what} at iteration {iteration}; last batch: {stats}")]
    NonFinite {
        what: String,
        iteration: usize,
        stats: String,
    },
}
