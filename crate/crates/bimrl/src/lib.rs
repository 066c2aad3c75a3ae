//! Meta-reinforcement-learning agent with variational task inference, a
//! hierarchical recurrent core, and a dual episodic/associative memory.
//!
//! The agent trains across distributions of procedurally generated gridworld
//! tasks. Within each task it holds a belief over a latent task embedding,
//! refined online from the trajectory so far; a three-level recurrent core
//! consumes that belief together with memory readouts to act; an episodic
//! key-value store and a slow associative store carry information across the
//! episodes of a task; and an intrinsic reward scaled by episodic novelty
//! drives exploration.

pub mod agent;
pub mod belief;
pub mod curiosity;
pub mod env;
pub mod memory;
pub mod nn;
pub mod planner;
pub mod worldmodel;
