//! Minimal reverse-mode autodiff over `f64` vectors and matrices.
//!
//! Every differentiable computation in this crate is recorded on a [`Graph`]
//! (a Wengert tape). During rollouts the tape is created per step and thrown
//! away; during updates one tape spans a whole task trajectory so gradients
//! flow through recurrent states, memory reads, and consolidation.

pub mod adam;
pub mod check;
pub mod graph;
pub mod layers;
pub mod params;

pub use adam::Adam;
pub use graph::{Graph, NodeId, Value};
pub use params::{GradStore, ParamId, ParamSet};
