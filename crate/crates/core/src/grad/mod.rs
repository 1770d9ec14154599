//! Reverse-mode differentiation for the objectives and log-densities used in
//! training and sampling.

pub mod check;
mod mlp;
mod params;
mod tape;

pub use mlp::{Dense, Mlp, MlpInit, LEAKY_SLOPE};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tape::{FusedOp, Gradients, NodeId, Tape, Tensor, UnaryKind};
