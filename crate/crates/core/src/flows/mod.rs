//! Invertible transport maps between a reference product measure and a model's
//! parameter space.
//!
//! Direction convention: `push` maps reference coordinates `z` to parameters
//! `x`, `pull` is its inverse. Both return the log-determinant of the Jacobian
//! of the direction taken, one value per row.

mod base;
mod coupling;
mod sas;
mod scalar;
mod stack;

pub use base::ConditionalBase;
pub use coupling::CouplingLayer;
pub use sas::{sas_forward, sas_inverse, SasExactMap};
pub use scalar::ScalarLayer;
pub use stack::{FlowSpec, FlowStack, Layer, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grad::{NodeId, Tape};
use crate::reference::ReferenceDist;

/// An invertible map from `(nu)^d` to a model's parameter space.
pub trait Transport: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of model contexts the map is conditioned on (0 when unconditional).
    fn contexts(&self) -> usize {
        0
    }

    fn reference(&self) -> ReferenceDist;

    /// `z -> (x, log|det dx/dz|)` for a `b x d` batch.
    fn push(&self, tape: &mut Tape, z: NodeId, ctx: Option<usize>) -> Result<(NodeId, NodeId)>;

    /// `x -> (z, log|det dz/dx|)` for a `b x d` batch.
    fn pull(&self, tape: &mut Tape, x: NodeId, ctx: Option<usize>) -> Result<(NodeId, NodeId)>;

    fn push_point(&self, z: &[f64], ctx: Option<usize>) -> Result<(Vec<f64>, f64)> {
        point(self, z, ctx, true)
    }

    fn pull_point(&self, x: &[f64], ctx: Option<usize>) -> Result<(Vec<f64>, f64)> {
        point(self, x, ctx, false)
    }

    /// Log-density of the pushed-forward reference at `x`.
    fn log_q_point(&self, x: &[f64], ctx: Option<usize>) -> Result<f64> {
        let (z, ld) = self.pull_point(x, ctx)?;
        Ok(self.reference().log_density(&z)? + ld)
    }
}

fn point<T: Transport + ?Sized>(
    map: &T,
    v: &[f64],
    ctx: Option<usize>,
    push: bool,
) -> Result<(Vec<f64>, f64)> {
    if v.len() != map.dim() {
        return Err(Error::dim("transport point", map.dim(), v.len()));
    }
    let mut tape = Tape::no_grad();
    let n = tape.row(v);
    let (out, ld) = if push {
        map.push(&mut tape, n, ctx)?
    } else {
        map.pull(&mut tape, n, ctx)?
    };
    Ok((tape.value(out).iter().copied().collect(), tape.scalar_value(ld)))
}

/// `rows x k` one-hot encoding of model index `index`.
pub fn one_hot(index: usize, k: usize, rows: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows, k));
    m.column_mut(index).fill(1.0);
    m
}

/// The identity transport.
#[derive(Clone, Debug)]
pub struct IdentityMap {
    pub dim: usize,
    pub reference: ReferenceDist,
}

impl IdentityMap {
    pub fn new(dim: usize) -> Self {
        IdentityMap {
            dim,
            reference: ReferenceDist::StandardGaussian,
        }
    }

    fn apply(&self, tape: &mut Tape, v: NodeId) -> Result<(NodeId, NodeId)> {
        let (rows, cols) = tape.shape(v);
        if cols != self.dim {
            return Err(Error::dim("identity map", self.dim, cols));
        }
        let ld = tape.leaf(Array2::zeros((rows, 1)));
        Ok((v, ld))
    }
}

impl Transport for IdentityMap {
    fn dim(&self) -> usize {
        self.dim
    }
    fn reference(&self) -> ReferenceDist {
        self.reference
    }
    fn push(&self, tape: &mut Tape, z: NodeId, _ctx: Option<usize>) -> Result<(NodeId, NodeId)> {
        self.apply(tape, z)
    }
    fn pull(&self, tape: &mut Tape, x: NodeId, _ctx: Option<usize>) -> Result<(NodeId, NodeId)> {
        self.apply(tape, x)
    }
}
