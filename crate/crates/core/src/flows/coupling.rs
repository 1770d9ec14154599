use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Mlp, MlpInit, NodeId, ParamStore, Tape};

/// Affine coupling layer: the `identity` block is copied and conditions the
/// scale and shift of the `transformed` block,
/// `x_J = z_J * exp(s(z_I, c)) + t(z_I, c)`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CouplingLayer {
    pub dim: usize,
    pub identity: Vec<usize>,
    pub transformed: Vec<usize>,
    /// Width of the one-hot context appended to the network input (0 = none).
    pub contexts: usize,
    pub s: Mlp,
    pub t: Mlp,
}

impl CouplingLayer {
    /// `identity` lists the copied coordinates; the rest are transformed.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        identity: Vec<usize>,
        contexts: usize,
        hidden: &[usize],
        init: MlpInit,
        rng: &mut R,
    ) -> Result<Self> {
        if identity.is_empty() || identity.len() >= dim || identity.iter().any(|&i| i >= dim) {
            return Err(Error::Contract(format!(
                "coupling identity block {identity:?} must be a proper subset of 0..{dim}"
            )));
        }
        let transformed: Vec<usize> = (0..dim).filter(|i| !identity.contains(i)).collect();
        let input = identity.len() + contexts;
        let s = Mlp::new(store, &format!("{prefix}.s"), input, hidden, transformed.len(), init, rng);
        let t = Mlp::new(store, &format!("{prefix}.t"), input, hidden, transformed.len(), init, rng);
        Ok(CouplingLayer {
            dim,
            identity,
            transformed,
            contexts,
            s,
            t,
        })
    }

    /// Apply the layer (`inverse = false`) or its inverse. `ctx` is the
    /// `b x contexts` one-hot node, required iff the layer is conditional.
    pub fn apply(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        v: NodeId,
        ctx: Option<NodeId>,
        inverse: bool,
    ) -> Result<(NodeId, NodeId)> {
        let cols = tape.shape(v).1;
        if cols != self.dim {
            return Err(Error::dim("coupling layer", self.dim, cols));
        }
        let keep = tape.select_cols(v, &self.identity);
        let input = match (ctx, self.contexts) {
            (None, 0) => keep,
            (Some(c), n) if n > 0 => {
                if tape.shape(c).1 != n {
                    return Err(Error::dim("coupling context", n, tape.shape(c).1));
                }
                tape.concat_cols(&[keep, c])?
            }
            (None, _) => return Err(Error::Contract("conditional coupling layer needs a context".into())),
            (Some(_), _) => {
                return Err(Error::Contract("unconditional coupling layer given a context".into()))
            }
        };
        let s = self.s.apply(store, tape, input)?;
        let t = self.t.apply(store, tape, input)?;
        let moved = tape.select_cols(v, &self.transformed);
        let sum_s = tape.sum_rows(s);
        let (out, logdet) = if inverse {
            let shifted = tape.sub(moved, t);
            let neg_s = tape.neg(s);
            let scale = tape.exp(neg_s);
            (tape.mul(shifted, scale), tape.neg(sum_s))
        } else {
            let scale = tape.exp(s);
            let scaled = tape.mul(moved, scale);
            (tape.add(scaled, t), sum_s)
        };
        let x = tape.assemble_cols(
            &[(keep, self.identity.clone()), (out, self.transformed.clone())],
            self.dim,
        )?;
        Ok((x, logdet))
    }
}
