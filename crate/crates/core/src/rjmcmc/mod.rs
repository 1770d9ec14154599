//! Reversible-jump samplers over a [`TargetFamily`]: transported jumps with
//! one map per model, conditional transport proposals with a single
//! context-conditioned map, the block-switching saturated-space baseline,
//! and within-model updates run in reference space.

mod chain;
mod ctp;
mod saturated;
mod trj;
mod within;

pub use chain::{run_chain, run_chains, ChainConfig, ChainRecord, MoveRecord, Sampler};
pub use ctp::CtpKernel;
pub use saturated::SaturatedKernel;
pub use trj::TrjKernel;
pub use within::{InnerKernel, WithinModel};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::categorical;
use crate::targets::TargetFamily;

/// A point `(k, theta_k)` of the trans-dimensional space, with auxiliaries
/// `u` of length `d_max - d_k` when the sampler works in the saturated space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransModelState {
    pub k: usize,
    pub theta: Vec<f64>,
    pub aux: Option<Vec<f64>>,
}

impl TransModelState {
    pub fn new(k: usize, theta: Vec<f64>) -> Self {
        TransModelState { k, theta, aux: None }
    }

    pub fn check(&self, family: &TargetFamily) -> Result<()> {
        let m = family.model(self.k)?;
        m.check_theta(&self.theta)?;
        if let Some(u) = &self.aux {
            if u.len() != family.d_max - m.dim {
                return Err(Error::dim("auxiliary variables", family.d_max - m.dim, u.len()));
            }
        }
        Ok(())
    }

    /// `(theta, u)` as one saturated vector, parameters first.
    pub fn saturated(&self) -> Vec<f64> {
        let mut x = self.theta.clone();
        if let Some(u) = &self.aux {
            x.extend_from_slice(u);
        }
        x
    }
}

/// Model-index proposal `q(k' | k)`, one row per current model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexProposal {
    rows: Vec<Vec<f64>>,
}

impl IndexProposal {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(Error::dim("index proposal row", k, r.len()));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-12 || r.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Config(format!("index proposal row {i} must be a distribution, got {r:?}")));
            }
        }
        Ok(IndexProposal { rows })
    }

    /// Uniform over all `k` models, self-moves included.
    pub fn uniform(k: usize) -> Self {
        IndexProposal {
            rows: vec![vec![1.0 / k as f64; k]; k],
        }
    }

    /// The same distribution from every current model.
    pub fn fixed(probs: &[f64]) -> Result<Self> {
        Self::from_rows(vec![probs.to_vec(); probs.len()])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.rows[from][to]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn draw<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        categorical(rng, &self.rows[from])
    }

    /// Draw `k' != from` with probability proportional to `q(k' | from)`.
    pub fn draw_other<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> Result<usize> {
        let mut row = self.rows[from].clone();
        row[from] = 0.0;
        let s: f64 = row.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Contract(format!("model {from} proposes no other model")));
        }
        row.iter_mut().for_each(|p| *p /= s);
        Ok(categorical(rng, &row))
    }
}

/// Additive pieces of a log acceptance ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LogRatio {
    /// `log pi(k') + log pi(theta' | k') - log pi(k) - log pi(theta | k)`.
    pub target: f64,
    /// `log q(k | k') - log q(k' | k)`.
    pub index: f64,
    /// Log-Jacobian of the deterministic map between the two states.
    pub jacobian: f64,
    /// Auxiliary densities: created variables enter negatively, retired ones positively.
    pub aux: f64,
}

impl LogRatio {
    pub fn total(&self) -> f64 {
        self.target + self.index + self.jacobian + self.aux
    }

    /// `min(1, exp(total))`, zero for a proposal outside the support. A zero
    /// target density rejects even when the map overflowed and left the
    /// Jacobian undefined.
    pub fn accept_prob(&self) -> Result<f64> {
        if self.target == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        let t = self.total();
        if t.is_nan() {
            return Err(Error::NonFinite(format!("log acceptance ratio {self:?}")));
        }
        Ok(t.min(0.0).exp())
    }
}

/// A proposed state with its acceptance ratio and the auxiliaries the reverse
/// move would need to regenerate.
#[derive(Clone, Debug)]
pub struct Proposal {
    pub state: TransModelState,
    pub log_ratio: LogRatio,
    pub reverse_fresh: Vec<f64>,
}

/// A between-model move.
pub trait JumpKernel: Send + Sync {
    fn name(&self) -> &'static str;

    fn family(&self) -> &TargetFamily;

    fn index_proposal(&self) -> &IndexProposal;

    /// Starting state in model `k`.
    fn init(&self, k: usize) -> Result<TransModelState>;

    /// Number of fresh variables a `from -> to` move draws.
    fn fresh_len(&self, from: usize, to: usize) -> usize;

    /// Deterministic part of the move: map `state` into model `to` using the
    /// freshly drawn variables `fresh`.
    fn transition(&self, state: &TransModelState, to: usize, fresh: &[f64]) -> Result<Proposal>;

    /// Refresh any auxiliaries that are resampled before each proposal
    /// (a Gibbs step leaving the augmented target invariant).
    fn refresh(&self, _state: &mut TransModelState, _rng: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }

    fn draw_fresh(&self, from: usize, to: usize, rng: &mut ChaCha8Rng) -> Vec<f64>;

    /// Refresh auxiliaries, draw `k'` and apply the transition.
    fn propose(&self, state: &mut TransModelState, rng: &mut ChaCha8Rng) -> Result<Proposal> {
        self.refresh(state, rng)?;
        let to = self.index_proposal().draw(state.k, rng);
        let fresh = self.draw_fresh(state.k, to, rng);
        self.transition(state, to, &fresh)
    }
}

/// `log pi(k) + log pi(theta | k)`, or `-inf` for a point outside the support.
pub(crate) fn log_joint(family: &TargetFamily, k: usize, theta: &[f64]) -> Result<f64> {
    let v = family.log_joint(k, theta)?;
    if v.is_nan() {
        return Err(Error::NonFinite(format!("log target of model {k} at {theta:?}")));
    }
    Ok(v)
}

pub(crate) fn check_index_proposal(q: &IndexProposal, family: &TargetFamily) -> Result<()> {
    if q.len() != family.len() {
        return Err(Error::dim("index proposal", family.len(), q.len()));
    }
    Ok(())
}
