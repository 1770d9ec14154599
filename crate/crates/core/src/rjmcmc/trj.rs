use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::{check_index_proposal, log_joint, IndexProposal, JumpKernel, LogRatio, Proposal, TransModelState};
use crate::error::{Error, Result};
use crate::flows::Transport;
use crate::reference::ReferenceDist;
use crate::targets::TargetFamily;

/// Transported jumps with one map per model: pull `theta` to reference space,
/// pad with fresh reference draws or drop trailing coordinates, and push
/// through the destination model's map.
#[derive(Clone)]
pub struct TrjKernel {
    family: TargetFamily,
    maps: Vec<Arc<dyn Transport>>,
    q: IndexProposal,
    reference: ReferenceDist,
}

impl TrjKernel {
    pub fn new(family: TargetFamily, maps: Vec<Arc<dyn Transport>>, q: IndexProposal) -> Result<Self> {
        check_index_proposal(&q, &family)?;
        if maps.len() != family.len() {
            return Err(Error::Contract(format!(
                "{} models but {} transport maps",
                family.len(),
                maps.len()
            )));
        }
        let reference = maps[0].reference();
        for (m, map) in family.models.iter().zip(&maps) {
            if map.dim() != m.dim || map.contexts() != 0 {
                return Err(Error::dim("transport map for model", m.dim, map.dim()));
            }
            if map.reference() != reference {
                return Err(Error::Contract("all transport maps must share one reference".into()));
            }
        }
        Ok(TrjKernel {
            family,
            maps,
            q,
            reference,
        })
    }

    pub fn maps(&self) -> &[Arc<dyn Transport>] {
        &self.maps
    }
}

impl JumpKernel for TrjKernel {
    fn name(&self) -> &'static str {
        "trj"
    }

    fn family(&self) -> &TargetFamily {
        &self.family
    }

    fn index_proposal(&self) -> &IndexProposal {
        &self.q
    }

    fn init(&self, k: usize) -> Result<TransModelState> {
        let d = self.family.model(k)?.dim;
        let (theta, _) = self.maps[k].push_point(&vec![0.0; d], None)?;
        Ok(TransModelState::new(k, theta))
    }

    fn fresh_len(&self, from: usize, to: usize) -> usize {
        self.family.models[to].dim.saturating_sub(self.family.models[from].dim)
    }

    fn draw_fresh(&self, from: usize, to: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.reference.draw(rng, self.fresh_len(from, to))
    }

    fn transition(&self, state: &TransModelState, to: usize, fresh: &[f64]) -> Result<Proposal> {
        state.check(&self.family)?;
        let from = state.k;
        let d_to = self.family.model(to)?.dim;
        if fresh.len() != self.fresh_len(from, to) {
            return Err(Error::dim("fresh auxiliaries", self.fresh_len(from, to), fresh.len()));
        }
        let (mut z, ld_pull) = self.maps[from].pull_point(&state.theta, None)?;
        let (aux, reverse_fresh) = if d_to >= z.len() {
            z.extend_from_slice(fresh);
            (-self.reference.log_density(fresh)?, Vec::new())
        } else {
            let dropped = z.split_off(d_to);
            (self.reference.log_density(&dropped)?, dropped)
        };
        let (theta, ld_push) = self.maps[to].push_point(&z, None)?;
        let target = if theta.iter().all(|v| v.is_finite()) {
            log_joint(&self.family, to, &theta)? - log_joint(&self.family, from, &state.theta)?
        } else {
            f64::NEG_INFINITY
        };
        Ok(Proposal {
            state: TransModelState::new(to, theta),
            log_ratio: LogRatio {
                target,
                index: self.q.prob(to, from).ln() - self.q.prob(from, to).ln(),
                jacobian: ld_pull + ld_push,
                aux,
            },
            reverse_fresh,
        })
    }
}
