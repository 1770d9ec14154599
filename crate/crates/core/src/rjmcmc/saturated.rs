use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;

use super::{check_index_proposal, log_joint, IndexProposal, JumpKernel, LogRatio, Proposal, TransModelState};
use crate::error::{Error, Result};
use crate::reference::ReferenceDist;
use crate::targets::TargetFamily;

/// Block-switching sampler on the saturated space. Every canonical parameter
/// slot holds a value; the slots a model does not use carry auxiliaries
/// distributed `N(0, aux_var)` and redrawn before each proposal, so a jump
/// switches blocks on from independent draws and switches others off.
#[derive(Clone)]
pub struct SaturatedKernel {
    family: TargetFamily,
    q: IndexProposal,
    aux_var: f64,
}

impl SaturatedKernel {
    pub fn new(family: TargetFamily, q: IndexProposal, aux_var: f64) -> Result<Self> {
        check_index_proposal(&q, &family)?;
        if !(aux_var > 0.0 && aux_var.is_finite()) {
            return Err(Error::Config(format!("auxiliary variance must be positive, got {aux_var}")));
        }
        Ok(SaturatedKernel { family, q, aux_var })
    }

    pub fn aux_var(&self) -> f64 {
        self.aux_var
    }

    /// Slots not used by model `k`, ascending.
    fn free_slots(&self, k: usize) -> Vec<usize> {
        let used = &self.family.models[k].slots;
        (0..self.family.d_max).filter(|s| !used.contains(s)).collect()
    }

    fn aux_log_density(&self, u: &[f64]) -> f64 {
        let c = -0.5 * (2.0 * PI * self.aux_var).ln();
        u.iter().map(|x| c - x * x / (2.0 * self.aux_var)).sum()
    }

    /// The state as one vector indexed by canonical slot.
    pub fn canonical(&self, state: &TransModelState) -> Result<Vec<f64>> {
        state.check(&self.family)?;
        let u = state
            .aux
            .as_deref()
            .ok_or_else(|| Error::Contract("saturated state needs auxiliary variables".into()))?;
        let mut s = vec![0.0; self.family.d_max];
        for (v, &slot) in state.theta.iter().zip(&self.family.models[state.k].slots) {
            s[slot] = *v;
        }
        for (v, slot) in u.iter().zip(self.free_slots(state.k)) {
            s[slot] = *v;
        }
        Ok(s)
    }

    fn split(&self, k: usize, s: &[f64]) -> TransModelState {
        TransModelState {
            k,
            theta: self.family.models[k].slots.iter().map(|&i| s[i]).collect(),
            aux: Some(self.free_slots(k).into_iter().map(|i| s[i]).collect()),
        }
    }
}

impl JumpKernel for SaturatedKernel {
    fn name(&self) -> &'static str {
        "saturated"
    }

    fn family(&self) -> &TargetFamily {
        &self.family
    }

    fn index_proposal(&self) -> &IndexProposal {
        &self.q
    }

    fn init(&self, k: usize) -> Result<TransModelState> {
        self.family.model(k)?;
        Ok(self.split(k, &vec![0.0; self.family.d_max]))
    }

    fn fresh_len(&self, _from: usize, _to: usize) -> usize {
        0
    }

    fn draw_fresh(&self, _from: usize, _to: usize, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        Vec::new()
    }

    fn refresh(&self, state: &mut TransModelState, rng: &mut ChaCha8Rng) -> Result<()> {
        self.family.model(state.k)?;
        let n = self.family.d_max - state.theta.len();
        let sd = self.aux_var.sqrt();
        state.aux = Some(ReferenceDist::StandardGaussian.draw(rng, n).into_iter().map(|v| sd * v).collect());
        Ok(())
    }

    fn transition(&self, state: &TransModelState, to: usize, fresh: &[f64]) -> Result<Proposal> {
        if !fresh.is_empty() {
            return Err(Error::dim("fresh auxiliaries", 0, fresh.len()));
        }
        self.family.model(to)?;
        let s = self.canonical(state)?;
        let next = self.split(to, &s);
        let from = state.k;
        let target = log_joint(&self.family, to, &next.theta)? - log_joint(&self.family, from, &state.theta)?;
        let aux = self.aux_log_density(next.aux.as_deref().unwrap_or_default())
            - self.aux_log_density(state.aux.as_deref().unwrap_or_default());
        Ok(Proposal {
            state: next,
            log_ratio: LogRatio {
                target,
                index: self.q.prob(to, from).ln() - self.q.prob(from, to).ln(),
                jacobian: 0.0,
                aux,
            },
            reverse_fresh: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::targets::varsel;

    fn kernel() -> SaturatedKernel {
        let fam = varsel::family(&varsel::simulate(1, 20), &varsel::VsHyper::default()).unwrap();
        SaturatedKernel::new(fam, IndexProposal::uniform(4), 100.0).unwrap()
    }

    #[test]
    fn self_move_is_identity_with_unit_acceptance() {
        let kern = kernel();
        let mut rng = stream(1, 0);
        let mut s = kern.init(2).unwrap();
        kern.refresh(&mut s, &mut rng).unwrap();
        let p = kern.transition(&s, 2, &[]).unwrap();
        assert_eq!(p.state, s);
        assert_eq!(p.log_ratio.accept_prob().unwrap(), 1.0);
    }

    #[test]
    fn block_swap_is_an_involution() {
        let kern = kernel();
        let mut rng = stream(2, 0);
        for k in 0..4 {
            for to in 0..4 {
                let mut s = kern.init(k).unwrap();
                s.theta = ReferenceDist::StandardGaussian.draw(&mut rng, s.theta.len());
                kern.refresh(&mut s, &mut rng).unwrap();
                let fwd = kern.transition(&s, to, &[]).unwrap();
                let back = kern.transition(&fwd.state, k, &[]).unwrap();
                assert_eq!(back.state, s);
                assert!((fwd.log_ratio.total() + back.log_ratio.total()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn canonical_places_parameters_by_slot() {
        let kern = kernel();
        // model (1,0,1,1) uses slots 0, 2, 3
        let s = TransModelState {
            k: 2,
            theta: vec![1.0, 2.0, 3.0],
            aux: Some(vec![9.0]),
        };
        assert_eq!(kern.canonical(&s).unwrap(), vec![1.0, 9.0, 2.0, 3.0]);
    }
}
