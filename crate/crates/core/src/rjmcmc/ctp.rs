use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::{check_index_proposal, log_joint, IndexProposal, JumpKernel, LogRatio, Proposal, TransModelState};
use crate::error::{Error, Result};
use crate::flows::Transport;
use crate::reference::ReferenceDist;
use crate::targets::TargetFamily;

/// Conditional transport proposals: the saturated vector `(theta, u)` is
/// pulled to the shared base space under context `k` and pushed back under
/// context `k'`. Auxiliaries follow the standard Gaussian and are redrawn
/// before every proposal.
#[derive(Clone)]
pub struct CtpKernel {
    family: TargetFamily,
    map: Arc<dyn Transport>,
    q: IndexProposal,
}

const AUX: ReferenceDist = ReferenceDist::StandardGaussian;

impl CtpKernel {
    pub fn new(family: TargetFamily, map: Arc<dyn Transport>, q: IndexProposal) -> Result<Self> {
        check_index_proposal(&q, &family)?;
        if map.dim() != family.d_max || map.contexts() != family.len() {
            return Err(Error::dim(
                "conditional map",
                format!("dim {} with {} contexts", family.d_max, family.len()),
                format!("dim {} with {} contexts", map.dim(), map.contexts()),
            ));
        }
        Ok(CtpKernel { family, map, q })
    }

    pub fn map(&self) -> &Arc<dyn Transport> {
        &self.map
    }

    fn aux_len(&self, k: usize) -> usize {
        self.family.d_max - self.family.models[k].dim
    }
}

impl JumpKernel for CtpKernel {
    fn name(&self) -> &'static str {
        "ctp"
    }

    fn family(&self) -> &TargetFamily {
        &self.family
    }

    fn index_proposal(&self) -> &IndexProposal {
        &self.q
    }

    fn init(&self, k: usize) -> Result<TransModelState> {
        let d = self.family.model(k)?.dim;
        let (mut x, _) = self.map.push_point(&vec![0.0; self.family.d_max], Some(k))?;
        let aux = x.split_off(d);
        Ok(TransModelState { k, theta: x, aux: Some(aux) })
    }

    fn fresh_len(&self, _from: usize, _to: usize) -> usize {
        0
    }

    fn draw_fresh(&self, _from: usize, _to: usize, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        Vec::new()
    }

    fn refresh(&self, state: &mut TransModelState, rng: &mut ChaCha8Rng) -> Result<()> {
        self.family.model(state.k)?;
        state.aux = Some(AUX.draw(rng, self.aux_len(state.k)));
        Ok(())
    }

    fn transition(&self, state: &TransModelState, to: usize, fresh: &[f64]) -> Result<Proposal> {
        state.check(&self.family)?;
        if !fresh.is_empty() {
            return Err(Error::dim("fresh auxiliaries", 0, fresh.len()));
        }
        let from = state.k;
        let u = match &state.aux {
            Some(u) => u.as_slice(),
            None if self.aux_len(from) == 0 => &[],
            None => return Err(Error::Contract("conditional proposal needs auxiliary variables".into())),
        };
        let d_to = self.family.model(to)?.dim;
        let (eps, ld_pull) = self.map.pull_point(&state.saturated(), Some(from))?;
        let (mut x, ld_push) = self.map.push_point(&eps, Some(to))?;
        let aux_new = x.split_off(d_to);
        let target = if x.iter().chain(&aux_new).all(|v| v.is_finite()) {
            log_joint(&self.family, to, &x)? - log_joint(&self.family, from, &state.theta)?
        } else {
            f64::NEG_INFINITY
        };
        let aux = if target.is_finite() {
            AUX.log_density(&aux_new)? - AUX.log_density(u)?
        } else {
            0.0
        };
        Ok(Proposal {
            state: TransModelState {
                k: to,
                theta: x,
                aux: Some(aux_new),
            },
            log_ratio: LogRatio {
                target,
                index: self.q.prob(to, from).ln() - self.q.prob(from, to).ln(),
                jacobian: ld_pull + ld_push,
                aux,
            },
            reverse_fresh: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{FlowSpec, FlowStack, IdentityMap};
    use crate::rng::stream;
    use crate::targets::gaussian::{self, DiagGaussian};
    use crate::targets::ModelSpace;
    use rand::RngExt;

    /// Identity map that accepts any context.
    struct AnyContext(IdentityMap, usize);

    impl Transport for AnyContext {
        fn dim(&self) -> usize {
            self.0.dim
        }
        fn contexts(&self) -> usize {
            self.1
        }
        fn reference(&self) -> ReferenceDist {
            self.0.reference
        }
        fn push(&self, t: &mut crate::grad::Tape, z: crate::grad::NodeId, c: Option<usize>) -> Result<(crate::grad::NodeId, crate::grad::NodeId)> {
            self.0.push(t, z, c)
        }
        fn pull(&self, t: &mut crate::grad::Tape, x: crate::grad::NodeId, c: Option<usize>) -> Result<(crate::grad::NodeId, crate::grad::NodeId)> {
            self.0.pull(t, x, c)
        }
    }

    fn gaussian_pair(prior: [f64; 2]) -> TargetFamily {
        let models = (0..2)
            .map(|k| ModelSpace::new(k, format!("m{k}"), 2, (0..=k).collect(), Arc::new(DiagGaussian::standard(k + 1))).unwrap())
            .collect();
        TargetFamily::new("pair", models, &prior, serde_json::Value::Null).unwrap()
    }

    #[test]
    fn identity_map_on_reference_targets_accepts_by_index_ratio() {
        let q = IndexProposal::from_rows(vec![vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        let kernel = CtpKernel::new(gaussian_pair([0.5, 0.5]), Arc::new(AnyContext(IdentityMap::new(2), 2)), q.clone()).unwrap();
        let mut rng = stream(2, 0);
        for _ in 0..100 {
            let k = rng.random_range(0..2usize);
            let mut s = kernel.init(k).unwrap();
            s.theta = AUX.draw(&mut rng, k + 1);
            kernel.refresh(&mut s, &mut rng).unwrap();
            let to = 1 - k;
            let p = kernel.transition(&s, to, &[]).unwrap();
            let expected = (q.prob(to, k) / q.prob(k, to)).min(1.0);
            assert!((p.log_ratio.accept_prob().unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_recovers_state_and_negates_ratio() {
        let fam = gaussian::two_model_toy();
        let mut flow = FlowStack::new(FlowSpec::conditional(2, 4, 2).with_hidden(vec![8]), 3).unwrap();
        // move the parameters off the identity so every term is exercised
        let mut rng = stream(3, 0);
        let flat: Vec<f64> = flow.store().to_flat().iter().map(|_| rng.random_range(-0.3..0.3)).collect();
        flow.store_mut().set_flat(&flat).unwrap();
        let kernel = CtpKernel::new(fam, Arc::new(flow), IndexProposal::uniform(2)).unwrap();
        for _ in 0..100 {
            let k = rng.random_range(0..2usize);
            let mut s = TransModelState::new(k, AUX.draw(&mut rng, k + 1));
            kernel.refresh(&mut s, &mut rng).unwrap();
            let to = 1 - k;
            let fwd = kernel.transition(&s, to, &[]).unwrap();
            let back = kernel.transition(&fwd.state, k, &[]).unwrap();
            assert!((fwd.log_ratio.total() + back.log_ratio.total()).abs() < 1e-8);
            let a = back.state.saturated();
            assert!(a.iter().zip(s.saturated()).all(|(x, y)| (x - y).abs() < 1e-10));
        }
    }

    #[test]
    fn refresh_sets_auxiliary_length() {
        let kernel = CtpKernel::new(gaussian_pair([0.5, 0.5]), Arc::new(AnyContext(IdentityMap::new(2), 2)), IndexProposal::uniform(2)).unwrap();
        let mut s = TransModelState::new(0, vec![0.1]);
        kernel.refresh(&mut s, &mut stream(1, 1)).unwrap();
        assert_eq!(s.aux.as_ref().unwrap().len(), 1);
        assert!(kernel.transition(&TransModelState::new(0, vec![0.1]), 1, &[]).is_err());
    }
}
