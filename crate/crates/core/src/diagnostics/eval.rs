use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::BbeAccumulator;
use crate::error::{Error, Result};
use crate::flows::Transport;
use crate::grad::Tape;
use crate::reference::ReferenceDist;
use crate::rjmcmc::{JumpKernel, TransModelState};
use crate::rng::{open_unit, stream};
use crate::targets::TargetFamily;
use crate::vi::augmented_log_target;

/// Where evaluation-set states come from; recorded in run manifests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalSource {
    /// Independent draws through maps that are exact for each conditional.
    ExactMap,
    /// Trained-flow draws corrected by an independence Metropolis-Hastings chain.
    FlowIndependence,
    /// Evenly thinned states of a long chain.
    ChainThinning,
}

/// Batch of pushed reference draws with their log importance weights.
fn flow_draws(
    family: &TargetFamily,
    map: &dyn Transport,
    k: usize,
    conditional: bool,
    n: usize,
    seed: u64,
    first_row: u64,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let model = family.model(k)?;
    let reference = if conditional { ReferenceDist::StandardGaussian } else { map.reference() };
    let z = reference.sample(map.dim(), n, seed, first_row)?;
    let mut tape = Tape::no_grad();
    let zn = tape.leaf(z);
    let ctx = conditional.then_some(k);
    let (x, ld) = map.push(&mut tape, zn, ctx)?;
    let lz = reference.log_density_tape(&mut tape, zn);
    let lp = if conditional {
        augmented_log_target(&mut tape, model, x)?
    } else {
        model.density.log_density(&mut tape, x)?
    };
    let lw = tape.add(lp, ld);
    let lw = tape.sub(lw, lz);
    let w: Vec<f64> = tape.value(lw).iter().map(|v| if v.is_nan() { f64::NEG_INFINITY } else { *v }).collect();
    Ok((tape.value(x).clone(), w))
}

fn state_from_row(family: &TargetFamily, k: usize, row: &[f64]) -> TransModelState {
    let d = family.models[k].dim;
    TransModelState {
        k,
        theta: row[..d].to_vec(),
        aux: (row.len() > d).then(|| row[d..].to_vec()),
    }
}

/// `n` independent states per model from maps that are exact for each conditional.
pub fn exact_map_states(family: &TargetFamily, maps: &[Arc<dyn Transport>], n: usize, seed: u64) -> Result<Vec<Vec<TransModelState>>> {
    if maps.len() != family.len() {
        return Err(Error::Contract(format!("{} models but {} maps", family.len(), maps.len())));
    }
    (0..family.len())
        .map(|k| {
            if n == 0 {
                return Ok(Vec::new());
            }
            let z = maps[k].reference().sample(maps[k].dim(), n, seed, (k as u64) << 40)?;
            let mut tape = Tape::no_grad();
            let zn = tape.leaf(z);
            let (x, _) = maps[k].push(&mut tape, zn, None)?;
            Ok(tape.value(x).rows().into_iter().map(|r| state_from_row(family, k, &r.to_vec())).collect())
        })
        .collect()
}

/// `n` states per model from an independence Metropolis-Hastings chain whose
/// proposals are flow draws; `burn` extra steps are discarded first. With a
/// conditional map (`maps.len() == 1`, contexts = K) states carry auxiliaries.
pub fn flow_independence_states(
    family: &TargetFamily,
    maps: &[Arc<dyn Transport>],
    n: usize,
    burn: usize,
    seed: u64,
) -> Result<Vec<Vec<TransModelState>>> {
    let conditional = maps.len() == 1 && maps[0].contexts() == family.len() && family.len() > 1;
    if !conditional && maps.len() != family.len() {
        return Err(Error::Contract(format!("{} models but {} maps", family.len(), maps.len())));
    }
    (0..family.len())
        .map(|k| {
            if n == 0 {
                return Ok(Vec::new());
            }
            let map = if conditional { &maps[0] } else { &maps[k] };
            let total = n + burn;
            let (x, lw) = flow_draws(family, map.as_ref(), k, conditional, total, seed, (k as u64) << 40)?;
            let mut rng = stream(seed, (1u64 << 62) + k as u64);
            let mut cur = 0usize;
            let mut out = Vec::with_capacity(n);
            for i in 1..total {
                let log_r = lw[i] - lw[cur];
                if lw[cur] == f64::NEG_INFINITY || open_unit(&mut rng).ln() < log_r {
                    cur = i;
                }
                if i >= burn {
                    out.push(state_from_row(family, k, &x.row(cur).to_vec()));
                }
            }
            if burn == 0 {
                out.insert(0, state_from_row(family, k, &x.row(0).to_vec()));
            }
            if lw[cur] == f64::NEG_INFINITY {
                return Err(Error::Underflow(format!("no flow draw for model {k} has positive target density")));
            }
            Ok(out)
        })
        .collect()
}

/// Evenly spaced states of each model from chain traces, skipping the first
/// `burn_in` iterations of every trace (index 0 is the initial state).
pub fn thinned_chain_states(family: &TargetFamily, traces: &[Vec<TransModelState>], n: usize, burn_in: usize) -> Result<Vec<Vec<TransModelState>>> {
    (0..family.len())
        .map(|k| {
            let pool: Vec<&TransModelState> = traces
                .iter()
                .flat_map(|t| t.iter().skip(burn_in + 1))
                .filter(|s| s.k == k)
                .collect();
            if pool.len() < n {
                return Err(Error::InsufficientData {
                    from: k,
                    to: k,
                    reason: format!("chains visit model {k} {} times, {n} states requested", pool.len()),
                });
            }
            let stride = pool.len() as f64 / n.max(1) as f64;
            Ok((0..n)
                .map(|i| TransModelState::new(k, pool[(i as f64 * stride) as usize].theta.clone()))
                .collect())
        })
        .collect()
}

/// One proposal to a different model per evaluation state; the acceptance
/// probabilities populate a bridge-estimator accumulator.
pub fn build_eval_set(kernel: &dyn JumpKernel, states: &[Vec<TransModelState>], seed: u64) -> Result<BbeAccumulator> {
    let family = kernel.family();
    if states.len() != family.len() {
        return Err(Error::dim("evaluation states", family.len(), states.len()));
    }
    let q = kernel.index_proposal();
    let mut acc = BbeAccumulator::new(q.clone());
    for (k, set) in states.iter().enumerate() {
        for (i, s) in set.iter().enumerate() {
            if s.k != k {
                return Err(Error::Contract(format!("evaluation state for model {k} is in model {}", s.k)));
            }
            let mut rng = stream(seed, ((k as u64) << 40) + i as u64);
            let mut s = s.clone();
            kernel.refresh(&mut s, &mut rng)?;
            let to = q.draw_other(k, &mut rng)?;
            let fresh = kernel.draw_fresh(k, to, &mut rng);
            let p = kernel.transition(&s, to, &fresh)?;
            acc.push(k, to, p.log_ratio.accept_prob()?)?;
        }
    }
    Ok(acc)
}
