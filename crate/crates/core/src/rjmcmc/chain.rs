use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{JumpKernel, TransModelState, WithinModel};
use crate::error::{Error, Result};
use crate::rng::{categorical, derive_seed, open_unit, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub iterations: usize,
    pub chains: usize,
    /// Fraction of iterations discarded before computing summaries.
    pub burn_in: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 100_000,
            chains: 3,
            burn_in: 0.1,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::Config(format!("burn_in must lie in [0, 1), got {}", self.burn_in)));
        }
        if self.chains == 0 {
            return Err(Error::Config("chains must be >= 1".into()));
        }
        Ok(())
    }

    pub fn burn_in_iterations(&self) -> usize {
        (self.burn_in * self.iterations as f64).floor() as usize
    }
}

/// A between-model kernel with an optional within-model update applied after
/// every jump.
#[derive(Clone, Copy)]
pub struct Sampler<'a> {
    pub jump: &'a dyn JumpKernel,
    pub within: Option<&'a WithinModel>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub from: usize,
    pub to: usize,
    pub alpha: f64,
    pub accepted: bool,
}

/// Trace of one chain: the initial state followed by the state after each iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub seed: u64,
    pub kernel: String,
    pub d_max: usize,
    pub ks: Vec<usize>,
    pub thetas: Vec<Vec<f64>>,
    pub moves: Vec<MoveRecord>,
    /// Mean within-model acceptance probability per iteration.
    pub within_accept: Vec<Option<f64>>,
}

impl ChainRecord {
    pub fn iterations(&self) -> usize {
        self.moves.len()
    }

    /// Mean acceptance probability over proposals that change the model.
    pub fn jump_acceptance(&self) -> Option<f64> {
        let (s, n) = self
            .moves
            .iter()
            .filter(|m| m.from != m.to)
            .fold((0.0, 0usize), |(s, n), m| (s + m.alpha, n + 1));
        (n > 0).then(|| s / n as f64)
    }

    /// Count and mean acceptance probability per ordered pair `(from, to)`.
    pub fn acceptance_summary(&self) -> BTreeMap<(usize, usize), (usize, f64)> {
        let mut out: BTreeMap<(usize, usize), (usize, f64)> = BTreeMap::new();
        for m in &self.moves {
            let e = out.entry((m.from, m.to)).or_default();
            e.0 += 1;
            e.1 += m.alpha;
        }
        for v in out.values_mut() {
            v.1 /= v.0 as f64;
        }
        out
    }

    /// Fraction of post-burn-in iterations spent in each of `k` models.
    pub fn model_frequencies(&self, k: usize, burn_in: usize) -> Vec<f64> {
        let mut c = vec![0.0; k];
        let kept = &self.ks[(burn_in + 1).min(self.ks.len())..];
        for &m in kept {
            if m < k {
                c[m] += 1.0;
            }
        }
        let n = kept.len().max(1) as f64;
        c.iter().map(|v| v / n).collect()
    }

    /// Delimited trace: `iter,k,theta_0..theta_{d_max-1},accept_prob,move_kind`,
    /// unused coordinates written as `NA`. Row 0 is the initial state.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,k");
        for i in 0..self.d_max {
            let _ = write!(s, ",theta_{i}");
        }
        s.push_str(",accept_prob,move_kind\n");
        for (i, (k, theta)) in self.ks.iter().zip(&self.thetas).enumerate() {
            let _ = write!(s, "{i},{k}");
            for j in 0..self.d_max {
                match theta.get(j) {
                    Some(v) => {
                        let _ = write!(s, ",{v}");
                    }
                    None => s.push_str(",NA"),
                }
            }
            if i == 0 {
                s.push_str(",NA,init\n");
            } else {
                let m = &self.moves[i - 1];
                let suffix = if m.from == m.to { "-self" } else { "" };
                let _ = writeln!(s, ",{},{}{suffix}", m.alpha, self.kernel);
            }
        }
        s
    }

    /// Visited states, starting with the initial one.
    pub fn states(&self) -> Vec<TransModelState> {
        self.ks.iter().zip(&self.thetas).map(|(&k, t)| TransModelState::new(k, t.clone())).collect()
    }

    /// Parse the `(iter, k)` columns of a trace written by [`ChainRecord::to_csv`].
    pub fn model_indices_from_csv(text: &str) -> Result<Vec<usize>> {
        Ok(Self::states_from_csv(text)?.into_iter().map(|s| s.k).collect())
    }

    /// Parse the states of a trace written by [`ChainRecord::to_csv`].
    pub fn states_from_csv(text: &str) -> Result<Vec<TransModelState>> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty trace file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 4 || cols[0] != "iter" || cols[1] != "k" {
            return Err(Error::Data(format!("malformed trace header: {header}")));
        }
        let d_max = cols.len() - 4;
        lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let line = i + 2;
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != cols.len() {
                    return Err(Error::Data(format!("trace line {line}: expected {} fields, got {}", cols.len(), f.len())));
                }
                let k = f[1]
                    .parse::<usize>()
                    .map_err(|_| Error::Data(format!("trace line {line}: bad model index {:?}", f[1])))?;
                let theta = f[2..2 + d_max]
                    .iter()
                    .take_while(|c| **c != "NA")
                    .map(|c| c.parse::<f64>().map_err(|_| Error::Data(format!("trace line {line}: bad value {c:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                Ok(TransModelState::new(k, theta))
            })
            .collect()
    }
}

/// Run one chain. Without `init`, the model is drawn from its prior and the
/// kernel's reference-mode state is used.
pub fn run_chain(sampler: Sampler<'_>, init: Option<TransModelState>, iterations: usize, seed: u64) -> Result<ChainRecord> {
    let family = sampler.jump.family();
    let mut rng = stream(seed, 0);
    let mut state = match init {
        Some(s) => s,
        None => sampler.jump.init(categorical(&mut rng, &family.prior()))?,
    };
    state.check(family)?;
    let mut rec = ChainRecord {
        seed,
        kernel: sampler.jump.name().to_string(),
        d_max: family.d_max,
        ks: Vec::with_capacity(iterations + 1),
        thetas: Vec::with_capacity(iterations + 1),
        moves: Vec::with_capacity(iterations),
        within_accept: Vec::with_capacity(iterations),
    };
    rec.ks.push(state.k);
    rec.thetas.push(state.theta.clone());
    for it in 1..=iterations {
        let dump = |e: Error, s: &TransModelState| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("{m} (iteration {it}, state {s:?})")),
            other => other,
        };
        let from = state.k;
        let prop = sampler.jump.propose(&mut state, &mut rng).map_err(|e| dump(e, &state))?;
        let alpha = prop.log_ratio.accept_prob().map_err(|e| dump(e, &state))?;
        let to = prop.state.k;
        let accepted = open_unit(&mut rng) < alpha;
        if accepted {
            state = prop.state;
        }
        rec.moves.push(MoveRecord {
            from,
            to,
            alpha,
            accepted,
        });
        let w = match sampler.within {
            Some(w) => {
                let p = w.update(family, &mut state, &mut rng).map_err(|e| dump(e, &state))?;
                (!p.is_empty()).then(|| p.iter().sum::<f64>() / p.len() as f64)
            }
            None => None,
        };
        rec.within_accept.push(w);
        rec.ks.push(state.k);
        rec.thetas.push(state.theta.clone());
    }
    Ok(rec)
}

/// Independent chains in parallel; chain `i` uses a seed derived from `(seed, i)`.
pub fn run_chains(sampler: Sampler<'_>, chains: usize, iterations: usize, seed: u64) -> Result<Vec<ChainRecord>> {
    (0..chains)
        .into_par_iter()
        .map(|i| run_chain(sampler, None, iterations, derive_seed(seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::flows::Transport;
    use crate::rjmcmc::{IndexProposal, TrjKernel};
    use crate::targets::sas;

    fn exact() -> TrjKernel {
        let maps: Vec<Arc<dyn Transport>> = (0..2).map(|k| Arc::new(sas::exact_map(k).unwrap()) as Arc<dyn Transport>).collect();
        TrjKernel::new(sas::family(), maps, IndexProposal::fixed(&sas::INDEX_PROPOSAL).unwrap()).unwrap()
    }

    #[test]
    fn zero_iterations_keep_init_only() {
        let k = exact();
        let rec = run_chain(Sampler { jump: &k, within: None }, None, 0, 1).unwrap();
        assert_eq!(rec.ks.len(), 1);
        assert!(rec.moves.is_empty());
        assert_eq!(rec.to_csv().lines().count(), 2);
    }

    #[test]
    fn same_seed_same_record() {
        let k = exact();
        let s = Sampler { jump: &k, within: None };
        let a = run_chain(s, None, 500, 9).unwrap();
        let b = run_chain(s, None, 500, 9).unwrap();
        assert_eq!(a, b);
        let chains = run_chains(s, 3, 50, 9).unwrap();
        assert_ne!(chains[0].ks, chains[1].ks);
    }

    #[test]
    fn csv_round_trips_model_indices() {
        let k = exact();
        let rec = run_chain(Sampler { jump: &k, within: None }, None, 100, 2).unwrap();
        let csv = rec.to_csv();
        assert!(csv.starts_with("iter,k,theta_0,theta_1,accept_prob,move_kind\n"));
        assert_eq!(ChainRecord::model_indices_from_csv(&csv).unwrap(), rec.ks);
        assert_eq!(ChainRecord::states_from_csv(&csv).unwrap(), rec.states());
        assert!(matches!(ChainRecord::model_indices_from_csv("iter,k,x,y\n0,a,1,2\n"), Err(Error::Data(_))));
    }

    #[test]
    fn within_updates_never_change_model() {
        let k = exact();
        let w = WithinModel::identity(k.family(), Default::default(), 3).unwrap();
        let rec = run_chain(Sampler { jump: &k, within: Some(&w) }, None, 300, 4).unwrap();
        for (i, m) in rec.moves.iter().enumerate() {
            let after_jump = if m.accepted { m.to } else { m.from };
            assert_eq!(rec.ks[i + 1], after_jump);
        }
    }
}
