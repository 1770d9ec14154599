use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rjmcmc::IndexProposal;

/// Acceptance probabilities of cross-model proposals, grouped by ordered
/// model pair, together with the index proposal that generated them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BbeAccumulator {
    q: IndexProposal,
    alphas: Vec<Vec<Vec<f64>>>,
}

impl BbeAccumulator {
    pub fn new(q: IndexProposal) -> Self {
        let k = q.len();
        BbeAccumulator {
            q,
            alphas: vec![vec![Vec::new(); k]; k],
        }
    }

    pub fn models(&self) -> usize {
        self.q.len()
    }

    pub fn index_proposal(&self) -> &IndexProposal {
        &self.q
    }

    pub fn push(&mut self, from: usize, to: usize, alpha: f64) -> Result<()> {
        let k = self.models();
        if from >= k || to >= k {
            return Err(Error::UnknownModel(from.max(to)));
        }
        if from == to {
            return Err(Error::Contract(format!("self-move {from}->{to} carries no Bayes-factor information")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Domain(format!("acceptance probability {alpha} outside [0, 1]")));
        }
        self.alphas[from][to].push(alpha);
        Ok(())
    }

    pub fn count(&self, from: usize, to: usize) -> usize {
        self.alphas[from][to].len()
    }

    /// Mean acceptance probability of `from -> to`, summed in sorted order so
    /// the value does not depend on insertion or merge order.
    pub fn mean(&self, from: usize, to: usize) -> Result<f64> {
        let a = &self.alphas[from][to];
        if a.is_empty() {
            return Err(Error::InsufficientData {
                from,
                to,
                reason: "no proposals recorded".into(),
            });
        }
        let mut s = a.clone();
        s.sort_by(f64::total_cmp);
        Ok(s.iter().sum::<f64>() / s.len() as f64)
    }

    /// Combine with an accumulator built under the same index proposal.
    pub fn merge(&mut self, other: &BbeAccumulator) -> Result<()> {
        if self.q != other.q {
            return Err(Error::Contract("cannot merge accumulators with different index proposals".into()));
        }
        for (a, b) in self.alphas.iter_mut().flatten().zip(other.alphas.iter().flatten()) {
            a.extend_from_slice(b);
        }
        Ok(())
    }

    /// Estimated posterior odds `p(i) / p(j)` from the balance
    /// `p(i) q(j|i) E_i[alpha(i->j)] = p(j) q(i|j) E_j[alpha(j->i)]`.
    pub fn odds(&self, i: usize, j: usize) -> Result<f64> {
        if i == j {
            return Ok(1.0);
        }
        let (a_ij, a_ji) = (self.mean(i, j)?, self.mean(j, i)?);
        if a_ij == 0.0 {
            return Err(Error::InsufficientData {
                from: i,
                to: j,
                reason: "every acceptance probability is zero".into(),
            });
        }
        Ok(self.q.prob(j, i) * a_ji / (self.q.prob(i, j) * a_ij))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BbeOptions {
    pub anchor: usize,
    /// Reweight the odds by `w(i) / w(j)`, e.g. to move from the sampler's
    /// model prior to another one.
    pub prior_reweight: Option<Vec<f64>>,
}

/// Model probabilities from pairwise odds against an anchor `j`:
/// `p(k) = B(j,k)^-1 (1 + sum_{i != j} B(i,j))^-1`, then normalized.
pub fn bbe_estimate(acc: &BbeAccumulator, opts: &BbeOptions) -> Result<Vec<f64>> {
    let k = acc.models();
    let j = opts.anchor;
    if j >= k {
        return Err(Error::UnknownModel(j));
    }
    let w = match &opts.prior_reweight {
        Some(w) if w.len() != k || w.iter().any(|&v| !(v > 0.0)) => {
            return Err(Error::Config(format!("prior reweighting needs {k} positive weights")))
        }
        Some(w) => w.clone(),
        None => vec![1.0; k],
    };
    let b = |a: usize, c: usize| -> Result<f64> { Ok(acc.odds(a, c)? * w[a] / w[c]) };
    let mut denom = 1.0;
    for i in (0..k).filter(|&i| i != j) {
        denom += b(i, j)?;
    }
    let mut p = Vec::with_capacity(k);
    for m in 0..k {
        let b_jm = b(j, m)?;
        p.push(1.0 / (b_jm * denom));
    }
    let s: f64 = p.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::NonFinite(format!("bridge estimate {p:?}")));
    }
    Ok(p.iter().map(|v| v / s).collect())
}
