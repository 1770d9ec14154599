//! Mixing and accuracy diagnostics: running model probabilities, the bridge
//! estimator of model probabilities from cross-model acceptance rates, and
//! evaluation-set generation.

mod bbe;
mod eval;

pub use bbe::{bbe_estimate, BbeAccumulator, BbeOptions};
pub use eval::{build_eval_set, exact_map_states, flow_independence_states, thinned_chain_states, EvalSource};

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Running fraction of time in model `k`: entry `t - 1` is
/// `#{s <= t : ks[s] = k} / t`.
pub fn running_model_prob(ks: &[usize], k: usize, models: usize) -> Result<Vec<f64>> {
    if k >= models {
        return Err(Error::UnknownModel(k));
    }
    if ks.is_empty() {
        return Err(Error::Data("empty trace".into()));
    }
    let mut hits = 0usize;
    Ok(ks
        .iter()
        .enumerate()
        .map(|(t, &m)| {
            hits += usize::from(m == k);
            hits as f64 / (t + 1) as f64
        })
        .collect())
}

/// Running probabilities of every model: `iter,p_0,..,p_{K-1}`.
pub fn running_probs_csv(ks: &[usize], models: usize) -> Result<String> {
    let series = (0..models)
        .map(|k| running_model_prob(ks, k, models))
        .collect::<Result<Vec<_>>>()?;
    let mut s = String::from("iter");
    for k in 0..models {
        let _ = write!(s, ",p_{k}");
    }
    s.push('\n');
    for t in 0..ks.len() {
        let _ = write!(s, "{}", t + 1);
        for row in &series {
            let _ = write!(s, ",{}", row[t]);
        }
        s.push('\n');
    }
    Ok(s)
}

/// Replicate estimates as `replicate_id,model_id,probability`.
pub fn violin_csv(replicates: &[Vec<f64>]) -> String {
    let mut s = String::from("replicate_id,model_id,probability\n");
    for (r, probs) in replicates.iter().enumerate() {
        for (k, p) in probs.iter().enumerate() {
            let _ = writeln!(s, "{r},{k},{p}");
        }
    }
    s
}

/// Linear-interpolation quantile of `values` at level `p`.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let h = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn interquartile_range(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}

/// Total-variation distance between two probability vectors.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
