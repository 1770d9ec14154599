use serde::Serialize;

use super::elbo::augmented_log_target;
use crate::error::{Error, Result};
use crate::flows::Transport;
use crate::grad::Tape;
use crate::reference::ReferenceDist;
use crate::targets::{ModelDensity, TargetFamily};

/// Rows evaluated per tape when estimating evidence.
const CHUNK: usize = 2048;

/// Importance-sampling estimate of a normalizing constant.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Evidence {
    pub samples: usize,
    pub log_estimate: f64,
    /// `exp(log_estimate)`; may overflow or underflow for large data sets.
    pub estimate: f64,
    /// Standard error of `estimate`.
    pub std_error: f64,
    /// `std_error / estimate`, well defined even when `estimate` is not representable.
    pub rel_std_error: f64,
    /// Mean log-weight, i.e. a Monte Carlo ELBO.
    pub elbo: f64,
}

impl Evidence {
    /// Summarize log importance weights in log space.
    pub fn from_log_weights(log_w: &[f64]) -> Result<Self> {
        let n = log_w.len();
        if n == 0 {
            return Err(Error::Contract("no importance weights".into()));
        }
        if log_w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite("importance weight".into()));
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Underflow("all importance weights are zero".into()));
        }
        let scaled: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let mean = scaled.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            scaled.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let rel = var.sqrt() / (n as f64).sqrt() / mean;
        let log_estimate = max + mean.ln();
        let estimate = log_estimate.exp();
        Ok(Evidence {
            samples: n,
            log_estimate,
            estimate,
            std_error: rel * estimate,
            rel_std_error: rel,
            elbo: log_w.iter().sum::<f64>() / n as f64,
        })
    }
}

/// Log importance weights `log pi(T(z), y) - log q(T(z))` for `m` reference draws.
pub fn log_weights(map: &dyn Transport, density: &dyn ModelDensity, m: usize, seed: u64) -> Result<Vec<f64>> {
    if map.dim() != density.dim() {
        return Err(Error::dim("evidence", density.dim(), map.dim()));
    }
    let reference = map.reference();
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    while start < m {
        let n = CHUNK.min(m - start);
        let z = reference.sample(map.dim(), n, seed, start as u64)?;
        let mut tape = Tape::no_grad();
        let zn = tape.leaf(z);
        let (x, ld) = map.push(&mut tape, zn, None)?;
        let lz = reference.log_density_tape(&mut tape, zn);
        let lp = density.log_density(&mut tape, x)?;
        let lw = tape.add(lp, ld);
        let lw = tape.sub(lw, lz);
        out.extend(tape.value(lw).iter().copied());
        start += n;
    }
    Ok(out)
}

/// `pi(y | k)` estimated with `m` draws from a trained map.
pub fn estimate_evidence(map: &dyn Transport, density: &dyn ModelDensity, m: usize, seed: u64) -> Result<Evidence> {
    Evidence::from_log_weights(&log_weights(map, density, m, seed)?)
}

/// Evidence of model `k` using a conditional map over the saturated space;
/// auxiliary coordinates are scored under the standard Gaussian, which
/// integrates to one.
pub fn estimate_evidence_conditional(
    map: &dyn Transport,
    family: &TargetFamily,
    k: usize,
    m: usize,
    seed: u64,
) -> Result<Evidence> {
    let model = family.model(k)?;
    if map.dim() != family.d_max {
        return Err(Error::dim("conditional evidence", family.d_max, map.dim()));
    }
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    while start < m {
        let n = CHUNK.min(m - start);
        let z = ReferenceDist::StandardGaussian.sample(map.dim(), n, seed, start as u64)?;
        let mut tape = Tape::no_grad();
        let zn = tape.leaf(z);
        let (x, ld) = map.push(&mut tape, zn, Some(k))?;
        let lz = ReferenceDist::StandardGaussian.log_density_tape(&mut tape, zn);
        let lp = augmented_log_target(&mut tape, model, x)?;
        let lw = tape.add(lp, ld);
        let lw = tape.sub(lw, lz);
        out.extend(tape.value(lw).iter().copied());
        start += n;
    }
    Evidence::from_log_weights(&out)
}

/// Posterior model probabilities from evidences:
/// `q(k) = Z_k pi(k) / sum_j Z_j pi(j)`.
pub fn rejection_free_index_proposal(evidences: &[f64], priors: &[f64]) -> Result<Vec<f64>> {
    if evidences.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Domain(format!("evidences must be positive, got {evidences:?}")));
    }
    let logs: Vec<f64> = evidences.iter().map(|e| e.ln()).collect();
    rejection_free_from_log(&logs, priors)
}

/// As [`rejection_free_index_proposal`], from log-evidences.
pub fn rejection_free_from_log(log_evidences: &[f64], priors: &[f64]) -> Result<Vec<f64>> {
    if log_evidences.len() != priors.len() || priors.is_empty() {
        return Err(Error::dim("index proposal", priors.len(), log_evidences.len()));
    }
    if priors.iter().any(|&p| !(p > 0.0)) || log_evidences.iter().any(|l| !l.is_finite()) {
        return Err(Error::Domain("priors must be positive and log-evidences finite".into()));
    }
    let a: Vec<f64> = log_evidences.iter().zip(priors).map(|(l, p)| l + p.ln()).collect();
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = a.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.iter().map(|v| v / s).collect())
}

/// Model weights implied by ELBO values: `exp(-neg_elbo_k) pi(k)`, normalized.
pub fn elbo_model_weights(neg_elbos: &[f64], priors: &[f64]) -> Result<Vec<f64>> {
    let logs: Vec<f64> = neg_elbos.iter().map(|v| -v).collect();
    rejection_free_from_log(&logs, priors)
}
