//! Sinh-arcsinh transformed Gaussians: a one-dimensional and a strongly
//! correlated two-dimensional model with known exact transport maps.

use std::sync::Arc;

use serde_json::json;

use super::{ModelDensity, ModelSpace, TargetFamily};
use crate::error::{Error, Result};
use crate::flows::{SasExactMap, Transport};
use crate::grad::{NodeId, Tape};
use crate::reference::ReferenceDist;

pub const PRIOR: [f64; 2] = [0.25, 0.75];

/// Index proposal used with this family: `q(k' | k) = (1/4, 3/4)` for every `k`.
pub const INDEX_PROPOSAL: [f64; 2] = [0.25, 0.75];

pub fn exact_map(k: usize) -> Result<SasExactMap> {
    match k {
        0 => SasExactMap::new(vec![-2.0], vec![1.0], &[vec![1.0]]),
        1 => SasExactMap::new(
            vec![1.5, -2.0],
            vec![1.0, 1.5],
            &[vec![1.0, 0.0], vec![0.99, (1.0f64 - 0.99 * 0.99).sqrt()]],
        ),
        _ => Err(Error::UnknownModel(k)),
    }
}

/// Normalized conditional density `phi_{LL^T}(S^-1(theta)) |J_{S^-1}(theta)|`.
#[derive(Debug)]
pub struct SasDensity {
    map: SasExactMap,
}

impl SasDensity {
    pub fn new(map: SasExactMap) -> Self {
        SasDensity { map }
    }

    pub fn map(&self) -> &SasExactMap {
        &self.map
    }
}

impl ModelDensity for SasDensity {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn log_density(&self, tape: &mut Tape, theta: NodeId) -> Result<NodeId> {
        let (z, ld) = self.map.pull(tape, theta, None)?;
        let lz = ReferenceDist::StandardGaussian.log_density_tape(tape, z);
        Ok(tape.add(lz, ld))
    }

    fn log_density_point(&self, theta: &[f64]) -> Result<f64> {
        let d = self.dim();
        if theta.len() != d {
            return Err(Error::dim("SAS density", d, theta.len()));
        }
        let (eps, delta, l) = (self.map.eps(), self.map.delta(), self.map.l());
        let mut y = vec![0.0; d];
        let mut log_jac = 0.0;
        for i in 0..d {
            let v = delta[i] * theta[i].asinh() - eps[i];
            y[i] = v.sinh();
            log_jac += delta[i].ln() + v.cosh().ln() - 0.5 * theta[i].mul_add(theta[i], 1.0).ln();
        }
        // forward substitution w = L^-1 y
        let mut w = vec![0.0; d];
        for i in 0..d {
            let s: f64 = (0..i).map(|j| l[(i, j)] * w[j]).sum();
            w[i] = (y[i] - s) / l[(i, i)];
        }
        let quad: f64 = w.iter().map(|v| v * v).sum();
        let log_phi = -0.5 * quad - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - self.map.log_det_l();
        Ok(log_phi + log_jac)
    }

    fn normalized(&self) -> bool {
        true
    }
}

pub fn family() -> TargetFamily {
    let models = (0..2)
        .map(|k| {
            let density = Arc::new(SasDensity::new(exact_map(k).expect("fixed parameters")));
            ModelSpace::new(k, format!("k={}", k + 1), 2, (0..=k).collect(), density).expect("consistent")
        })
        .collect();
    TargetFamily::new(
        "sas",
        models,
        &PRIOR,
        json!({
            "eps": [[-2.0], [1.5, -2.0]],
            "delta": [[1.0], [1.0, 1.5]],
            "cov_offdiag_k2": 0.99,
            "prior": PRIOR,
        }),
    )
    .expect("valid family")
}
