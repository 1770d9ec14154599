//! Diagonal Gaussian targets with known normalizing constants.

use std::sync::Arc;

use serde_json::json;

use super::{ModelDensity, ModelSpace, TargetFamily};
use crate::error::{Error, Result};
use crate::grad::{NodeId, Tape};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `Z * N(mean, diag(sd^2))` with `log Z = log_evidence`.
#[derive(Clone, Debug)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub log_evidence: f64,
}

impl DiagGaussian {
    pub fn standard(d: usize) -> Self {
        Self::new(vec![0.0; d], vec![1.0; d])
    }

    pub fn new(mean: Vec<f64>, sd: Vec<f64>) -> Self {
        assert_eq!(mean.len(), sd.len(), "mean and sd lengths differ");
        DiagGaussian {
            mean,
            sd,
            log_evidence: 0.0,
        }
    }

    pub fn with_log_evidence(mut self, log_z: f64) -> Self {
        self.log_evidence = log_z;
        self
    }
}

impl ModelDensity for DiagGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, tape: &mut Tape, theta: NodeId) -> Result<NodeId> {
        let d = self.dim();
        if tape.shape(theta).1 != d {
            return Err(Error::dim("gaussian density", d, tape.shape(theta).1));
        }
        let mu = tape.row(&self.mean);
        let inv: Vec<f64> = self.sd.iter().map(|s| 1.0 / s).collect();
        let inv = tape.row(&inv);
        let c = tape.sub(theta, mu);
        let w = tape.mul(c, inv);
        let sq = tape.square(w);
        let s = tape.sum_rows(sq);
        let s = tape.scale(s, -0.5);
        let norm = self.log_evidence - d as f64 * HALF_LN_2PI - self.sd.iter().map(|v| v.ln()).sum::<f64>();
        Ok(tape.add_scalar(s, norm))
    }

    fn log_density_point(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::dim("gaussian density", self.dim(), theta.len()));
        }
        Ok(self.log_evidence
            + theta
                .iter()
                .zip(self.mean.iter().zip(&self.sd))
                .map(|(x, (m, s))| -0.5 * ((x - m) / s).powi(2) - HALF_LN_2PI - s.ln())
                .sum::<f64>())
    }

    fn normalized(&self) -> bool {
        self.log_evidence == 0.0
    }
}

/// Two models (dimensions 1 and 2), both standard Gaussian, equal prior.
pub fn two_model_toy() -> TargetFamily {
    let models = vec![
        ModelSpace::new(0, "d=1", 2, vec![0], Arc::new(DiagGaussian::standard(1))).expect("consistent"),
        ModelSpace::new(1, "d=2", 2, vec![0, 1], Arc::new(DiagGaussian::standard(2))).expect("consistent"),
    ];
    TargetFamily::new("gaussian-toy", models, &[0.5, 0.5], json!({"conditionals": "standard normal"}))
        .expect("valid family")
}

/// A single-model family.
pub fn single(density: Arc<dyn ModelDensity>, label: &str) -> TargetFamily {
    let d = density.dim();
    let m = ModelSpace::new(0, label, d, (0..d).collect(), density).expect("consistent");
    TargetFamily::new(label, vec![m], &[1.0], json!({})).expect("valid family")
}
