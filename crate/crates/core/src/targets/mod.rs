//! Trans-dimensional targets: a family of models, each with a parameter
//! dimension, an unnormalized conditional log-density `log pi(theta, y | k)`,
//! and a prior weight `pi(k)`.

pub mod data;
pub mod factor;
pub mod gaussian;
pub mod sas;
pub mod varsel;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grad::{NodeId, Tape};

/// Unnormalized conditional log-density of one model, over unconstrained
/// coordinates (any positivity transform and its log-Jacobian are included).
pub trait ModelDensity: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Row-wise `log pi(theta, y | k)` for a `b x dim` node, as `b x 1`.
    fn log_density(&self, tape: &mut Tape, theta: NodeId) -> Result<NodeId>;

    /// Same value for one point, computed without the tape.
    fn log_density_point(&self, theta: &[f64]) -> Result<f64>;

    /// Natural (constrained) parameters for an unconstrained point.
    fn constrain(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    /// True when the conditional integrates to one, so its evidence is 1.
    fn normalized(&self) -> bool {
        false
    }
}

/// One model of a family.
#[derive(Clone, Debug)]
pub struct ModelSpace {
    pub index: usize,
    pub label: String,
    pub dim: usize,
    /// Saturated-space mask: `true` where the model's own parameters sit.
    /// Active coordinates occupy the first `dim` positions.
    pub mask: Vec<bool>,
    /// Canonical parameter position of each coordinate of `theta`, used by
    /// the block-switching saturated sampler.
    pub slots: Vec<usize>,
    pub density: Arc<dyn ModelDensity>,
}

impl ModelSpace {
    pub fn new(index: usize, label: impl Into<String>, d_max: usize, slots: Vec<usize>, density: Arc<dyn ModelDensity>) -> Result<Self> {
        let dim = density.dim();
        if slots.len() != dim || slots.iter().any(|&s| s >= d_max) || dim > d_max {
            return Err(Error::dim("model slots", dim, slots.len()));
        }
        Ok(ModelSpace {
            index,
            label: label.into(),
            dim,
            mask: (0..d_max).map(|i| i < dim).collect(),
            slots,
            density,
        })
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::dim("model parameters", self.dim, theta.len()));
        }
        Ok(())
    }
}

/// A set of competing models with prior probabilities.
#[derive(Clone, Debug)]
pub struct TargetFamily {
    pub name: String,
    pub models: Vec<ModelSpace>,
    pub log_prior: Vec<f64>,
    pub d_max: usize,
    /// Hyperparameters recorded in run manifests.
    pub hyper: serde_json::Value,
}

impl TargetFamily {
    pub fn new(
        name: impl Into<String>,
        models: Vec<ModelSpace>,
        prior: &[f64],
        hyper: serde_json::Value,
    ) -> Result<Self> {
        if models.len() != prior.len() || models.is_empty() {
            return Err(Error::dim("model prior", models.len(), prior.len()));
        }
        let total: f64 = prior.iter().sum();
        if (total - 1.0).abs() > 1e-12 || prior.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Config(format!("model prior must be positive and sum to 1, got {prior:?}")));
        }
        let d_max = models.iter().map(|m| m.dim).max().unwrap_or(0);
        for (i, m) in models.iter().enumerate() {
            if m.index != i || m.mask.len() != d_max {
                return Err(Error::Contract(format!("model {i} registered inconsistently")));
            }
        }
        Ok(TargetFamily {
            name: name.into(),
            models,
            log_prior: prior.iter().map(|p| p.ln()).collect(),
            d_max,
            hyper,
        })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn model(&self, k: usize) -> Result<&ModelSpace> {
        self.models.get(k).ok_or(Error::UnknownModel(k))
    }

    pub fn prior(&self) -> Vec<f64> {
        self.log_prior.iter().map(|l| l.exp()).collect()
    }

    /// `log pi(k) + log pi(theta, y | k)`.
    pub fn log_joint(&self, k: usize, theta: &[f64]) -> Result<f64> {
        let m = self.model(k)?;
        m.check_theta(theta)?;
        Ok(self.log_prior[k] + m.density.log_density_point(theta)?)
    }

    pub fn labels(&self) -> Vec<String> {
        self.models.iter().map(|m| m.label.clone()).collect()
    }

    pub fn summary(&self) -> FamilySummary {
        FamilySummary {
            name: self.name.clone(),
            labels: self.labels(),
            dims: self.models.iter().map(|m| m.dim).collect(),
            prior: self.prior(),
            hyper: self.hyper.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FamilySummary {
    pub name: String,
    pub labels: Vec<String>,
    pub dims: Vec<usize>,
    pub prior: Vec<f64>,
    pub hyper: serde_json::Value,
}
