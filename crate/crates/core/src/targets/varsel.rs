//! Robust linear regression with variable selection. Errors follow the
//! mixture `w N(0, 1) + (1 - w) N(0, 100)`, coefficients have `N(0, 100)`
//! priors, and models have the form `(1, k1, k2, k2)`: the intercept is
//! always in, `beta_1` is toggled alone, `beta_2, beta_3` together.

use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ModelDensity, ModelSpace, TargetFamily};
use crate::error::{Error, Result};
use crate::grad::{NodeId, Tape};
use crate::reference::ReferenceDist;

/// Observations in the default simulated data set.
pub const DEFAULT_N: usize = 80;
/// Seed of the default simulated data set.
pub const SYNTHETIC_SEED: u64 = 80_500;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Inclusion patterns of the four models, in registry order.
pub const MODELS: [[bool; 4]; 4] = [
    [true, false, false, false],
    [true, true, false, false],
    [true, false, true, true],
    [true, true, true, true],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VsHyper {
    /// Weight of the unit-variance error component.
    pub mixture_weight: f64,
    pub narrow_var: f64,
    pub wide_var: f64,
    pub coef_prior_var: f64,
}

impl Default for VsHyper {
    fn default() -> Self {
        VsHyper {
            mixture_weight: 0.9,
            narrow_var: 1.0,
            wide_var: 100.0,
            coef_prior_var: 100.0,
        }
    }
}

impl VsHyper {
    pub fn validate(&self) -> Result<()> {
        let w = self.mixture_weight;
        if !(w > 0.0 && w < 1.0) || !(self.narrow_var > 0.0 && self.wide_var > 0.0 && self.coef_prior_var > 0.0) {
            return Err(Error::Config(format!("invalid variable-selection hyperparameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VsData {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl VsData {
    /// Rows of `x1 x2 x3 y`; the intercept column is added.
    pub fn from_columns(m: &Array2<f64>) -> Result<Self> {
        if m.ncols() != 4 || m.nrows() == 0 {
            return Err(Error::Data(format!("variable-selection data needs rows of 4 columns (x1 x2 x3 y), found {:?}", m.dim())));
        }
        let n = m.nrows();
        let mut x = Array2::ones((n, 4));
        x.slice_mut(ndarray::s![.., 1..]).assign(&m.slice(ndarray::s![.., ..3]));
        Ok(VsData { x, y: m.column(3).to_owned() })
    }
}

/// Simulated regression data: intercept column of ones, other covariates
/// `N(0, 1)`; the first half uses `(beta0, beta1) = (1, 1)`, the rest
/// `(6, 1)`; `beta2 = beta3 = 0`; noise `N(0, 25)`.
pub fn simulate(seed: u64, n: usize) -> VsData {
    let draws = ReferenceDist::StandardGaussian
        .sample(4, n.max(1), seed, 0)
        .expect("positive sizes");
    let mut x = Array2::ones((n, 4));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        for j in 1..4 {
            x[[i, j]] = draws[[i, j - 1]];
        }
        let b0 = if i < n / 2 { 1.0 } else { 6.0 };
        y[i] = b0 + x[[i, 1]] + 5.0 * draws[[i, 3]];
    }
    VsData { x, y }
}

#[derive(Debug)]
pub struct VsDensity {
    active: Vec<usize>,
    /// Transposed active design, `d x n`.
    xt: Array2<f64>,
    y_row: Array2<f64>,
    hyper: VsHyper,
}

impl VsDensity {
    pub fn new(pattern: &[bool; 4], data: &VsData, hyper: VsHyper) -> Result<Self> {
        hyper.validate()?;
        if data.x.ncols() != 4 || data.x.nrows() != data.y.len() {
            return Err(Error::dim(
                "design matrix",
                format!("n x 4 with n = {}", data.y.len()),
                format!("{} x {}", data.x.nrows(), data.x.ncols()),
            ));
        }
        let active: Vec<usize> = (0..4).filter(|&i| pattern[i]).collect();
        let xt = data.x.select(Axis(1), &active).reversed_axes().as_standard_layout().to_owned();
        Ok(VsDensity {
            active,
            xt,
            y_row: data.y.clone().insert_axis(Axis(0)),
            hyper,
        })
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    fn comps(&self) -> (f64, f64, f64, f64) {
        let h = &self.hyper;
        let c1 = h.mixture_weight.ln() - 0.5 * (LN_2PI + h.narrow_var.ln());
        let c2 = (1.0 - h.mixture_weight).ln() - 0.5 * (LN_2PI + h.wide_var.ln());
        (c1, -0.5 / h.narrow_var, c2, -0.5 / h.wide_var)
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

impl ModelDensity for VsDensity {
    fn dim(&self) -> usize {
        self.active.len()
    }

    fn log_density(&self, tape: &mut Tape, theta: NodeId) -> Result<NodeId> {
        let d = self.dim();
        if tape.shape(theta).1 != d {
            return Err(Error::dim("variable-selection density", d, tape.shape(theta).1));
        }
        let (c1, s1, c2, s2) = self.comps();
        let xt = tape.leaf(self.xt.clone());
        let y = tape.leaf(self.y_row.clone());
        let fit = tape.matmul(theta, xt)?;
        let r = tape.sub(y, fit);
        let r2 = tape.square(r);
        let a = tape.scale(r2, s1);
        let a = tape.add_scalar(a, c1);
        let b = tape.scale(r2, s2);
        let b = tape.add_scalar(b, c2);
        let lik = tape.log_add_exp(a, b);
        let lik = tape.sum_rows(lik);
        let v = self.hyper.coef_prior_var;
        let t2 = tape.square(theta);
        let prior = tape.sum_rows(t2);
        let prior = tape.scale(prior, -0.5 / v);
        let prior = tape.add_scalar(prior, -0.5 * d as f64 * (LN_2PI + v.ln()));
        Ok(tape.add(lik, prior))
    }

    fn log_density_point(&self, theta: &[f64]) -> Result<f64> {
        let d = self.dim();
        if theta.len() != d {
            return Err(Error::dim("variable-selection density", d, theta.len()));
        }
        let (c1, s1, c2, s2) = self.comps();
        let mut lik = 0.0;
        for i in 0..self.y_row.ncols() {
            let fit: f64 = (0..d).map(|j| theta[j] * self.xt[[j, i]]).sum();
            let r = self.y_row[[0, i]] - fit;
            lik += log_add_exp(c1 + s1 * r * r, c2 + s2 * r * r);
        }
        let v = self.hyper.coef_prior_var;
        let prior: f64 = theta.iter().map(|b| -0.5 * (LN_2PI + v.ln()) - 0.5 * b * b / v).sum();
        Ok(lik + prior)
    }
}

pub fn label(pattern: &[bool; 4]) -> String {
    let bits: Vec<&str> = pattern.iter().map(|&b| if b { "1" } else { "0" }).collect();
    format!("({})", bits.join(","))
}

/// The four-model family with a uniform model prior.
pub fn family(data: &VsData, hyper: &VsHyper) -> Result<TargetFamily> {
    let models = MODELS
        .iter()
        .enumerate()
        .map(|(i, pat)| {
            let density = Arc::new(VsDensity::new(pat, data, hyper.clone())?);
            let slots = density.active().to_vec();
            ModelSpace::new(i, label(pat), 4, slots, density)
        })
        .collect::<Result<Vec<_>>>()?;
    TargetFamily::new(
        "variable-selection",
        models,
        &[0.25; 4],
        json!({
            "observations": data.y.len(),
            "mixture_weight": hyper.mixture_weight,
            "narrow_var": hyper.narrow_var,
            "wide_var": hyper.wide_var,
            "coef_prior_var": hyper.coef_prior_var,
            "inclusion_prior": 0.5,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_dimensions() {
        let fam = family(&simulate(1, DEFAULT_N), &VsHyper::default()).unwrap();
        let dims: Vec<usize> = fam.models.iter().map(|m| m.dim).collect();
        assert_eq!(dims, vec![1, 2, 3, 4]);
        assert_eq!(fam.models[2].slots, vec![0, 2, 3]);
        assert_eq!(fam.labels()[3], "(1,1,1,1)");
    }

    #[test]
    fn zero_data_zero_coefficients() {
        let data = VsData {
            x: Array2::zeros((3, 4)),
            y: Array1::zeros(3),
        };
        let h = VsHyper::default();
        let dens = VsDensity::new(&MODELS[1], &data, h.clone()).unwrap();
        let w = h.mixture_weight;
        let phi0 = |v: f64| (-0.5 * (LN_2PI + v.ln())).exp();
        let per_obs = (w * phi0(1.0) + (1.0 - w) * phi0(100.0)).ln();
        let prior = 2.0 * (-0.5 * (LN_2PI + 100f64.ln()));
        let got = dens.log_density_point(&[0.0, 0.0]).unwrap();
        assert!((got - (3.0 * per_obs + prior)).abs() < 1e-12);
    }

    #[test]
    fn simulation_properties() {
        let a = simulate(9, DEFAULT_N);
        assert_eq!(a, simulate(9, DEFAULT_N));
        assert!(a.x.column(0).iter().all(|&v| v == 1.0));
        // E[y] = 3.5; sd(mean) <= sqrt(25 + 1 + 6.25) / sqrt(80) ~ 0.63
        let m = a.y.mean().unwrap();
        assert!((m - 3.5).abs() < 3.0 * (32.25f64 / 80.0).sqrt(), "{m}");
    }

    #[test]
    fn invalid_weight_is_config_error() {
        let h = VsHyper {
            mixture_weight: 1.0,
            ..VsHyper::default()
        };
        assert!(matches!(family(&simulate(1, 10), &h), Err(Error::Config(_))));
    }
}
