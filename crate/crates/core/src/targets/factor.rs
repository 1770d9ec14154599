//! Gaussian factor analysis with `k` factors on 6-dimensional observations:
//! `y_i ~ N_6(0, beta beta^T + Lambda)`, `beta` lower triangular `6 x k` with
//! positive diagonal, `Lambda` positive diagonal.
//!
//! Unconstrained coordinates are ordered column by column through the lower
//! triangle of `beta` (diagonal entry first in each column), then the six
//! `Lambda` entries. Diagonal `beta` entries and `Lambda` go through softplus.

use std::sync::Arc;

use nalgebra::{DMatrix, SMatrix};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;
use statrs::function::gamma::ln_gamma;

use super::{ModelDensity, ModelSpace, TargetFamily};
use crate::error::{Error, Result};
use crate::grad::{FusedOp, NodeId, Tape, Tensor};
use crate::reference::ReferenceDist;

pub const P: usize = 6;
/// Rows of an observation file and of the default synthetic set.
pub const DEFAULT_N: usize = 143;
pub const SYNTHETIC_SEED: u64 = 20_040_143;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

type M6 = SMatrix<f64, P, P>;

/// Number of free parameters with `k` factors.
pub fn dim(k: usize) -> usize {
    P * (k + 1) - k * (k.saturating_sub(1)) / 2
}

/// Prior hyperparameters. `Lambda_ii ~ IG(shape, scale)` with density
/// `scale^shape / Gamma(shape) * x^-(shape+1) * exp(-scale / x)`
/// (mean `scale / (shape - 1)`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaHyper {
    pub ig_shape: f64,
    pub ig_scale: f64,
    pub loading_sd: f64,
    pub factors: Vec<usize>,
}

impl Default for FaHyper {
    fn default() -> Self {
        FaHyper {
            ig_shape: 1.1,
            ig_scale: 0.05,
            loading_sd: 1.0,
            factors: vec![2, 3],
        }
    }
}

#[derive(Clone, Debug)]
struct Layout {
    k: usize,
    /// `(row, col)` of each loading coordinate.
    entries: Vec<(usize, usize)>,
    diag: Vec<usize>,
    off: Vec<usize>,
    lambda: Vec<usize>,
}

impl Layout {
    fn new(k: usize) -> Self {
        let mut entries = Vec::new();
        let (mut diag, mut off) = (Vec::new(), Vec::new());
        for j in 0..k {
            for i in j..P {
                if i == j {
                    diag.push(entries.len());
                } else {
                    off.push(entries.len());
                }
                entries.push((i, j));
            }
        }
        let nb = entries.len();
        Layout {
            k,
            entries,
            diag,
            off,
            lambda: (nb..nb + P).collect(),
        }
    }

    fn positive(&self) -> Vec<usize> {
        self.diag.iter().chain(&self.lambda).copied().collect()
    }

    fn dim(&self) -> usize {
        self.entries.len() + P
    }

    fn beta(&self, c: &[f64]) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(P, self.k);
        for (idx, &(i, j)) in self.entries.iter().enumerate() {
            b[(i, j)] = c[idx];
        }
        b
    }

    fn sigma(&self, c: &[f64]) -> M6 {
        let b = self.beta(c);
        let bb = &b * b.transpose();
        let mut s = M6::from_fn(|i, j| bb[(i, j)]);
        for (a, &idx) in self.lambda.iter().enumerate() {
            s[(a, a)] += c[idx];
        }
        s
    }
}

/// Data summary: `n` and the scatter matrix `C = Y^T Y`.
#[derive(Clone, Debug)]
pub struct Scatter {
    pub n: usize,
    pub c: M6,
}

impl Scatter {
    pub fn new(y: &Array2<f64>) -> Result<Self> {
        if y.ncols() != P {
            return Err(Error::Data(format!("factor data needs {P} columns, got {}", y.ncols())));
        }
        let c = M6::from_fn(|i, j| y.column(i).dot(&y.column(j)));
        Ok(Scatter { n: y.nrows(), c })
    }
}

/// `sum_i log N_6(y_i; 0, Sigma)` from the scatter matrix, with `dl/dSigma`.
fn loglik_and_grad(sigma: &M6, data: &Scatter, want_grad: bool) -> Option<(f64, Option<M6>)> {
    let chol = sigma.cholesky()?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inv = chol.inverse();
    let n = data.n as f64;
    let ll = -0.5 * n * P as f64 * LN_2PI - 0.5 * n * log_det - 0.5 * (inv * data.c).trace();
    let g = want_grad.then(|| {
        let g = -0.5 * n * inv + 0.5 * inv * data.c * inv;
        0.5 * (g + g.transpose())
    });
    Some((ll, g))
}

/// Gaussian log-likelihood with covariance `beta beta^T + Lambda` evaluated
/// at constrained parameters; returns `-inf` if Sigma is numerically not PD.
pub fn log_likelihood(beta: &DMatrix<f64>, lambda: &[f64], data: &Scatter) -> f64 {
    let bb = beta * beta.transpose();
    let mut s = M6::from_fn(|i, j| bb[(i, j)]);
    for (a, l) in lambda.iter().enumerate() {
        s[(a, a)] += l;
    }
    loglik_and_grad(&s, data, false).map_or(f64::NEG_INFINITY, |(ll, _)| ll)
}

#[derive(Debug)]
struct LikelihoodOp {
    layout: Layout,
    data: Scatter,
}

impl FusedOp for LikelihoodOp {
    fn name(&self) -> &'static str {
        "factor-likelihood"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let c = inputs[0];
        let mut out = Tensor::zeros(c.dim());
        for (r, row) in c.rows().into_iter().enumerate() {
            let row = row.to_vec();
            let sigma = self.layout.sigma(&row);
            let Some((_, Some(g))) = loglik_and_grad(&sigma, &self.data, true) else {
                continue;
            };
            let beta = self.layout.beta(&row);
            let g_dyn = DMatrix::from_fn(P, P, |i, j| g[(i, j)]);
            let gb = 2.0 * g_dyn * beta;
            let w = grad[[r, 0]];
            for (idx, &(i, j)) in self.layout.entries.iter().enumerate() {
                out[[r, idx]] = w * gb[(i, j)];
            }
            for (a, &idx) in self.layout.lambda.iter().enumerate() {
                out[[r, idx]] = w * g[(a, a)];
            }
        }
        vec![out]
    }
}

#[derive(Debug)]
pub struct FactorDensity {
    layout: Layout,
    data: Scatter,
    hyper: FaHyper,
    op: Arc<LikelihoodOp>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

impl FactorDensity {
    pub fn new(k: usize, data: Scatter, hyper: FaHyper) -> Result<Self> {
        if k == 0 || k > P {
            return Err(Error::UnknownModel(k));
        }
        if !(hyper.ig_shape > 0.0 && hyper.ig_scale > 0.0 && hyper.loading_sd > 0.0) {
            return Err(Error::Config("factor priors need positive hyperparameters".into()));
        }
        let layout = Layout::new(k);
        Ok(FactorDensity {
            op: Arc::new(LikelihoodOp {
                layout: layout.clone(),
                data: data.clone(),
            }),
            layout,
            data,
            hyper,
        })
    }

    pub fn factors(&self) -> usize {
        self.layout.k
    }

    /// Indices of the `Lambda` coordinates in `theta`.
    pub fn lambda_indices(&self) -> &[usize] {
        &self.layout.lambda
    }

    fn ig_const(&self) -> f64 {
        let (a, b) = (self.hyper.ig_shape, self.hyper.ig_scale);
        a * b.ln() - ln_gamma(a)
    }

    fn normal_const(&self) -> f64 {
        -0.5 * LN_2PI - self.hyper.loading_sd.ln()
    }
}

impl ModelDensity for FactorDensity {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density(&self, tape: &mut Tape, theta: NodeId) -> Result<NodeId> {
        let d = self.dim();
        if tape.shape(theta).1 != d {
            return Err(Error::dim("factor density", d, tape.shape(theta).1));
        }
        let pos = self.layout.positive();
        let raw_pos = tape.select_cols(theta, &pos);
        let sp = tape.softplus(raw_pos);
        let lsig = tape.log_sigmoid(raw_pos);
        let log_jac = tape.sum_rows(lsig);
        let off = tape.select_cols(theta, &self.layout.off);
        let c = tape.assemble_cols(&[(off, self.layout.off.clone()), (sp, pos.clone())], d)?;

        let value = {
            let cv = tape.value(c);
            let mut v = Tensor::zeros((cv.nrows(), 1));
            for (r, row) in cv.rows().into_iter().enumerate() {
                let sigma = self.layout.sigma(row.as_slice().expect("contiguous"));
                v[[r, 0]] = loglik_and_grad(&sigma, &self.data, false)
                    .map_or(f64::NEG_INFINITY, |(ll, _)| ll);
            }
            v
        };
        let ll = tape.fused(self.op.clone(), &[c], value);

        // beta priors: N(0, s^2) below the diagonal, half-normal on it
        let s2 = self.hyper.loading_sd.powi(2);
        let beta_cols: Vec<usize> = (0..self.layout.entries.len()).collect();
        let beta = tape.select_cols(c, &beta_cols);
        let bsq = tape.square(beta);
        let bsum = tape.sum_rows(bsq);
        let bprior = tape.scale(bsum, -0.5 / s2);
        let nb = self.layout.entries.len() as f64;
        let nd = self.layout.diag.len() as f64;
        let bprior = tape.add_scalar(bprior, nb * self.normal_const() + nd * std::f64::consts::LN_2);

        // Lambda ~ IG(a, b)
        let (a, b) = (self.hyper.ig_shape, self.hyper.ig_scale);
        let lam = tape.select_cols(c, &self.layout.lambda);
        let ll_lam = tape.log(lam);
        let t1 = tape.scale(ll_lam, -(a + 1.0));
        let inv = tape.recip(lam);
        let t2 = tape.scale(inv, -b);
        let ig = tape.add(t1, t2);
        let ig = tape.sum_rows(ig);
        let ig = tape.add_scalar(ig, P as f64 * self.ig_const());

        let total = tape.add(ll, bprior);
        let total = tape.add(total, ig);
        Ok(tape.add(total, log_jac))
    }

    fn log_density_point(&self, theta: &[f64]) -> Result<f64> {
        let c = self.constrain(theta);
        if theta.len() != self.dim() {
            return Err(Error::dim("factor density", self.dim(), theta.len()));
        }
        let pos = self.layout.positive();
        let log_jac: f64 = pos.iter().map(|&i| log_sigmoid(theta[i])).sum();
        let beta = self.layout.beta(&c);
        let lambda: Vec<f64> = self.layout.lambda.iter().map(|&i| c[i]).collect();
        let ll = log_likelihood(&beta, &lambda, &self.data);
        let s2 = self.hyper.loading_sd.powi(2);
        let bprior: f64 = (0..self.layout.entries.len())
            .map(|i| self.normal_const() - 0.5 * c[i] * c[i] / s2)
            .sum::<f64>()
            + self.layout.diag.len() as f64 * std::f64::consts::LN_2;
        let (a, b) = (self.hyper.ig_shape, self.hyper.ig_scale);
        let ig: f64 = lambda
            .iter()
            .map(|&l| self.ig_const() - (a + 1.0) * l.ln() - b / l)
            .sum();
        Ok(ll + bprior + ig + log_jac)
    }

    fn constrain(&self, theta: &[f64]) -> Vec<f64> {
        let mut c = theta.to_vec();
        for i in self.layout.positive() {
            if i < c.len() {
                c[i] = softplus(theta[i]);
            }
        }
        c
    }
}

/// `n` draws from a fixed two-factor model, generated from `seed`.
pub fn synthetic_data(seed: u64, n: usize) -> Array2<f64> {
    let beta = [
        [0.9, 0.0],
        [0.8, 0.6],
        [0.7, 0.5],
        [0.5, 0.7],
        [0.4, 0.8],
        [0.3, 0.6],
    ];
    let lambda_sd = [0.2f64, 0.25, 0.3, 0.2, 0.25, 0.3].map(f64::sqrt);
    let noise = ReferenceDist::StandardGaussian
        .sample(P + 2, n.max(1), seed, 0)
        .expect("positive sizes");
    Array2::from_shape_fn((n, P), |(r, i)| {
        let f = [noise[[r, P]], noise[[r, P + 1]]];
        beta[i][0] * f[0] + beta[i][1] * f[1] + lambda_sd[i] * noise[[r, i]]
    })
}

/// Factor-analysis family over the configured factor counts, uniform prior.
pub fn family(data: &Array2<f64>, hyper: &FaHyper) -> Result<TargetFamily> {
    let scatter = Scatter::new(data)?;
    if hyper.factors.is_empty() {
        return Err(Error::Config("factor family needs at least one model".into()));
    }
    let d_max = hyper.factors.iter().map(|&k| dim(k)).max().unwrap_or(0);
    let models = hyper
        .factors
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let density = Arc::new(FactorDensity::new(k, scatter.clone(), hyper.clone())?);
            ModelSpace::new(i, format!("{k} factors"), d_max, (0..dim(k)).collect(), density)
        })
        .collect::<Result<Vec<_>>>()?;
    let prior = vec![1.0 / models.len() as f64; models.len()];
    TargetFamily::new(
        "factor-analysis",
        models,
        &prior,
        json!({
            "observations": scatter.n,
            "lambda_prior": {"family": "inverse-gamma", "shape": hyper.ig_shape, "scale": hyper.ig_scale,
                             "convention": "mean = scale / (shape - 1)"},
            "loading_sd": hyper.loading_sd,
            "factors": hyper.factors,
        }),
    )
}
