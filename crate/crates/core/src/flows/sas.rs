use nalgebra::DMatrix;
use ndarray::Array2;

use super::Transport;
use crate::error::{Error, Result};
use crate::grad::{NodeId, Tape};
use crate::reference::ReferenceDist;

/// `S(y) = sinh((asinh(y) + eps) / delta)`.
pub fn sas_forward(y: f64, eps: f64, delta: f64) -> f64 {
    ((y.asinh() + eps) / delta).sinh()
}

/// `S^-1(x) = sinh(delta * asinh(x) - eps)`.
pub fn sas_inverse(x: f64, eps: f64, delta: f64) -> f64 {
    (delta * x.asinh() - eps).sinh()
}

/// Exact transport `T(z) = S(L z)` from `N(0, I)` onto a sinh-arcsinh
/// transformed Gaussian with covariance `L L^T`.
#[derive(Clone, Debug)]
pub struct SasExactMap {
    eps: Vec<f64>,
    delta: Vec<f64>,
    l: DMatrix<f64>,
    l_t: Array2<f64>,
    l_inv_t: Array2<f64>,
    log_det_l: f64,
}

impl SasExactMap {
    /// `l` is row-major lower triangular.
    pub fn new(eps: Vec<f64>, delta: Vec<f64>, l: &[Vec<f64>]) -> Result<Self> {
        let d = eps.len();
        if delta.len() != d || l.len() != d || l.iter().any(|r| r.len() != d) {
            return Err(Error::dim("SAS map parameters", d, format!("delta {}, L {}", delta.len(), l.len())));
        }
        if delta.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Constraint("SAS delta must be positive".into()));
        }
        let l = DMatrix::from_fn(d, d, |i, j| if j <= i { l[i][j] } else { 0.0 });
        let diag_min = l.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if diag_min == 0.0 || !diag_min.is_finite() {
            return Err(Error::Domain("SAS map L is singular".into()));
        }
        let inv = l
            .clone()
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or_else(|| Error::Domain("SAS map L is singular".into()))?;
        let to_nd = |m: &DMatrix<f64>| Array2::from_shape_fn((d, d), |(i, j)| m[(i, j)]);
        Ok(SasExactMap {
            l_t: to_nd(&l.transpose()),
            l_inv_t: to_nd(&inv.transpose()),
            log_det_l: l.diagonal().iter().map(|v| v.abs().ln()).sum(),
            eps,
            delta,
            l,
        })
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn log_det_l(&self) -> f64 {
        self.log_det_l
    }

    fn row_params(&self, tape: &mut Tape) -> (NodeId, NodeId) {
        let e = tape.row(&self.eps);
        let d = tape.row(&self.delta);
        (e, d)
    }
}

impl Transport for SasExactMap {
    fn dim(&self) -> usize {
        self.eps.len()
    }

    fn reference(&self) -> ReferenceDist {
        ReferenceDist::StandardGaussian
    }

    fn push(&self, tape: &mut Tape, z: NodeId, _ctx: Option<usize>) -> Result<(NodeId, NodeId)> {
        let cols = tape.shape(z).1;
        if cols != self.dim() {
            return Err(Error::dim("SAS exact map", self.dim(), cols));
        }
        let lt = tape.leaf(self.l_t.clone());
        let y = tape.matmul(z, lt)?;
        let (e, d) = self.row_params(tape);
        let a = tape.asinh(y);
        let ae = tape.add(a, e);
        let u = tape.div(ae, d);
        let x = tape.sinh(u);
        // per coordinate: log cosh(u) - log delta - 0.5 log(1 + y^2)
        let lc = tape.log_cosh(u);
        let y2 = tape.square(y);
        let y2 = tape.add_scalar(y2, 1.0);
        let ly = tape.log(y2);
        let ly = tape.scale(ly, -0.5);
        let ld = tape.add(lc, ly);
        let ld = tape.sum_rows(ld);
        let c = self.log_det_l - self.delta.iter().map(|v| v.ln()).sum::<f64>();
        Ok((x, tape.add_scalar(ld, c)))
    }

    fn pull(&self, tape: &mut Tape, x: NodeId, _ctx: Option<usize>) -> Result<(NodeId, NodeId)> {
        let cols = tape.shape(x).1;
        if cols != self.dim() {
            return Err(Error::dim("SAS exact map", self.dim(), cols));
        }
        let (e, d) = self.row_params(tape);
        let a = tape.asinh(x);
        let da = tape.mul(a, d);
        let v = tape.sub(da, e);
        let y = tape.sinh(v);
        let lit = tape.leaf(self.l_inv_t.clone());
        let z = tape.matmul(y, lit)?;
        // per coordinate: log delta + log cosh(v) - 0.5 log(1 + x^2)
        let lc = tape.log_cosh(v);
        let x2 = tape.square(x);
        let x2 = tape.add_scalar(x2, 1.0);
        let lx = tape.log(x2);
        let lx = tape.scale(lx, -0.5);
        let ld = tape.add(lc, lx);
        let ld = tape.sum_rows(ld);
        let c = self.delta.iter().map(|v| v.ln()).sum::<f64>() - self.log_det_l;
        Ok((z, tape.add_scalar(ld, c)))
    }
}
