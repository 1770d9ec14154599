//! Univariate reference distributions and their independent products.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::grad::{NodeId, Tape};
use crate::rng::{open_unit, stream};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferenceDist {
    #[default]
    StandardGaussian,
    StudentT {
        dof: f64,
    },
}

impl ReferenceDist {
    pub fn student_t(dof: f64) -> Result<Self> {
        if dof > 0.0 && dof.is_finite() {
            Ok(ReferenceDist::StudentT { dof })
        } else {
            Err(Error::Config(format!("student-t dof must be positive, got {dof}")))
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ReferenceDist::StandardGaussian => Ok(()),
            ReferenceDist::StudentT { dof } => Self::student_t(dof).map(|_| ()),
        }
    }

    /// `log nu(x)` for a single coordinate.
    pub fn log_density_1d(&self, x: f64) -> f64 {
        match *self {
            ReferenceDist::StandardGaussian => -0.5 * x * x - HALF_LN_2PI,
            ReferenceDist::StudentT { dof } => {
                t_log_norm(dof) - 0.5 * (dof + 1.0) * (x * x / dof).ln_1p()
            }
        }
    }

    /// `sum_i log nu(z_i)`.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("reference log-density at {bad}")));
        }
        Ok(z.iter().map(|&x| self.log_density_1d(x)).sum())
    }

    /// Row-wise product log-density of a `b x d` node, as a `b x 1` node.
    pub fn log_density_tape(&self, tape: &mut Tape, z: NodeId) -> NodeId {
        let d = tape.shape(z).1 as f64;
        match *self {
            ReferenceDist::StandardGaussian => {
                let sq = tape.square(z);
                let s = tape.sum_rows(sq);
                let s = tape.scale(s, -0.5);
                tape.add_scalar(s, -d * HALF_LN_2PI)
            }
            ReferenceDist::StudentT { dof } => {
                let sq = tape.square(z);
                let sq = tape.scale(sq, 1.0 / dof);
                let one = tape.add_scalar(sq, 1.0);
                let l = tape.log(one);
                let s = tape.sum_rows(l);
                let s = tape.scale(s, -0.5 * (dof + 1.0));
                tape.add_scalar(s, d * t_log_norm(dof))
            }
        }
    }

    /// Inverse CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            ReferenceDist::StandardGaussian => {
                Normal::standard().inverse_cdf(u)
            }
            ReferenceDist::StudentT { dof } => StudentsT::new(0.0, 1.0, dof)
                .expect("validated dof")
                .inverse_cdf(u),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            ReferenceDist::StandardGaussian => Normal::standard().cdf(x),
            ReferenceDist::StudentT { dof } => StudentsT::new(0.0, 1.0, dof)
                .expect("validated dof")
                .cdf(x),
        }
    }

    /// One draw per coordinate from an existing generator.
    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R, d: usize) -> Vec<f64> {
        (0..d).map(|_| self.quantile(open_unit(rng))).collect()
    }

    /// `n x d` i.i.d. draws. Row `i` comes from stream `first_row + i`, so any
    /// row can be regenerated on its own.
    pub fn sample(&self, d: usize, n: usize, seed: u64, first_row: u64) -> Result<Array2<f64>> {
        if d == 0 || n == 0 {
            return Err(Error::Contract(format!("sample needs d, n >= 1 (d={d}, n={n})")));
        }
        self.validate()?;
        let mut out = Array2::zeros((n, d));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let mut rng = stream(seed, first_row + i as u64);
            for v in row.iter_mut() {
                *v = self.quantile(open_unit(&mut rng));
            }
        }
        Ok(out)
    }
}

fn t_log_norm(dof: f64) -> f64 {
    ln_gamma(0.5 * (dof + 1.0)) - ln_gamma(0.5 * dof) - 0.5 * (dof * std::f64::consts::PI).ln()
}
