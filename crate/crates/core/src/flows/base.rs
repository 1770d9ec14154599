use serde::{Deserialize, Serialize};

use super::one_hot;
use crate::error::{Error, Result};
use crate::grad::{Mlp, MlpInit, NodeId, ParamStore, Tape};
use crate::reference::ReferenceDist;

/// Variance floor added after the softplus.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Context-dependent diagonal Gaussian `N(mu(k), diag(sigma^2(k)))`, with
/// `mu` and `sigma^2` produced by networks of the one-hot model index.
///
/// Draws are reparameterized as `z0 = mu(k) + sigma(k) * eps`; the stack uses
/// this as its first affine step, so `eps` is the reference coordinate.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConditionalBase {
    pub dim: usize,
    pub contexts: usize,
    pub mu: Mlp,
    pub var: Mlp,
}

impl ConditionalBase {
    pub fn new<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        contexts: usize,
        hidden: &[usize],
        init: MlpInit,
        rng: &mut R,
    ) -> Self {
        ConditionalBase {
            dim,
            contexts,
            mu: Mlp::new(store, "base.mu", contexts, hidden, dim, init, rng),
            var: Mlp::new(store, "base.var", contexts, hidden, dim, init, rng),
        }
    }

    /// `(mu, log sigma)` as `1 x dim` nodes.
    pub fn moments(&self, store: &ParamStore, tape: &mut Tape, k: usize) -> Result<(NodeId, NodeId)> {
        if k >= self.contexts {
            return Err(Error::UnknownModel(k));
        }
        let c = tape.leaf(one_hot(k, self.contexts, 1));
        let mu = self.mu.apply(store, tape, c)?;
        let raw = self.var.apply(store, tape, c)?;
        let sp = tape.softplus(raw);
        let var = tape.add_scalar(sp, VARIANCE_FLOOR);
        let log_var = tape.log(var);
        Ok((mu, tape.scale(log_var, 0.5)))
    }

    /// Plain-value mean and variances under context `k`.
    pub fn mean_var(&self, store: &ParamStore, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::no_grad();
        let (mu, ls) = self.moments(store, &mut tape, k)?;
        Ok((
            tape.value(mu).iter().copied().collect(),
            tape.value(ls).iter().map(|l| (2.0 * l).exp()).collect(),
        ))
    }

    /// `eps -> z0` (`inverse = false`) or `z0 -> eps`, with row log-determinants.
    pub fn apply(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        v: NodeId,
        k: usize,
        inverse: bool,
    ) -> Result<(NodeId, NodeId)> {
        let (rows, cols) = tape.shape(v);
        if cols != self.dim {
            return Err(Error::dim("conditional base", self.dim, cols));
        }
        let (mu, log_sigma) = self.moments(store, tape, k)?;
        let ld_row = tape.sum_rows(log_sigma);
        let ones = tape.leaf(ndarray::Array2::ones((rows, 1)));
        if inverse {
            let centered = tape.sub(v, mu);
            let neg = tape.neg(log_sigma);
            let inv_sigma = tape.exp(neg);
            let eps = tape.mul(centered, inv_sigma);
            let ld = tape.mul(ones, ld_row);
            Ok((eps, tape.neg(ld)))
        } else {
            let sigma = tape.exp(log_sigma);
            let scaled = tape.mul(v, sigma);
            let z0 = tape.add(scaled, mu);
            Ok((z0, tape.mul(ones, ld_row)))
        }
    }

    /// Reparameterized draws `z0` from context `k` with their base log-density,
    /// given reference noise `eps` (`n x dim`, standard Gaussian).
    pub fn sample(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        eps: NodeId,
        k: usize,
    ) -> Result<(NodeId, NodeId)> {
        let (z0, ld) = self.apply(store, tape, eps, k, false)?;
        let log_nu = ReferenceDist::StandardGaussian.log_density_tape(tape, eps);
        Ok((z0, tape.sub(log_nu, ld)))
    }

    /// Base log-density of `z0` rows under context `k`.
    pub fn log_density(&self, store: &ParamStore, tape: &mut Tape, z0: NodeId, k: usize) -> Result<NodeId> {
        let (eps, ld) = self.apply(store, tape, z0, k, true)?;
        let log_nu = ReferenceDist::StandardGaussian.log_density_tape(tape, eps);
        Ok(tape.add(log_nu, ld))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::check;
    use crate::rng::stream;
    use ndarray::Array2;
    use rand::RngExt;

    const LN2PI: f64 = 1.837_877_066_409_345_5;

    #[test]
    fn zero_init_is_softplus_zero_variance() {
        let mut store = ParamStore::new();
        let base = ConditionalBase::new(&mut store, 3, 2, &[8], MlpInit::Zeros, &mut stream(0, 0));
        let (mu, var) = base.mean_var(&store, 1).unwrap();
        assert_eq!(mu, vec![0.0; 3]);
        for v in var {
            assert!((v - (2f64.ln() + VARIANCE_FLOOR)).abs() < 1e-14);
        }
        assert!(matches!(base.mean_var(&store, 2), Err(Error::UnknownModel(2))));
    }

    #[test]
    fn log_density_at_mean() {
        let mut rng = stream(1, 0);
        let mut store = ParamStore::new();
        let base = ConditionalBase::new(&mut store, 3, 2, &[8], MlpInit::ZeroOutput, &mut rng);
        let flat: Vec<f64> = (0..store.num_scalars()).map(|_| rng.random_range(-0.5..0.5)).collect();
        store.set_flat(&flat).unwrap();
        let (mu, var) = base.mean_var(&store, 0).unwrap();
        let mut tape = Tape::no_grad();
        let z = tape.row(&mu);
        let lp = base.log_density(&store, &mut tape, z, 0).unwrap();
        let expected: f64 = var.iter().map(|v| -0.5 * (LN2PI + v.ln())).sum();
        assert!((tape.scalar_value(lp) - expected).abs() < 1e-12);
    }

    #[test]
    fn draw_gradients_match_finite_differences() {
        let mut rng = stream(2, 0);
        let mut store = ParamStore::new();
        let base = ConditionalBase::new(&mut store, 2, 3, &[6], MlpInit::ZeroOutput, &mut rng);
        let flat: Vec<f64> = (0..store.num_scalars()).map(|_| rng.random_range(-0.5..0.5)).collect();
        store.set_flat(&flat).unwrap();
        let eps = Array2::from_shape_fn((4, 2), |(i, j)| 0.3 * i as f64 - 0.7 * j as f64);
        let r = check::params(&store, |s, tape| {
            let e = tape.leaf(eps.clone());
            let (z0, lp) = base.sample(s, tape, e, 1)?;
            let sq = tape.square(z0);
            let a = tape.sum_all(sq);
            let b = tape.sum_all(lp);
            Ok(tape.add(a, b))
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }
}
