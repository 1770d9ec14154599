use ndarray::array;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{NodeId, ParamId, ParamStore, Tape};

/// `softplus(raw + OFFSET) = 1` at `raw = 0`.
const OFFSET: f64 = 0.541_324_854_612_918_1; // ln(e - 1)

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn inv_softplus(y: f64) -> f64 {
    // y + ln(1 - e^-y), written to stay accurate for small and large y
    y + (-(-y).exp()).ln_1p()
}

/// Invertible scalar map `x = sinh((asinh(a z + b) + eps) / delta)` for
/// one-dimensional models.
///
/// `a` and `delta` are stored through softplus so they stay positive; all-zero
/// raw parameters give the identity.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScalarLayer {
    pub a: ParamId,
    pub b: ParamId,
    pub eps: ParamId,
    pub delta: ParamId,
}

impl ScalarLayer {
    pub fn new(store: &mut ParamStore, prefix: &str) -> Self {
        let mut p = |n: &str| store.add(format!("{prefix}.{n}"), array![[0.0]]);
        ScalarLayer {
            a: p("a"),
            b: p("b"),
            eps: p("eps"),
            delta: p("delta"),
        }
    }

    /// Current `(a, b, eps, delta)`.
    pub fn natural(&self, store: &ParamStore) -> (f64, f64, f64, f64) {
        let g = |id| store.get(id)[[0, 0]];
        (
            softplus(g(self.a) + OFFSET),
            g(self.b),
            g(self.eps),
            softplus(g(self.delta) + OFFSET),
        )
    }

    /// Set `(a, b, eps, delta)` directly.
    pub fn set_natural(&self, store: &mut ParamStore, a: f64, b: f64, eps: f64, delta: f64) -> Result<()> {
        if !(a > 0.0 && delta > 0.0) {
            return Err(Error::Constraint(format!(
                "scalar flow needs a > 0 and delta > 0, got a={a}, delta={delta}"
            )));
        }
        store.get_mut(self.a)[[0, 0]] = inv_softplus(a) - OFFSET;
        store.get_mut(self.b)[[0, 0]] = b;
        store.get_mut(self.eps)[[0, 0]] = eps;
        store.get_mut(self.delta)[[0, 0]] = inv_softplus(delta) - OFFSET;
        Ok(())
    }

    pub fn apply(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        v: NodeId,
        inverse: bool,
    ) -> Result<(NodeId, NodeId)> {
        let cols = tape.shape(v).1;
        if cols != 1 {
            return Err(Error::dim("scalar flow", 1, cols));
        }
        let pos = |tape: &mut Tape, id| {
            let raw = tape.param(store, id);
            let shifted = tape.add_scalar(raw, OFFSET);
            tape.softplus(shifted)
        };
        let a = pos(tape, self.a);
        let delta = pos(tape, self.delta);
        let b = tape.param(store, self.b);
        let eps = tape.param(store, self.eps);
        let log_a = tape.log(a);
        let log_delta = tape.log(delta);
        let log_ad = tape.sub(log_a, log_delta);

        if !inverse {
            let az = tape.mul(v, a);
            let w = tape.add(az, b);
            let y = tape.asinh(w);
            let ye = tape.add(y, eps);
            let u = tape.div(ye, delta);
            let x = tape.sinh(u);
            // log a - log delta + log cosh(u) - 0.5 log(1 + w^2)
            let lc = tape.log_cosh(u);
            let w2 = tape.square(w);
            let w2 = tape.add_scalar(w2, 1.0);
            let lw = tape.log(w2);
            let lw = tape.scale(lw, -0.5);
            let ld = tape.add(lc, lw);
            let ld = tape.add(ld, log_ad);
            Ok((x, ld))
        } else {
            let u = tape.asinh(v);
            let du = tape.mul(u, delta);
            let y = tape.sub(du, eps);
            let w = tape.sinh(y);
            let wb = tape.sub(w, b);
            let z = tape.div(wb, a);
            // -(log a - log delta) + 0.5 log(1 + w^2) - 0.5 log(1 + x^2)
            let w2 = tape.square(w);
            let w2 = tape.add_scalar(w2, 1.0);
            let lw = tape.log(w2);
            let x2 = tape.square(v);
            let x2 = tape.add_scalar(x2, 1.0);
            let lx = tape.log(x2);
            let diff = tape.sub(lw, lx);
            let half = tape.scale(diff, 0.5);
            let ld = tape.sub(half, log_ad);
            Ok((z, ld))
        }
    }
}
