//! Central finite-difference checks for tape gradients.

use rand::seq::index::sample;

use super::params::ParamStore;
use super::tape::{NodeId, Tape, Tensor};
use crate::error::Result;
use crate::rng::stream;

/// Step used for coordinate `x`.
pub fn step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Central difference of `f` at `x0`.
fn central<E: FnMut(f64) -> Result<f64>>(x0: f64, mut f: E) -> Result<f64> {
    let h = step(x0);
    Ok((f(x0 + h)? - f(x0 - h)?) / (2.0 * h))
}

/// Denominator floor per unit of loss. A central difference at the default
/// step resolves slopes only to about `eps^(2/3) |f|` (~4e-11 |f|), so
/// components below `1e-6 |f|` are compared absolutely.
pub const LOSS_FLOOR: f64 = 1e-6;

/// Relative error with a floor on the denominator so near-zero gradients are
/// compared absolutely; `loss` is the function value at the base point.
pub fn rel_err(analytic: f64, numeric: f64, loss: f64) -> f64 {
    let floor = (LOSS_FLOOR * loss.abs()).max(1e-3);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct Report {
    pub checked: usize,
    /// Function value at the base point.
    pub loss: f64,
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate with its analytic and numeric values.
    pub worst: Option<(usize, f64, f64)>,
}

impl Report {
    fn new(loss: f64) -> Self {
        Report {
            checked: 0,
            loss,
            max_rel_err: 0.0,
            worst: None,
        }
    }

    fn push(&mut self, i: usize, a: f64, n: f64) {
        self.checked += 1;
        let e = rel_err(a, n, self.loss);
        if e > self.max_rel_err || self.worst.is_none() || e.is_nan() {
            self.max_rel_err = if e.is_nan() { f64::INFINITY } else { e };
            self.worst = Some((i, a, n));
        }
    }
}

/// Check every parameter of `store`.
pub fn params<F>(store: &ParamStore, f: F) -> Result<Report>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<NodeId>,
{
    let n = store.num_scalars();
    params_at(store, f, &(0..n).collect::<Vec<_>>())
}

/// Check `count` parameter coordinates chosen uniformly without replacement.
pub fn params_sampled<F>(store: &ParamStore, f: F, count: usize, seed: u64) -> Result<Report>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<NodeId>,
{
    let n = store.num_scalars();
    let mut idx = sample(&mut stream(seed, 0), n, count.min(n)).into_vec();
    idx.sort_unstable();
    params_at(store, f, &idx)
}

/// Check the listed flat parameter coordinates.
pub fn params_at<F>(store: &ParamStore, f: F, coords: &[usize]) -> Result<Report>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let out = f(store, &mut tape)?;
    let loss = tape.scalar_value(out);
    let grad = tape.backward(out)?.flat_for_store(store);
    let base = store.to_flat();
    let mut probe = store.clone();
    let mut eval = |flat: &[f64]| -> Result<f64> {
        probe.set_flat(flat)?;
        let mut t = Tape::no_grad();
        let o = f(&probe, &mut t)?;
        Ok(t.scalar_value(o))
    };
    let mut report = Report::new(loss);
    let mut x = base.clone();
    for &i in coords {
        let numeric = central(base[i], |v| {
            x[i] = v;
            eval(&x)
        })?;
        x[i] = base[i];
        report.push(i, grad[i], numeric);
    }
    Ok(report)
}

/// Check the gradient with respect to an input tensor.
pub fn input<F>(x0: &Tensor, f: F) -> Result<Report>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone());
    let out = f(&mut tape, x)?;
    let loss = tape.scalar_value(out);
    let grads = tape.backward(out)?;
    let g = grads
        .wrt(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x0.dim()));
    let eval = |v: &Tensor| -> Result<f64> {
        let mut t = Tape::no_grad();
        let x = t.leaf(v.clone());
        let o = f(&mut t, x)?;
        Ok(t.scalar_value(o))
    };
    let mut report = Report::new(loss);
    let mut probe = x0.clone();
    for (i, (&base, &a)) in x0.iter().zip(g.iter()).enumerate() {
        let (r, c) = (i / x0.ncols(), i % x0.ncols());
        let numeric = central(base, |v| {
            probe[[r, c]] = v;
            eval(&probe)
        })?;
        probe[[r, c]] = base;
        report.push(i, a, numeric);
    }
    Ok(report)
}
