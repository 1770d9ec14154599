use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::flows::Transport;
use crate::grad::{NodeId, Tape};
use crate::reference::ReferenceDist;
use crate::targets::{ModelDensity, ModelSpace, TargetFamily};

/// Rows of `x` where `lp` is not finite, reported as an error.
fn check_finite(tape: &Tape, lp: NodeId, x: NodeId, what: &str) -> Result<()> {
    let v = tape.value(lp);
    if let Some(i) = v.iter().position(|a| !a.is_finite()) {
        let row: Vec<f64> = tape.value(x).row(i).to_vec();
        return Err(Error::NonFinite(format!("{what} = {} at sample {i}, x = {row:?}", v[[i, 0]])));
    }
    Ok(())
}

/// Mean over the batch `z` of `log q(T(z)) - log pi(T(z), y)`, where `push`
/// realizes `T` and returns its log-determinant.
pub fn negative_elbo_with<F>(
    tape: &mut Tape,
    z: &Array2<f64>,
    reference: ReferenceDist,
    density: &dyn ModelDensity,
    push: F,
) -> Result<NodeId>
where
    F: FnOnce(&mut Tape, NodeId) -> Result<(NodeId, NodeId)>,
{
    if z.ncols() != density.dim() {
        return Err(Error::dim("negative ELBO", density.dim(), z.ncols()));
    }
    let zn = tape.leaf(z.clone());
    let (x, ld) = push(tape, zn)?;
    let lz = reference.log_density_tape(tape, zn);
    let lq = tape.sub(lz, ld);
    let lp = density.log_density(tape, x)?;
    check_finite(tape, lp, x, "log target")?;
    let diff = tape.sub(lq, lp);
    Ok(tape.mean_all(diff))
}

/// Negative ELBO of a fixed transport map.
pub fn negative_elbo(tape: &mut Tape, map: &dyn Transport, density: &dyn ModelDensity, z: &Array2<f64>) -> Result<NodeId> {
    negative_elbo_with(tape, z, map.reference(), density, |t, n| map.push(t, n, None))
}

/// `log pi(theta, y | k) + log nu(u)` for saturated rows `x = (theta, u)`
/// split by the model's mask.
pub fn augmented_log_target(tape: &mut Tape, model: &ModelSpace, x: NodeId) -> Result<NodeId> {
    let active: Vec<usize> = (0..model.mask.len()).filter(|&i| model.mask[i]).collect();
    let aux: Vec<usize> = (0..model.mask.len()).filter(|&i| !model.mask[i]).collect();
    let theta = tape.select_cols(x, &active);
    let lp = model.density.log_density(tape, theta)?;
    check_finite(tape, lp, theta, "log target")?;
    if aux.is_empty() {
        return Ok(lp);
    }
    let u = tape.select_cols(x, &aux);
    let lu = ReferenceDist::StandardGaussian.log_density_tape(tape, u);
    Ok(tape.add(lp, lu))
}

/// Conditional negative ELBO over a minibatch of model indices `ks` and
/// saturated reference draws `eps` (one row per index). Rows are evaluated
/// grouped by model in ascending index order; the result is the mean over
/// all rows.
pub fn conditional_negative_elbo_with<F>(
    tape: &mut Tape,
    family: &TargetFamily,
    ks: &[usize],
    eps: &Array2<f64>,
    mut push: F,
) -> Result<NodeId>
where
    F: FnMut(&mut Tape, NodeId, usize) -> Result<(NodeId, NodeId)>,
{
    if eps.nrows() != ks.len() || eps.ncols() != family.d_max {
        return Err(Error::dim(
            "conditional negative ELBO",
            format!("{} x {}", ks.len(), family.d_max),
            format!("{} x {}", eps.nrows(), eps.ncols()),
        ));
    }
    let mut total: Option<NodeId> = None;
    for k in 0..family.len() {
        let rows: Vec<usize> = (0..ks.len()).filter(|&i| ks[i] == k).collect();
        if rows.is_empty() {
            continue;
        }
        let model = family.model(k)?;
        let zn = tape.leaf(eps.select(Axis(0), &rows));
        let (x, ld) = push(tape, zn, k)?;
        let lz = ReferenceDist::StandardGaussian.log_density_tape(tape, zn);
        let lq = tape.sub(lz, ld);
        let lt = augmented_log_target(tape, model, x)?;
        let diff = tape.sub(lq, lt);
        let s = tape.sum_all(diff);
        total = Some(match total {
            Some(t) => tape.add(t, s),
            None => s,
        });
    }
    if let Some(bad) = ks.iter().find(|&&k| k >= family.len()) {
        return Err(Error::UnknownModel(*bad));
    }
    let total = total.ok_or_else(|| Error::Contract("empty minibatch".into()))?;
    Ok(tape.scale(total, 1.0 / ks.len() as f64))
}
