use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TransModelState;
use crate::error::{Error, Result};
use crate::flows::Transport;
use crate::grad::Tape;
use crate::reference::ReferenceDist;
use crate::rng::open_unit;
use crate::targets::TargetFamily;

/// MCMC kernel run on the reference-space target
/// `log pi(T(z) | k) + log|det dT/dz|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InnerKernel {
    /// Gaussian random walk with per-coordinate scale.
    Rwm { scale: f64 },
    /// Hamiltonian leapfrog with unit mass.
    Hmc { step: f64, leapfrog: usize },
}

impl Default for InnerKernel {
    fn default() -> Self {
        InnerKernel::Rwm { scale: 0.3 }
    }
}

/// Within-model updates through per-model transport maps: pull to reference
/// space, run `steps` inner steps, push back.
#[derive(Clone)]
pub struct WithinModel {
    maps: Vec<Arc<dyn Transport>>,
    pub inner: InnerKernel,
    pub steps: usize,
}

impl WithinModel {
    pub fn new(family: &TargetFamily, maps: Vec<Arc<dyn Transport>>, inner: InnerKernel, steps: usize) -> Result<Self> {
        if maps.len() != family.len() {
            return Err(Error::Contract(format!("{} models but {} maps", family.len(), maps.len())));
        }
        for (m, map) in family.models.iter().zip(&maps) {
            if map.dim() != m.dim || map.contexts() != 0 {
                return Err(Error::dim("within-model map", m.dim, map.dim()));
            }
        }
        match inner {
            InnerKernel::Rwm { scale } if !(scale > 0.0) => {
                return Err(Error::Config(format!("random-walk scale must be positive, got {scale}")))
            }
            InnerKernel::Hmc { step, leapfrog } if !(step > 0.0) || leapfrog == 0 => {
                return Err(Error::Config("HMC needs a positive step and at least one leapfrog step".into()))
            }
            _ => {}
        }
        Ok(WithinModel { maps, inner, steps })
    }

    /// Identity maps for every model: plain MCMC in parameter space.
    pub fn identity(family: &TargetFamily, inner: InnerKernel, steps: usize) -> Result<Self> {
        let maps = family
            .models
            .iter()
            .map(|m| Arc::new(crate::flows::IdentityMap::new(m.dim)) as Arc<dyn Transport>)
            .collect();
        Self::new(family, maps, inner, steps)
    }

    /// Reference-space log target at `z`, with the pushed point.
    fn log_target(&self, family: &TargetFamily, k: usize, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (theta, ld) = self.maps[k].push_point(z, None)?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Ok((f64::NEG_INFINITY, theta));
        }
        let lp = family.model(k)?.density.log_density_point(&theta)?;
        if lp.is_nan() {
            return Err(Error::NonFinite(format!("log target of model {k} at {theta:?}")));
        }
        Ok((lp + ld, theta))
    }

    fn log_target_grad(&self, family: &TargetFamily, k: usize, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let zn = tape.row(z);
        let (x, ld) = self.maps[k].push(&mut tape, zn, None)?;
        let lp = family.model(k)?.density.log_density(&mut tape, x)?;
        let total = tape.add(lp, ld);
        let total = tape.sum_all(total);
        let v = tape.scalar_value(total);
        if !v.is_finite() {
            return Ok((f64::NEG_INFINITY, vec![0.0; z.len()]));
        }
        let g = tape.backward(total)?;
        let grad = g.wrt(zn).map(|t| t.iter().copied().collect()).unwrap_or_else(|| vec![0.0; z.len()]);
        Ok((v, grad))
    }

    /// Apply the update in place; returns the acceptance probability of each inner step.
    pub fn update(&self, family: &TargetFamily, state: &mut TransModelState, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if self.steps == 0 {
            return Ok(Vec::new());
        }
        state.check(family)?;
        let k = state.k;
        let (mut z, _) = self.maps[k].pull_point(&state.theta, None)?;
        let (mut lt, _) = self.log_target(family, k, &z)?;
        let mut probs = Vec::with_capacity(self.steps);
        let mut moved: Option<Vec<f64>> = None;
        for _ in 0..self.steps {
            let (cand, log_ratio, cand_lt, cand_theta) = match self.inner {
                InnerKernel::Rwm { scale } => {
                    let e = ReferenceDist::StandardGaussian.draw(rng, z.len());
                    let cand: Vec<f64> = z.iter().zip(e).map(|(a, b)| a + scale * b).collect();
                    let (cl, th) = self.log_target(family, k, &cand)?;
                    (cand, cl - lt, cl, th)
                }
                InnerKernel::Hmc { step, leapfrog } => {
                    let p0 = ReferenceDist::StandardGaussian.draw(rng, z.len());
                    let (cand, p1, cl) = self.leapfrog(family, k, &z, &p0, step, leapfrog)?;
                    let kin = |p: &[f64]| 0.5 * p.iter().map(|v| v * v).sum::<f64>();
                    let (_, th) = self.log_target(family, k, &cand)?;
                    (cand, cl - kin(&p1) - lt + kin(&p0), cl, th)
                }
            };
            let a = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
            probs.push(a);
            if open_unit(rng) < a {
                z = cand;
                lt = cand_lt;
                moved = Some(cand_theta);
            }
        }
        if let Some(theta) = moved {
            state.theta = theta;
        }
        Ok(probs)
    }

    fn leapfrog(
        &self,
        family: &TargetFamily,
        k: usize,
        z0: &[f64],
        p0: &[f64],
        step: f64,
        n: usize,
    ) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let mut z = z0.to_vec();
        let mut p = p0.to_vec();
        let (_, mut g) = self.log_target_grad(family, k, &z)?;
        let mut lt = f64::NEG_INFINITY;
        for _ in 0..n {
            p.iter_mut().zip(&g).for_each(|(p, g)| *p += 0.5 * step * g);
            z.iter_mut().zip(&p).for_each(|(z, p)| *z += step * p);
            let (v, gn) = self.log_target_grad(family, k, &z)?;
            lt = v;
            g = gn;
            if !lt.is_finite() {
                return Ok((z, p, f64::NEG_INFINITY));
            }
            p.iter_mut().zip(&g).for_each(|(p, g)| *p += 0.5 * step * g);
        }
        Ok((z, p, lt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::targets::{gaussian, sas};

    fn sas_exact() -> (TargetFamily, WithinModel) {
        let fam = sas::family();
        let maps = (0..2).map(|k| Arc::new(sas::exact_map(k).unwrap()) as Arc<dyn Transport>).collect();
        let w = WithinModel::new(&fam, maps, InnerKernel::default(), 1).unwrap();
        (fam, w)
    }

    #[test]
    fn zero_steps_leave_state_unchanged() {
        let (fam, mut w) = sas_exact();
        w.steps = 0;
        let mut s = TransModelState::new(1, vec![0.4, 0.2]);
        let before = s.clone();
        assert!(w.update(&fam, &mut s, &mut stream(1, 0)).unwrap().is_empty());
        assert_eq!(s, before);
    }

    #[test]
    fn exact_map_rwm_matches_gaussian_acceptance() {
        // with an exact map the reference-space target is N(0, I); compare with
        // the same random walk run directly on N(0, I)
        let (fam, w) = sas_exact();
        let direct = WithinModel::identity(&gaussian::two_model_toy(), InnerKernel::default(), 1).unwrap();
        let toy = gaussian::two_model_toy();
        let n = 20_000;
        let mut rng = stream(2, 0);
        let mut s = TransModelState::new(1, vec![0.0, 0.0]);
        let mut t = TransModelState::new(1, vec![0.0, 0.0]);
        let (mut a, mut b) = (0.0, 0.0);
        for _ in 0..n {
            a += w.update(&fam, &mut s, &mut rng).unwrap()[0];
            b += direct.update(&toy, &mut t, &mut rng).unwrap()[0];
        }
        let (a, b) = (a / n as f64, b / n as f64);
        assert!((a - b).abs() < 0.02, "{a} vs {b}");
        assert_eq!(s.k, 1);
    }

    #[test]
    fn hmc_on_gaussian_keeps_moments() {
        let toy = gaussian::two_model_toy();
        let w = WithinModel::identity(&toy, InnerKernel::Hmc { step: 0.4, leapfrog: 5 }, 1).unwrap();
        let mut rng = stream(3, 0);
        let mut s = TransModelState::new(0, vec![2.0]);
        let n = 5000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let p = w.update(&toy, &mut s, &mut rng).unwrap();
            assert!(p[0] > 0.5);
            m1 += s.theta[0];
            m2 += s.theta[0] * s.theta[0];
        }
        let (m1, m2) = (m1 / n as f64, m2 / n as f64);
        assert!(m1.abs() < 0.1 && (m2 - 1.0).abs() < 0.15, "{m1} {m2}");
    }
}
