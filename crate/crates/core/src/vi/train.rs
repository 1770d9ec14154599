use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::elbo::{conditional_negative_elbo_with, negative_elbo_with};
use crate::error::{Error, Result};
use crate::flows::{FlowStack, Transport};
use crate::grad::{NodeId, ParamStore, Tape};
use crate::reference::ReferenceDist;
use crate::rng::{derive_seed, stream};
use crate::targets::{ModelDensity, TargetFamily};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub batch: usize,
    pub lr: f64,
    pub max_iters: usize,
    /// Moving-average window for early stopping and best-parameter tracking.
    pub window: usize,
    /// Stop after this many consecutive windows improving by less than `tol`.
    pub patience: usize,
    pub tol: f64,
    /// Abort when the loss exceeds the initial loss by
    /// `divergence_factor * max(|initial|, 1)` for `divergence_steps` steps in a row.
    pub divergence_factor: f64,
    pub divergence_steps: usize,
    pub seed: u64,
    /// Record zero wall-clock time so traces are byte-reproducible.
    pub deterministic: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            batch: 256,
            lr: 1e-4,
            max_iters: 10_000,
            window: 200,
            patience: 5,
            tol: 1e-3,
            divergence_factor: 10.0,
            divergence_steps: 100,
            seed: 0,
            deterministic: true,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config(format!("batch must be >= 2, got {}", self.batch)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub neg_elbo: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

/// Per-iteration loss record (loss measured before that iteration's update).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboTrace {
    pub rows: Vec<TraceRow>,
}

impl ElboTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Means over consecutive non-overlapping windows.
    pub fn window_means(&self, window: usize) -> Vec<f64> {
        self.rows
            .chunks_exact(window.max(1))
            .map(|c| c.iter().map(|r| r.neg_elbo).sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,neg_elbo,grad_norm,seconds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.iteration, r.neg_elbo, r.grad_norm, r.seconds);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trace: ElboTrace,
    /// Lowest window mean seen; its parameters are the ones kept.
    pub best_window_loss: Option<f64>,
    pub iterations: usize,
    pub early_stopped: bool,
}

impl TrainOutcome {
    /// Best window mean, or the mean of the whole trace for runs shorter than a window.
    pub fn final_loss(&self) -> f64 {
        self.best_window_loss.unwrap_or_else(|| {
            self.trace.rows.iter().map(|r| r.neg_elbo).sum::<f64>() / self.trace.len().max(1) as f64
        })
    }
}

/// Generic Adam loop over `loss(store, tape, iteration)`.
pub fn optimize<F>(store: &mut ParamStore, cfg: &TrainerConfig, mut loss: F) -> Result<TrainOutcome>
where
    F: FnMut(&ParamStore, &mut Tape, usize) -> Result<NodeId>,
{
    cfg.validate()?;
    let start = Instant::now();
    let mut adam = Adam::new(cfg.lr);
    let mut trace = ElboTrace::default();
    let mut initial = f64::NAN;
    let mut over = 0usize;
    let (mut win_sum, mut prev_win): (f64, Option<f64>) = (0.0, None);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stall = 0usize;
    let mut early = false;

    for it in 0..cfg.max_iters {
        let mut tape = Tape::new();
        let out = loss(store, &mut tape, it)?;
        let value = tape.scalar_value(out);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("negative ELBO {value} at iteration {it}")));
        }
        let grads = tape.backward(out)?.for_store(store);
        let gnorm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
        trace.rows.push(TraceRow {
            iteration: it,
            neg_elbo: value,
            grad_norm: gnorm,
            seconds: if cfg.deterministic { 0.0 } else { start.elapsed().as_secs_f64() },
        });

        if it == 0 {
            initial = value;
        }
        if value - initial > cfg.divergence_factor * initial.abs().max(1.0) {
            over += 1;
            if over >= cfg.divergence_steps {
                return Err(Error::Diverged {
                    iteration: it,
                    value,
                    initial,
                });
            }
        } else {
            over = 0;
        }

        adam.step(store, &grads)?;

        win_sum += value;
        if (it + 1) % cfg.window == 0 {
            let mean = win_sum / cfg.window as f64;
            win_sum = 0.0;
            if best.as_ref().is_none_or(|(b, _)| mean < *b) {
                best = Some((mean, store.to_flat()));
            }
            if let Some(p) = prev_win {
                if p - mean < cfg.tol {
                    stall += 1;
                } else {
                    stall = 0;
                }
            }
            prev_win = Some(mean);
            if stall >= cfg.patience {
                early = true;
                break;
            }
        }
    }
    let best_loss = best.as_ref().map(|(b, _)| *b);
    if let Some((_, flat)) = best {
        store.set_flat(&flat)?;
    }
    Ok(TrainOutcome {
        iterations: trace.len(),
        trace,
        best_window_loss: best_loss,
        early_stopped: early,
    })
}

/// Reverse-KL training of an unconditional flow for one model.
pub fn sgvi_train(flow: &mut FlowStack, density: &dyn ModelDensity, cfg: &TrainerConfig) -> Result<TrainOutcome> {
    if flow.contexts() > 0 {
        return Err(Error::Contract("sgvi_train needs an unconditional flow".into()));
    }
    if flow.dim() != density.dim() {
        return Err(Error::dim("sgvi_train", density.dim(), flow.dim()));
    }
    let mut store = flow.store().clone();
    let reference = flow.reference();
    let (d, m) = (flow.dim(), cfg.batch);
    let outcome = {
        let f: &FlowStack = flow;
        optimize(&mut store, cfg, |s, tape, it| {
            let z = reference.sample(d, m, cfg.seed, (it * m) as u64)?;
            negative_elbo_with(tape, &z, reference, density, |t, n| f.apply_with(s, t, n, None, false))
        })?
    };
    *flow.store_mut() = store;
    Ok(outcome)
}

/// Model indices drawn uniformly for iteration `it`.
pub fn minibatch_models(seed: u64, it: usize, m: usize, k: usize) -> Vec<usize> {
    let key = derive_seed(seed, 1);
    (0..m)
        .map(|i| stream(key, (it * m + i) as u64).random_range(0..k))
        .collect()
}

/// Trans-dimensional training of a conditional flow over every model of `family`.
pub fn conditional_train(stack: &mut FlowStack, family: &TargetFamily, cfg: &TrainerConfig) -> Result<TrainOutcome> {
    if stack.contexts() != family.len() || stack.dim() != family.d_max {
        return Err(Error::dim(
            "conditional_train",
            format!("dim {} with {} contexts", family.d_max, family.len()),
            format!("dim {} with {} contexts", stack.dim(), stack.contexts()),
        ));
    }
    let mut store = stack.store().clone();
    let (d, m, k) = (family.d_max, cfg.batch, family.len());
    let outcome = {
        let f: &FlowStack = stack;
        optimize(&mut store, cfg, |s, tape, it| {
            let ks = minibatch_models(cfg.seed, it, m, k);
            let eps = ReferenceDist::StandardGaussian.sample(d, m, cfg.seed, (it * m) as u64)?;
            conditional_negative_elbo_with(tape, family, &ks, &eps, |t, n, k| f.apply_with(s, t, n, Some(k), false))
        })?
    };
    *stack.store_mut() = store;
    Ok(outcome)
}
