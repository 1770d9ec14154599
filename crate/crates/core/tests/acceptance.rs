//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line with its
//! measurements; the process exits nonzero if any criterion fails. Set
//! `TRJ_ACCEPTANCE=3,9` to run a subset.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::RngExt;

use transport_rj::cli::{self, Command, Preset, RunConfig, Transports};
use transport_rj::diagnostics::{
    bbe_estimate, build_eval_set, interquartile_range, running_model_prob, total_variation, BbeAccumulator, BbeOptions, EvalSource,
};
use transport_rj::flows::{FlowSpec, FlowStack, Transport};
use transport_rj::grad::{check, Tape};
use transport_rj::reference::ReferenceDist;
use transport_rj::rjmcmc::{
    run_chain, IndexProposal, JumpKernel, Sampler, TransModelState, TrjKernel, WithinModel,
};
use transport_rj::rng::stream;
use transport_rj::targets::{factor, gaussian, sas, varsel, ModelDensity, TargetFamily};
use transport_rj::vi::{conditional_negative_elbo_with, conditional_train, negative_elbo_with, TrainerConfig};

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_CONFIGS: usize = 100;
const GRAD_COORDS: usize = 32;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
/// Flow parameters are drawn uniformly on `±GRAD_PARAM_SCALE`. Much larger
/// weights push factor-analysis variances towards zero, where the loss
/// reaches 1e20 and central differences lose every significant digit.
const GRAD_PARAM_SCALE: f64 = 0.1;

const ROUND_TRIP_TOL: f64 = 1e-10;
const ROUND_TRIP_POINTS: usize = 1000;

const EXACT_ALPHA_TOL: f64 = 1e-10;
const EXACT_ITERS: usize = 100_000;
const Z_99: f64 = 2.575_829_303_548_901;
const EXACT_BUDGET: Duration = Duration::from_secs(60);

const SAS_TRUTH: f64 = 0.75;
const SAS_PROB_TOL: f64 = 0.02;
const SAS_MIN_ACCEPT: f64 = 0.8;
const SAS_ITERS: usize = 100_000;
const SAS_BUDGET: Duration = Duration::from_secs(15 * 60);

const EVIDENCE_SAMPLES: usize = 10_000;
const EVIDENCE_MAX_SE: f64 = 0.02;
const EVIDENCE_Z: f64 = 3.0;
const EVIDENCE_LR: f64 = 1e-3;

const VS_TV_TOL: f64 = 0.05;
const VS_EVAL_STATES: usize = 500;
const VS_REPLICATES: usize = 80;
const VS_BUDGET: Duration = Duration::from_secs(30 * 60);
const VS_FULL_MODEL: usize = 3;
const VS_GRID_H: f64 = 0.25;
const VS_EVAL_BURN: usize = 100;

const AUX_MEAN_TOL: f64 = 0.1;
const AUX_VAR_RANGE: (f64, f64) = (0.8, 1.2);
const AUX_SAMPLES: usize = 10_000;
const TOY_ELBO_TOL: f64 = 0.05;

const FA_D2: usize = 17;
const FA_D3: usize = 21;
const FA_ORACLE_STEPS: usize = 1_000_000;
const FA_VI_STEPS: usize = 100_000;
const FA_SE_MULT: f64 = 3.0;

const ANCHOR_TOL: f64 = 1e-12;
const HAND_TOL: f64 = 1e-15;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn selected(id: usize) -> bool {
    match std::env::var("TRJ_ACCEPTANCE") {
        Ok(list) if !list.trim().is_empty() => list.split(',').any(|s| s.trim().parse() == Ok(id)),
        _ => true,
    }
}

fn main() -> ExitCode {
    type Criterion = (usize, &'static str, fn() -> Verdict);
    let criteria: [Criterion; 10] = [
        (1, "gradient check", c1_gradients),
        (2, "invertibility and log-det", c2_round_trip),
        (3, "exact-map rejection-free chain", c3_exact_map),
        (4, "trained SAS chain", c4_trained_sas),
        (5, "SAS evidence", c5_evidence),
        (6, "variable-selection BBE", c6_variable_selection),
        (7, "conditional VI", c7_conditional_vi),
        (8, "factor analysis", c8_factor_analysis),
        (9, "BBE algebra", c9_bbe_algebra),
        (10, "manifest reproducibility", c10_reproducibility),
    ];
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        if !selected(id) {
            continue;
        }
        let t = Instant::now();
        let v = f();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("{status} criterion {id} ({name}) [{:.1}s]: {}", t.elapsed().as_secs_f64(), v.detail);
        if !v.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- 1

fn randomize(stack: &mut FlowStack, seed: u64, scale: f64) {
    let mut rng = stream(seed, 7);
    let flat: Vec<f64> = (0..stack.store().num_scalars())
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    stack.store_mut().set_flat(&flat).unwrap();
}

fn fa_family() -> TargetFamily {
    let y = factor::synthetic_data(factor::SYNTHETIC_SEED, factor::DEFAULT_N);
    factor::family(&y, &factor::FaHyper::default()).unwrap()
}

fn vs_family() -> TargetFamily {
    let d = varsel::simulate(varsel::SYNTHETIC_SEED, varsel::DEFAULT_N);
    varsel::family(&d, &varsel::VsHyper::default()).unwrap()
}

/// Worst relative error over one random configuration of an unconditional
/// flow on a random model of `family`.
fn grad_unconditional(family: &TargetFamily, seed: u64) -> f64 {
    let mut rng = stream(seed, 0);
    let k = rng.random_range(0..family.len());
    let density = family.models[k].density.clone();
    let d = density.dim();
    let reference = if rng.random_bool(0.3) {
        ReferenceDist::StudentT {
            dof: rng.random_range(3.0..10.0),
        }
    } else {
        ReferenceDist::StandardGaussian
    };
    let spec = FlowSpec {
        hidden: vec![rng.random_range(2..12)],
        reference,
        ..FlowSpec::new(d, rng.random_range(1..5))
    };
    let mut stack = FlowStack::new(spec, seed).unwrap();
    randomize(&mut stack, seed, GRAD_PARAM_SCALE);
    let z = reference.sample(d, rng.random_range(2..6), seed, 1).unwrap();
    let f = |s: &transport_rj::grad::ParamStore, t: &mut Tape| {
        negative_elbo_with(t, &z, reference, density.as_ref(), |t, n| stack.apply_with(s, t, n, None, false))
    };
    check::params_sampled(stack.store(), f, GRAD_COORDS, seed).unwrap().max_rel_err
}

fn grad_conditional(family: &TargetFamily, seed: u64) -> f64 {
    let mut rng = stream(seed, 0);
    let spec = FlowSpec::conditional(family.d_max, rng.random_range(1..4), family.len())
        .with_hidden(vec![rng.random_range(2..10)]);
    let mut stack = FlowStack::new(spec, seed).unwrap();
    randomize(&mut stack, seed, GRAD_PARAM_SCALE);
    let m = rng.random_range(2..6);
    let ks: Vec<usize> = (0..m).map(|_| rng.random_range(0..family.len())).collect();
    let eps = ReferenceDist::StandardGaussian.sample(family.d_max, m, seed, 1).unwrap();
    let f = |s: &transport_rj::grad::ParamStore, t: &mut Tape| {
        conditional_negative_elbo_with(t, family, &ks, &eps, |t, n, k| stack.apply_with(s, t, n, Some(k), false))
    };
    check::params_sampled(stack.store(), f, GRAD_COORDS, seed).unwrap().max_rel_err
}

fn c1_gradients() -> Verdict {
    let t = Instant::now();
    let families = [
        ("sas", sas::family()),
        ("gaussian-toy", gaussian::two_model_toy()),
        ("factor-analysis", fa_family()),
        ("variable-selection", vs_family()),
    ];
    let mut worst = Vec::new();
    for (name, fam) in &families {
        let u = (0..GRAD_CONFIGS as u64).map(|s| grad_unconditional(fam, 1000 + s)).fold(0.0, f64::max);
        let c = (0..GRAD_CONFIGS as u64).map(|s| grad_conditional(fam, 5000 + s)).fold(0.0, f64::max);
        worst.push((format!("{name}/unconditional"), u));
        worst.push((format!("{name}/conditional"), c));
    }
    let elapsed = t.elapsed();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let pass = max < GRAD_REL_TOL && elapsed < GRAD_BUDGET;
    let parts: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    verdict(
        pass,
        format!(
            "{} configs per pair, max rel err {max:.2e} (< {GRAD_REL_TOL:.0e}, denominator floor max(1e-3, {:.0e} |f|)); {}; {:.1}s (< {}s)",
            GRAD_CONFIGS,
            check::LOSS_FLOOR,
            parts.join(", "),
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn round_trip(stack: &FlowStack, ctx: Option<usize>, seed: u64) -> (f64, f64) {
    let d = stack.dim();
    let z = ReferenceDist::StandardGaussian.sample(d, ROUND_TRIP_POINTS, seed, 0).unwrap();
    let mut tape = Tape::no_grad();
    let zn = tape.leaf(z.clone());
    let (x, ld_push) = stack.push(&mut tape, zn, ctx).unwrap();
    let (back, ld_pull) = stack.pull(&mut tape, x, ctx).unwrap();
    let err = (tape.value(back) - &z).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let anti = (tape.value(ld_push) + tape.value(ld_pull)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (err, anti)
}

fn c2_round_trip() -> Verdict {
    let mut worst = (0.0f64, 0.0f64);
    let mut n = 0;
    for depth in [8, 9, 16] {
        let specs = [
            FlowSpec::new(1, depth),
            FlowSpec::new(2, depth),
            FlowSpec::new(FA_D2, depth),
            FlowSpec::new(FA_D3, depth),
            FlowSpec::conditional(4, depth, 4),
            FlowSpec::conditional(2, depth, 2),
        ];
        for (i, spec) in specs.into_iter().enumerate() {
            let contexts = spec.contexts;
            let seed = (depth * 10 + i) as u64;
            let mut stack = FlowStack::new(spec, seed).unwrap();
            randomize(&mut stack, seed, 0.05);
            let ctxs: Vec<Option<usize>> = if contexts == 0 { vec![None] } else { (0..contexts).map(Some).collect() };
            for ctx in ctxs {
                let (e, a) = round_trip(&stack, ctx, seed);
                worst = (worst.0.max(e), worst.1.max(a));
                n += 1;
            }
        }
    }
    verdict(
        worst.0 < ROUND_TRIP_TOL && worst.1 < ROUND_TRIP_TOL,
        format!(
            "{n} stack/context pairs at L in {{8, 9, 16}}, {ROUND_TRIP_POINTS} points each: max round-trip {:.2e}, max logdet sum {:.2e} (< {ROUND_TRIP_TOL:.0e})",
            worst.0, worst.1
        ),
    )
}

// ---------------------------------------------------------------- 3

fn exact_maps() -> Vec<Arc<dyn Transport>> {
    (0..2).map(|k| Arc::new(sas::exact_map(k).unwrap()) as Arc<dyn Transport>).collect()
}

fn c3_exact_map() -> Verdict {
    let t = Instant::now();
    let kernel = TrjKernel::new(sas::family(), exact_maps(), IndexProposal::fixed(&sas::INDEX_PROPOSAL).unwrap()).unwrap();
    let rec = run_chain(
        Sampler {
            jump: &kernel,
            within: None,
        },
        None,
        EXACT_ITERS,
        31,
    )
    .unwrap();
    let max_dev = rec.moves.iter().map(|m| (m.alpha - 1.0).abs()).fold(0.0, f64::max);
    let p = *running_model_prob(&rec.ks[1..], 1, 2).unwrap().last().unwrap();
    let half = Z_99 * (SAS_TRUTH * (1.0 - SAS_TRUTH) / EXACT_ITERS as f64).sqrt();
    let elapsed = t.elapsed();
    verdict(
        rec.moves.len() == EXACT_ITERS && max_dev < EXACT_ALPHA_TOL && (p - SAS_TRUTH).abs() < half && elapsed < EXACT_BUDGET,
        format!(
            "{} proposals, max |alpha - 1| = {max_dev:.1e} (< {EXACT_ALPHA_TOL:.0e}); P(k=2) = {p:.5}, 99% CI [{:.5}, {:.5}]; {:.1}s (< {}s)",
            rec.moves.len(),
            SAS_TRUTH - half,
            SAS_TRUTH + half,
            elapsed.as_secs_f64(),
            EXACT_BUDGET.as_secs()
        ),
    )
}

// ---------------------------------------------------------------- 4

fn c4_trained_sas() -> Verdict {
    let t = Instant::now();
    let mut cfg = RunConfig::preset(Preset::Sas);
    cfg.seed = 4;
    let setup = cli::build_target(&cfg).unwrap();
    let flows = cli::train_flows(&cfg, &setup.family).unwrap();
    let losses: Vec<String> = flows.iter().map(|f| format!("{:.4}", f.outcome.final_loss())).collect();
    let maps = Transports::from_flows(flows);
    let (kernel, within) = cli::build_kernel(&cfg, &setup, &maps).unwrap();
    let rec = run_chain(
        Sampler {
            jump: kernel.as_ref(),
            within: Some(&within),
        },
        None,
        SAS_ITERS,
        44,
    )
    .unwrap();
    let p = *running_model_prob(&rec.ks[1..], 1, 2).unwrap().last().unwrap();
    let acc = rec.jump_acceptance().unwrap_or(0.0);
    let elapsed = t.elapsed();
    verdict(
        (p - SAS_TRUTH).abs() < SAS_PROB_TOL && acc > SAS_MIN_ACCEPT && elapsed < SAS_BUDGET,
        format!(
            "L = {:?}, final negative ELBO [{}]; P(k=2) over {SAS_ITERS} iterations = {p:.4} (0.75 +- {SAS_PROB_TOL}); jump acceptance {acc:.3} (> {SAS_MIN_ACCEPT}); {:.0}s (< {}s)",
            cfg.flow.depth,
            losses.join(", "),
            elapsed.as_secs_f64(),
            SAS_BUDGET.as_secs()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn c5_evidence() -> Verdict {
    let mut cfg = RunConfig::preset(Preset::Sas);
    cfg.seed = 5;
    cfg.trainer.lr = EVIDENCE_LR;
    cfg.diagnostics.evidence_samples = EVIDENCE_SAMPLES;
    let setup = cli::build_target(&cfg).unwrap();
    let maps = Transports::from_flows(cli::train_flows(&cfg, &setup.family).unwrap());
    let ev = cli::model_evidences(&cfg, &setup.family, &maps).unwrap();
    let mut pass = true;
    let parts: Vec<String> = ev
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let z = (e.estimate - 1.0) / e.std_error;
            pass &= z.abs() < EVIDENCE_Z && e.std_error < EVIDENCE_MAX_SE;
            format!("k={}: Z = {:.4} +- {:.4} ({z:+.2} SE)", k + 1, e.estimate, e.std_error)
        })
        .collect();
    verdict(
        pass,
        format!(
            "m = {EVIDENCE_SAMPLES}, lr {EVIDENCE_LR}: {} (|z| < {EVIDENCE_Z}, SE < {EVIDENCE_MAX_SE})",
            parts.join("; ")
        ),
    )
}

// ---------------------------------------------------------------- 6

/// Visit `(x, f(x))` for every point of the grid `lo[i] + h * j`,
/// `0 <= j < n`, on every axis.
fn for_grid(f: &dyn Fn(&[f64]) -> f64, lo: &[f64], n: usize, h: f64, mut visit: impl FnMut(&[f64], f64)) {
    let d = lo.len();
    let mut x = lo.to_vec();
    for idx in 0..n.pow(d as u32) {
        let mut r = idx;
        for (xi, l) in x.iter_mut().zip(lo) {
            *xi = l + (r % n) as f64 * h;
            r /= n;
        }
        visit(&x, f(&x));
    }
}

/// Dense-grid view of a posterior of dimension at most 4: the trapezoid
/// estimate of its log normalizing constant and a piecewise-constant proposal
/// (one uniform cell per grid point) for drawing exact posterior samples.
struct GridPosterior {
    log_z: f64,
    /// `log_z` recomputed at 1.25 times the spacing.
    log_z_check: f64,
    h: f64,
    centers: Vec<Vec<f64>>,
    /// Cumulative cell weights `exp(lp - top)`.
    cumulative: Vec<f64>,
    top: f64,
}

impl GridPosterior {
    /// The posteriors are multimodal, so the box comes from a coarse scan of
    /// `[SCAN_LO, SCAN_HI]^d`: every coarse point within `SCAN_WINDOW` nats of
    /// the maximum, padded by `SCAN_PAD`. Cells more than `KEEP_WINDOW` nats
    /// below the maximum are left out of the proposal.
    fn new(density: &dyn ModelDensity, spacing: f64) -> Self {
        const SCAN_LO: f64 = -15.0;
        const SCAN_HI: f64 = 20.0;
        const SCAN_H: f64 = 0.7;
        const SCAN_WINDOW: f64 = 40.0;
        const SCAN_PAD: f64 = 1.5;
        const KEEP_WINDOW: f64 = 30.0;
        let f = |x: &[f64]| density.log_density_point(x).unwrap();
        let d = density.dim();
        let n = ((SCAN_HI - SCAN_LO) / SCAN_H) as usize + 1;
        let mut coarse = Vec::with_capacity(n.pow(d as u32));
        for_grid(&f, &vec![SCAN_LO; d], n, SCAN_H, |_, v| coarse.push(v));
        let top = coarse.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for (idx, _) in coarse.iter().enumerate().filter(|p| *p.1 > top - SCAN_WINDOW) {
            let mut r = idx;
            for i in 0..d {
                let j = r % n;
                r /= n;
                assert!(j > 0 && j + 1 < n, "posterior mass at the scan boundary");
                let x = SCAN_LO + j as f64 * SCAN_H;
                lo[i] = lo[i].min(x - SCAN_PAD);
                hi[i] = hi[i].max(x + SCAN_PAD);
            }
        }
        let points = |h: f64| lo.iter().zip(&hi).map(|(l, u)| ((u - l) / h).ceil() as usize + 1).max().unwrap();
        let (mut centers, mut cumulative, mut sum) = (Vec::new(), Vec::new(), 0.0);
        for_grid(&f, &lo, points(spacing), spacing, |x, v| {
            let w = (v - top).exp();
            sum += w;
            if v > top - KEEP_WINDOW {
                centers.push(x.to_vec());
                cumulative.push(sum);
            }
        });
        let log_z = top + sum.ln() + d as f64 * spacing.ln();
        let check = 1.25 * spacing;
        let mut sum_check = 0.0;
        for_grid(&f, &lo, points(check), check, |_, v| sum_check += (v - top).exp());
        GridPosterior {
            log_z,
            log_z_check: top + sum_check.ln() + d as f64 * check.ln(),
            h: spacing,
            centers,
            cumulative,
            top,
        }
    }

    fn log_proposal(&self, cell: usize) -> f64 {
        let total = *self.cumulative.last().unwrap();
        let prev = if cell == 0 { 0.0 } else { self.cumulative[cell - 1] };
        ((self.cumulative[cell] - prev) / total).ln() - self.centers[cell].len() as f64 * self.h.ln()
    }

    fn propose(&self, rng: &mut rand_chacha::ChaCha8Rng) -> (Vec<f64>, f64) {
        let u = rng.random::<f64>() * self.cumulative.last().unwrap();
        let cell = self.cumulative.partition_point(|&c| c <= u).min(self.centers.len() - 1);
        let x = self.centers[cell].iter().map(|c| c + self.h * (rng.random::<f64>() - 0.5)).collect();
        (x, self.log_proposal(cell))
    }

    /// `n` posterior draws from an independence Metropolis-Hastings chain
    /// with the cell proposal, after `burn` discarded steps.
    fn sample(&self, density: &dyn ModelDensity, n: usize, burn: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, 0);
        let (mut x, lq) = self.propose(&mut rng);
        let mut lw = density.log_density_point(&x).unwrap() - self.top - lq;
        let mut out = Vec::with_capacity(n);
        for i in 0..n + burn {
            let (y, lq) = self.propose(&mut rng);
            let lw_y = density.log_density_point(&y).unwrap() - self.top - lq;
            if rng.random::<f64>().ln() < lw_y - lw {
                x = y;
                lw = lw_y;
            }
            if i >= burn {
                out.push(x.clone());
            }
        }
        out
    }
}

fn posterior_from_log_evidence(log_z: &[f64], prior: &[f64]) -> Vec<f64> {
    let lw: Vec<f64> = log_z.iter().zip(prior).map(|(z, p)| z + p.ln()).collect();
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn vs_config() -> RunConfig {
    let mut cfg = RunConfig::preset(Preset::VariableSelection);
    cfg.seed = 6;
    cfg.diagnostics.eval_states = VS_EVAL_STATES;
    cfg.diagnostics.replicates = VS_REPLICATES;
    cfg.diagnostics.eval_source = EvalSource::FlowIndependence;
    cfg
}

/// Trained conditional flow on the default variable-selection data, shared by
/// criteria 6 and 7.
fn vs_trained() -> &'static (Transports, f64, f64) {
    static CELL: std::sync::OnceLock<(Transports, f64, f64)> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = vs_config();
        let setup = cli::build_target(&cfg).unwrap();
        let t = Instant::now();
        let flows = cli::train_flows(&cfg, &setup.family).unwrap();
        let loss = flows[0].outcome.final_loss();
        (Transports::from_flows(flows), loss, t.elapsed().as_secs_f64())
    })
}

/// BBE replicates from posterior evaluation sets drawn with the grid sampler.
fn grid_bbe_replicates(kernel: &dyn JumpKernel, grids: &[GridPosterior], seed: u64) -> Vec<Vec<f64>> {
    let family = kernel.family();
    (0..VS_REPLICATES as u64)
        .map(|r| {
            let states: Vec<Vec<TransModelState>> = grids
                .iter()
                .enumerate()
                .map(|(k, g)| {
                    let draws = g.sample(family.models[k].density.as_ref(), VS_EVAL_STATES, VS_EVAL_BURN, seed + 100 * r + k as u64);
                    draws.into_iter().map(|theta| TransModelState::new(k, theta)).collect()
                })
                .collect();
            let acc = build_eval_set(kernel, &states, seed + 100 * r + 99).unwrap();
            bbe_estimate(&acc, &BbeOptions::default()).unwrap()
        })
        .collect()
}

/// The budget covers training, evaluation-set generation and both kernels'
/// replicates; the quadrature oracle and the flow-independence comparison are
/// timed separately.
fn c6_variable_selection() -> Verdict {
    let t = Instant::now();
    let cfg = vs_config();
    let setup = cli::build_target(&cfg).unwrap();
    let family = &setup.family;
    let grids: Vec<GridPosterior> = family.models.iter().map(|m| GridPosterior::new(m.density.as_ref(), VS_GRID_H)).collect();
    let log_z: Vec<f64> = grids.iter().map(|g| g.log_z).collect();
    let log_z_check: Vec<f64> = grids.iter().map(|g| g.log_z_check).collect();
    let oracle = posterior_from_log_evidence(&log_z, &family.prior());
    let oracle_drift = total_variation(&oracle, &posterior_from_log_evidence(&log_z_check, &family.prior()));
    let oracle_secs = t.elapsed().as_secs_f64();

    let (maps, loss, train_secs) = vs_trained();
    let t = Instant::now();
    let (ctp, _) = cli::build_kernel(&cfg, &setup, maps).unwrap();
    let mut sat_cfg = cfg.clone();
    sat_cfg.sampler.kernel = cli::KernelKind::Saturated;
    let (sat, _) = cli::build_kernel(&sat_cfg, &setup, maps).unwrap();
    let ctp_reps = grid_bbe_replicates(ctp.as_ref(), &grids, 600);
    let sat_reps = grid_bbe_replicates(sat.as_ref(), &grids, 600);
    let elapsed = t.elapsed() + Duration::from_secs_f64(*train_secs);
    // the sampler-side evaluation set, reported for comparison only
    let flow_reps = cli::bbe_replicates(&cfg, ctp.as_ref(), maps, &[]).unwrap();
    let mean = |reps: &[Vec<f64>]| -> Vec<f64> {
        (0..family.len()).map(|k| reps.iter().map(|r| r[k]).sum::<f64>() / reps.len() as f64).collect()
    };
    let (ctp_mean, sat_mean, flow_mean) = (mean(&ctp_reps), mean(&sat_reps), mean(&flow_reps));
    let tv = total_variation(&ctp_mean, &oracle);
    let full = |reps: &[Vec<f64>]| -> Vec<f64> { reps.iter().map(|r| r[VS_FULL_MODEL]).collect() };
    let (iqr_ctp, iqr_sat) = (interquartile_range(&full(&ctp_reps)), interquartile_range(&full(&sat_reps)));
    let fmt = |p: &[f64]| p.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ");
    verdict(
        tv < VS_TV_TOL && iqr_ctp < iqr_sat && elapsed < VS_BUDGET,
        format!(
            "grid oracle [{}] (drift {oracle_drift:.1e}); BBE over {VS_REPLICATES} x N={VS_EVAL_STATES} posterior evaluation sets: CTP [{}] TV {tv:.4} (< {VS_TV_TOL}), saturated [{}]; IQR of {} CTP {iqr_ctp:.4} vs saturated {iqr_sat:.4}; flow-independence evaluation sets give [{}] (TV {:.4}); training loss {loss:.3}, {:.0}s incl. {train_secs:.0}s training (< {}s); oracle {oracle_secs:.0}s",
            fmt(&oracle),
            fmt(&ctp_mean),
            fmt(&sat_mean),
            family.models[VS_FULL_MODEL].label,
            fmt(&flow_mean),
            total_variation(&flow_mean, &oracle),
            elapsed.as_secs_f64(),
            VS_BUDGET.as_secs()
        ),
    )
}

// ---------------------------------------------------------------- 7

/// Per-coordinate mean and variance of the auxiliary block of conditional
/// flow draws for every model that has one.
fn aux_moments(map: &dyn Transport, family: &TargetFamily) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::new();
    for (k, model) in family.models.iter().enumerate() {
        let aux: Vec<usize> = (0..family.d_max).filter(|&i| !model.mask[i]).collect();
        if aux.is_empty() {
            continue;
        }
        let z = ReferenceDist::StandardGaussian.sample(family.d_max, AUX_SAMPLES, 77, (k as u64) << 32).unwrap();
        let mut tape = Tape::no_grad();
        let zn = tape.leaf(z);
        let (x, _) = map.push(&mut tape, zn, Some(k)).unwrap();
        let x = tape.value(x);
        for &c in &aux {
            let col = x.column(c);
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            out.push((k, mean, var));
        }
    }
    out
}

fn toy_negative_elbo() -> f64 {
    let family = gaussian::two_model_toy();
    let mut stack = FlowStack::new(FlowSpec::conditional(2, 4, 2).with_hidden(vec![32]), 70).unwrap();
    let cfg = TrainerConfig {
        lr: 1e-3,
        max_iters: 3000,
        seed: 71,
        ..TrainerConfig::default()
    };
    conditional_train(&mut stack, &family, &cfg).unwrap();
    let m = 20_000;
    let ks: Vec<usize> = (0..m).map(|i| i % 2).collect();
    let eps = ReferenceDist::StandardGaussian.sample(2, m, 72, 0).unwrap();
    let mut tape = Tape::no_grad();
    let l = conditional_negative_elbo_with(&mut tape, &family, &ks, &eps, |t, n, k| stack.push(t, n, Some(k))).unwrap();
    tape.scalar_value(l)
}

fn c7_conditional_vi() -> Verdict {
    let (maps, _, _) = vs_trained();
    let Transports::Conditional(map) = maps else {
        return verdict(false, "variable-selection flow is not conditional".into());
    };
    let family = vs_family();
    let moments = aux_moments(map.as_ref(), &family);
    let aux_ok = moments
        .iter()
        .all(|&(_, m, v)| m.abs() < AUX_MEAN_TOL && (AUX_VAR_RANGE.0..=AUX_VAR_RANGE.1).contains(&v));
    let toy = toy_negative_elbo();
    let parts: Vec<String> = moments
        .iter()
        .map(|(k, m, v)| format!("{} {m:+.3}/{v:.3}", family.models[*k].label))
        .collect();
    verdict(
        aux_ok && toy < TOY_ELBO_TOL,
        format!(
            "aux mean/var [{}] (|mean| < {AUX_MEAN_TOL}, var in [{}, {}]); two-model toy negative ELBO {toy:.4} (< {TOY_ELBO_TOL})",
            parts.join(", "),
            AUX_VAR_RANGE.0,
            AUX_VAR_RANGE.1
        ),
    )
}

// ---------------------------------------------------------------- 8

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean and batch-means standard error of each column of `draws`.
fn batch_means(draws: &[Vec<f64>], batches: usize) -> Vec<(f64, f64)> {
    let n = draws.len() / batches * batches;
    let size = n / batches;
    (0..draws[0].len())
        .map(|c| {
            let bm: Vec<f64> = (0..batches)
                .map(|b| draws[b * size..(b + 1) * size].iter().map(|r| r[c]).sum::<f64>() / size as f64)
                .collect();
            let mean = bm.iter().sum::<f64>() / batches as f64;
            let var = bm.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
            (mean, (var / batches as f64).sqrt())
        })
        .collect()
}

/// Adaptive-then-fixed Gaussian random-walk Metropolis on `density`; returns
/// `keep(theta)` for each of `steps` post-adaptation iterations.
fn rwm_oracle(density: &dyn ModelDensity, steps: usize, seed: u64, keep: impl Fn(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
    let d = density.dim();
    let f = |x: &[f64]| density.log_density_point(x).unwrap_or(f64::NEG_INFINITY);
    let mut rng = stream(seed, 0);
    let mut x = vec![0.0; d];
    let mut fx = f(&x);
    let mut chol = DMatrix::<f64>::identity(d, d) * 0.01;
    let mut scale = 2.38 / (d as f64).sqrt();
    let step = |x: &[f64], chol: &DMatrix<f64>, scale: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let e = DVector::from_vec(ReferenceDist::StandardGaussian.draw(rng, d));
        let delta = chol * e * scale;
        x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect()
    };
    for _ in 0..6 {
        let mut hist = Vec::with_capacity(50_000);
        let mut acc = 0usize;
        for _ in 0..50_000 {
            let y = step(&x, &chol, scale, &mut rng);
            let fy = f(&y);
            if rng.random::<f64>().ln() < fy - fx {
                x = y;
                fx = fy;
                acc += 1;
            }
            hist.push(x.clone());
        }
        let rate = acc as f64 / 50_000.0;
        scale *= (rate / 0.234).clamp(0.5, 2.0).sqrt();
        let tail = &hist[hist.len() / 2..];
        let mean: Vec<f64> = (0..d).map(|c| tail.iter().map(|r| r[c]).sum::<f64>() / tail.len() as f64).collect();
        let cov = DMatrix::from_fn(d, d, |i, j| {
            tail.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (tail.len() - 1) as f64
        }) + DMatrix::identity(d, d) * 1e-10;
        if let Some(c) = cov.cholesky() {
            chol = c.l();
        }
    }
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let y = step(&x, &chol, scale, &mut rng);
        let fy = f(&y);
        if rng.random::<f64>().ln() < fy - fx {
            x = y;
            fx = fy;
        }
        out.push(keep(&x));
    }
    out
}

fn c8_factor_analysis() -> Verdict {
    let (d2, d3) = (factor::dim(2), factor::dim(3));
    let dims_ok = d2 == FA_D2 && d3 == FA_D3;

    let mut cfg = RunConfig::preset(Preset::FactorAnalysis);
    cfg.seed = 8;
    cfg.target.synthetic_data = true;
    cfg.target.factor_analysis.factors = vec![2];
    let setup = cli::build_target(&cfg).unwrap();
    let family = &setup.family;
    let density = family.models[0].density.clone();
    let lambda_idx: Vec<usize> = (FA_D2 - factor::P..FA_D2).collect();
    let keep = |x: &[f64]| lambda_idx.iter().map(|&i| softplus(x[i])).collect::<Vec<f64>>();

    let flows = cli::train_flows(&cfg, family).unwrap();
    let loss = flows[0].outcome.final_loss();
    let Transports::PerModel(maps) = Transports::from_flows(flows) else {
        return verdict(false, "expected a per-model flow".into());
    };
    let within = WithinModel::new(family, maps.clone(), cfg.sampler.within, 1).unwrap();
    let kernel = TrjKernel::new(family.clone(), maps, IndexProposal::uniform(1)).unwrap();
    let mut state: TransModelState = kernel.init(0).unwrap();
    let mut rng = stream(81, 0);
    let mut vi_draws = Vec::with_capacity(FA_VI_STEPS);
    let mut accept = 0.0;
    for _ in 0..FA_VI_STEPS {
        accept += within.update(family, &mut state, &mut rng).unwrap().iter().sum::<f64>();
        vi_draws.push(keep(&state.theta));
    }
    let oracle = rwm_oracle(density.as_ref(), FA_ORACLE_STEPS, 82, keep);
    let (vi, or) = (batch_means(&vi_draws[FA_VI_STEPS / 10..], 50), batch_means(&oracle, 100));
    let mut pass = dims_ok;
    let parts: Vec<String> = vi
        .iter()
        .zip(&or)
        .map(|(&(mv, sv), &(mo, so))| {
            let se = (sv * sv + so * so).sqrt();
            pass &= (mv - mo).abs() < FA_SE_MULT * se;
            format!("{mv:.4}/{mo:.4} ({:+.1} SE)", (mv - mo) / se)
        })
        .collect();
    verdict(
        pass,
        format!(
            "d2 = {d2}, d3 = {d3}; gradients in criterion 1; Lambda diagonal VI chain/RWM oracle: {} (within {FA_SE_MULT} SE); VI loss {loss:.3}, within acceptance {:.2}",
            parts.join(", "),
            accept / FA_VI_STEPS as f64
        ),
    )
}

// ---------------------------------------------------------------- 9

/// Random accumulator whose pairwise odds are consistent with `p`: for each
/// pair the mean acceptances satisfy `p(i) q(j|i) a_ij = p(j) q(i|j) a_ji`.
/// With two models every accumulator is consistent.
fn consistent_accumulator(rng: &mut rand_chacha::ChaCha8Rng, k: usize) -> BbeAccumulator {
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        })
        .collect();
    let p: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let q = IndexProposal::from_rows(rows).unwrap();
    let mut acc = BbeAccumulator::new(q.clone());
    for a in 0..k {
        for b in (a + 1)..k {
            let (fa, fb) = (p[a] * q.prob(a, b), p[b] * q.prob(b, a));
            let top = rng.random_range(0.05..1.0);
            let (a_ab, a_ba) = if fa > fb { (top * fb / fa, top) } else { (top, top * fa / fb) };
            acc.push(a, b, a_ab).unwrap();
            acc.push(b, a, a_ba).unwrap();
        }
    }
    acc
}

fn c9_bbe_algebra() -> Verdict {
    let mut rng = stream(9, 0);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let acc = if case % 2 == 0 {
            // two models, arbitrary acceptance samples
            let mut acc = BbeAccumulator::new(IndexProposal::uniform(2));
            for (a, b) in [(0, 1), (1, 0)] {
                for _ in 0..rng.random_range(1..20) {
                    acc.push(a, b, rng.random_range(0.01..1.0)).unwrap();
                }
            }
            acc
        } else {
            consistent_accumulator(&mut rng, 3 + case % 3)
        };
        let base = bbe_estimate(&acc, &BbeOptions::default()).unwrap();
        for anchor in 1..acc.models() {
            let p = bbe_estimate(&acc, &BbeOptions { anchor, prior_reweight: None }).unwrap();
            worst = base.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
    }
    // uniform q, E[alpha(0->1)] = 3/4, E[alpha(1->0)] = 1/4: p(0)/p(1) = 1/3
    let mut acc = BbeAccumulator::new(IndexProposal::uniform(2));
    acc.push(0, 1, 0.75).unwrap();
    acc.push(1, 0, 0.25).unwrap();
    let hand = bbe_estimate(&acc, &BbeOptions::default()).unwrap();
    let hand_err = (hand[0] - 0.25).abs().max((hand[1] - 0.75).abs());
    verdict(
        worst < ANCHOR_TOL && hand_err < HAND_TOL,
        format!(
            "max anchor discrepancy over 200 accumulators (K = 2 arbitrary, K = 3..5 odds-consistent) {worst:.1e} (< {ANCHOR_TOL:.0e}); hand case {hand:?}, error {hand_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 10

fn read_outputs(dir: &std::path::Path, m: &cli::Manifest) -> Vec<(String, Vec<u8>)> {
    m.outputs.keys().map(|k| (k.clone(), std::fs::read(dir.join(k)).unwrap())).collect()
}

fn c10_reproducibility() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let mut cfg = RunConfig::preset(Preset::Sas);
    cfg.seed = 10;
    cfg.out = first.clone();
    cfg.flow.hidden = vec![16];
    cfg.trainer.max_iters = 200;
    cfg.trainer.batch = 64;
    cfg.chain.iterations = 2000;
    cfg.diagnostics.replicates = 4;
    cfg.diagnostics.eval_states = 50;
    cfg.diagnostics.evidence_samples = 1000;
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for command in [Command::Train, Command::Sample, Command::Diagnose, Command::Evidence] {
        let m = cli::run(command, &cfg).unwrap();
        let before = read_outputs(&first, &m);
        let rerun_dir = tmp.path().join(format!("rerun_{}", command.name()));
        let mut again = RunConfig::load(&first.join(cli::MANIFEST_FILE), None).unwrap();
        again.out = rerun_dir.clone();
        let m2 = cli::run(command, &again).unwrap();
        let after = read_outputs(&rerun_dir, &m2);
        checked += before.len();
        if before != after || m.outputs != m2.outputs {
            mismatches.push(command.name());
        }
    }
    verdict(
        mismatches.is_empty() && checked > 0,
        format!("train/sample/diagnose/evidence rerun from manifest: {checked} files compared byte-for-byte, mismatching commands {mismatches:?}"),
    )
}
