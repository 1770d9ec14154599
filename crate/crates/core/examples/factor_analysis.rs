//! Two- versus three-factor Bayesian factor analysis on simulated returns:
//! per-model flows, their evidence, and a short transport reversible-jump run.
//!
//! `cargo run --release --example factor_analysis [-- --quick]`

use transport_rj::cli::{self, Preset, RunConfig, Transports};
use transport_rj::rjmcmc::{run_chain, Sampler};
use transport_rj::targets::factor;

pub fn run(quick: bool) -> transport_rj::Result<()> {
    let mut cfg = RunConfig::preset(Preset::FactorAnalysis);
    cfg.seed = 8;
    cfg.target.synthetic_data = true;
    if quick {
        cfg.flow.hidden = vec![16];
        cfg.flow.depth = vec![2];
        cfg.trainer.max_iters = 100;
        cfg.trainer.batch = 32;
        cfg.diagnostics.evidence_samples = 500;
    }
    println!("dimensions: 2 factors {}, 3 factors {}", factor::dim(2), factor::dim(3));
    let setup = cli::build_target(&cfg)?;
    let flows = cli::train_flows(&cfg, &setup.family)?;
    let maps = Transports::from_flows(flows);
    let evidence = cli::model_evidences(&cfg, &setup.family, &maps)?;
    for (m, e) in setup.family.models.iter().zip(&evidence) {
        println!("{}: log Z {:.3} (relative SE {:.3})", m.label, e.log_estimate, e.rel_std_error);
    }
    let (kernel, within) = cli::build_kernel(&cfg, &setup, &maps)?;
    let iterations = if quick { 500 } else { 20_000 };
    let record = run_chain(Sampler { jump: kernel.as_ref(), within: Some(&within) }, None, iterations, 81)?;
    println!("model frequencies: {:?}", record.model_frequencies(setup.family.len(), iterations / 10));
    println!("jump acceptance:   {:.4}", record.jump_acceptance().unwrap_or(f64::NAN));
    Ok(())
}

fn main() -> transport_rj::Result<()> {
    run(std::env::args().any(|a| a == "--quick"))
}
