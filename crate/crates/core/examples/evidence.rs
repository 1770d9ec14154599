//! Importance-sampling evidence of each model using a trained flow as the
//! proposal, and the index proposal that would make every jump of an exact
//! transport sampler accepted.
//!
//! `cargo run --release --example evidence [-- --quick]`

use transport_rj::cli::{self, Preset, RunConfig, Transports};
use transport_rj::vi::{elbo_model_weights, rejection_free_index_proposal};

pub fn run(quick: bool) -> transport_rj::Result<()> {
    let mut cfg = RunConfig::preset(Preset::Sas);
    cfg.seed = 5;
    cfg.trainer.lr = 1e-3;
    if quick {
        cfg.flow.hidden = vec![16];
        cfg.flow.depth = vec![2, 2];
        cfg.trainer.max_iters = 300;
        cfg.trainer.batch = 64;
        cfg.diagnostics.evidence_samples = 2_000;
    }
    let setup = cli::build_target(&cfg)?;
    let flows = cli::train_flows(&cfg, &setup.family)?;
    let losses: Vec<f64> = flows.iter().map(|f| f.outcome.final_loss()).collect();
    let evidence = cli::model_evidences(&cfg, &setup.family, &Transports::from_flows(flows))?;
    println!("{:<8} {:>10} {:>10} {:>10}", "model", "Z", "SE", "ELBO");
    for (m, e) in setup.family.models.iter().zip(&evidence) {
        println!("{:<8} {:>10.4} {:>10.4} {:>10.4}", m.label, e.estimate, e.std_error, e.elbo);
    }
    let prior = setup.family.prior();
    let z: Vec<f64> = evidence.iter().map(|e| e.estimate).collect();
    println!("rejection-free q: {:?}", rejection_free_index_proposal(&z, &prior)?);
    println!("ELBO weights:     {:?}", elbo_model_weights(&losses, &prior)?);
    Ok(())
}

fn main() -> transport_rj::Result<()> {
    run(std::env::args().any(|a| a == "--quick"))
}
