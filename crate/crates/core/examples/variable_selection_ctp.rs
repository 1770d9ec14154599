//! Bayesian variable selection with a single conditional flow over the
//! saturated parameter space. Compares bridge-estimator replicates of the
//! model probabilities from the conditional transport proposal with those of
//! the plain saturated-space sampler on the same evaluation states.
//!
//! `cargo run --release --example variable_selection_ctp [-- --quick]`

use transport_rj::cli::{self, KernelKind, Preset, RunConfig, Transports};
use transport_rj::diagnostics::interquartile_range;

pub fn run(quick: bool) -> transport_rj::Result<()> {
    let mut cfg = RunConfig::preset(Preset::VariableSelection);
    cfg.seed = 6;
    if quick {
        cfg.flow.hidden = vec![16];
        cfg.flow.depth = vec![2];
        cfg.trainer.max_iters = 200;
        cfg.trainer.batch = 64;
        cfg.diagnostics.eval_states = 50;
        cfg.diagnostics.replicates = 4;
    }
    let setup = cli::build_target(&cfg)?;
    let flows = cli::train_flows(&cfg, &setup.family)?;
    println!("conditional flow: negative ELBO {:.3} after {} iterations", flows[0].outcome.final_loss(), flows[0].outcome.iterations);
    let maps = Transports::from_flows(flows);
    let (ctp, _) = cli::build_kernel(&cfg, &setup, &maps)?;
    let mut sat_cfg = cfg.clone();
    sat_cfg.sampler.kernel = KernelKind::Saturated;
    let (saturated, _) = cli::build_kernel(&sat_cfg, &setup, &maps)?;
    let labels = setup.family.labels();
    for (name, kernel) in [("conditional transport", &ctp), ("saturated", &saturated)] {
        let reps = cli::bbe_replicates(&cfg, kernel.as_ref(), &maps, &[])?;
        println!("{name}:");
        for (k, label) in labels.iter().enumerate() {
            let col: Vec<f64> = reps.iter().map(|r| r[k]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            println!("  {label}  mean {mean:.4}  IQR {:.4}", interquartile_range(&col));
        }
    }
    Ok(())
}

fn main() -> transport_rj::Result<()> {
    run(std::env::args().any(|a| a == "--quick"))
}
