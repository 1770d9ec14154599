//! Retrain the sinh-arcsinh flows at several depths and tabulate the final
//! negative ELBO and evidence per depth, as `trj ablate` does.
//!
//! `cargo run --release --example depth_ablation [-- --quick]`

use std::fs;

use transport_rj::cli::{self, Command, Preset, RunConfig};

pub fn run(quick: bool) -> transport_rj::Result<()> {
    let dir = std::env::temp_dir().join(format!("trj_depth_ablation_{}", std::process::id()));
    let mut cfg = RunConfig::preset(Preset::Sas);
    cfg.out = dir.clone();
    cfg.seed = 12;
    cfg.trainer.lr = 1e-3;
    if quick {
        cfg.flow.hidden = vec![8];
        cfg.ablation.depths = vec![1, 2];
        cfg.trainer.max_iters = 100;
        cfg.trainer.batch = 32;
        cfg.diagnostics.evidence_samples = 500;
    } else {
        cfg.flow.hidden = vec![64];
        cfg.trainer.max_iters = 3_000;
    }
    cli::run(Command::Ablate, &cfg)?;
    print!("{}", fs::read_to_string(dir.join("ablation.csv"))?);
    fs::remove_dir_all(&dir)?;
    Ok(())
}

fn main() -> transport_rj::Result<()> {
    run(std::env::args().any(|a| a == "--quick"))
}
