//! Finite-difference check of the reverse-mode gradient of a flow's negative
//! ELBO with respect to every flow parameter.
//!
//! `cargo run --release --example gradient_check [-- --quick]`

use transport_rj::flows::{FlowSpec, FlowStack};
use transport_rj::grad::{check, ParamStore, Tape};
use transport_rj::targets::sas;
use transport_rj::vi::negative_elbo_with;
use transport_rj::reference::ReferenceDist;

pub fn run(quick: bool) -> transport_rj::Result<()> {
    let family = sas::family();
    let density = family.models[1].density.clone();
    let hidden = if quick { 4 } else { 16 };
    let mut stack = FlowStack::new(FlowSpec::new(2, 4).with_hidden(vec![hidden]), 9)?;
    // move off the identity initialization so every layer contributes
    let flat: Vec<f64> = stack.store().to_flat().iter().enumerate().map(|(i, v)| v + 0.05 * ((i as f64) * 0.7).sin()).collect();
    stack.store_mut().set_flat(&flat)?;
    let reference = ReferenceDist::StandardGaussian;
    let z = reference.sample(2, 8, 3, 0)?;
    let f = |s: &ParamStore, t: &mut Tape| negative_elbo_with(t, &z, reference, density.as_ref(), |t, n| stack.apply_with(s, t, n, None, false));
    let report = if quick { check::params_sampled(stack.store(), f, 64, 1)? } else { check::params(stack.store(), f)? };
    println!("checked {} of {} parameters", report.checked, stack.store().num_scalars());
    println!("max relative error {:.2e}", report.max_rel_err);
    if let Some((i, a, n)) = report.worst {
        println!("worst coordinate {i}: analytic {a:.10e}, central difference {n:.10e}");
    }
    Ok(())
}

fn main() -> transport_rj::Result<()> {
    run(std::env::args().any(|a| a == "--quick"))
}
