//! Every example runs end to end in its quick mode.

#[allow(dead_code)]
#[path = "../examples/sas_exact_map.rs"]
mod sas_exact_map;

#[test]
fn sas_exact_map_quick() {
    sas_exact_map::run(true).unwrap();
}

#[allow(dead_code)]
#[path = "../examples/train_sas_flows.rs"]
mod train_sas_flows;

#[test]
fn train_sas_flows_quick() {
    train_sas_flows::run(true).unwrap();
}

#[allow(dead_code)]
#[path = "../examples/evidence.rs"]
mod evidence;

#[test]
fn evidence_quick() {
    evidence::run(true).unwrap();
}

#[allow(dead_code)]
#[path = "../examples/variable_selection_ctp.rs"]
mod variable_selection_ctp;

#[test]
fn variable_selection_ctp_quick() {
    variable_selection_ctp::run(true).unwrap();
}

#[allow(dead_code)]
#[path = "../examples/factor_analysis.rs"]
mod factor_analysis;

#[test]
fn factor_analysis_quick() {
    factor_analysis::run(true).unwrap();
}

#[allow(dead_code)]
#[path = "../examples/gradient_check.rs"]
mod gradient_check;

#[test]
fn gradient_check_quick() {
    gradient_check::run(true).unwrap();
}

#[allow(dead_code)]
#[path = "../examples/depth_ablation.rs"]
mod depth_ablation;

#[test]
fn depth_ablation_quick() {
    depth_ablation::run(true).unwrap();
}
