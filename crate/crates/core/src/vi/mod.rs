//! Reverse-KL variational fitting of transport maps and the evidence
//! estimates they yield.

mod adam;
mod elbo;
mod evidence;
mod train;

pub use adam::Adam;
pub use elbo::{augmented_log_target, conditional_negative_elbo_with, negative_elbo, negative_elbo_with};
pub use evidence::{
    elbo_model_weights, estimate_evidence, estimate_evidence_conditional, log_weights,
    rejection_free_from_log, rejection_free_index_proposal, Evidence,
};
pub use train::{
    conditional_train, minibatch_models, optimize, sgvi_train, ElboTrace, TraceRow, TrainOutcome,
    TrainerConfig,
};
