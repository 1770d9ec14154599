//! Reversible-jump MCMC with variationally trained transport maps.
//!
//! Each model's posterior is pushed to a common reference distribution by a
//! normalizing flow fitted with reverse-KL variational inference. Jumps
//! between models then move through reference space, where the models look
//! alike, so proposals are accepted at high rates. With exact maps the
//! acceptance probability depends on the model index alone.
//!
//! * [`grad`]: reverse-mode tape and MLPs.
//! * [`reference`]: Gaussian and Student-t reference distributions.
//! * [`flows`]: affine-coupling stacks, conditional flows, exact SAS maps.
//! * [`targets`]: sinh-arcsinh, factor-analysis and variable-selection families.
//! * [`vi`]: training, Adam, importance-sampling evidence.
//! * [`rjmcmc`]: transport, conditional-transport and saturated-space kernels.
//! * [`diagnostics`]: running model probabilities and the bridge estimator.
//! * [`cli`]: configuration, run manifests and the `trj` commands.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod flows;
pub mod grad;
pub mod reference;
pub mod rng;
pub mod rjmcmc;
pub mod targets;
pub mod vi;

pub use error::{Error, Result};
