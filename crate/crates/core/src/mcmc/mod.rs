//! The hybrid Gibbs / Metropolis-Hastings sampler.
//!
//! Per iteration each unit gets one time-tree move, one prior-proposal move
//! per nested exposure tree and a block draw of its increments, all against
//! the partial residual of the other units with the covariate coefficients
//! integrated out. The selection logits, split-location probabilities,
//! variances and covariate coefficients (or binomial augmentation) follow.

pub mod chain;
pub mod marginal;
pub mod moves;
pub mod projection;
pub mod updates;

pub use chain::{
    is_monotone, run_chain, run_chains, ChainDiagnostics, ChainOutput, ChainState, PosteriorDraw, PreparedModel,
};
pub use marginal::{log_marginal, sample_theta_block, ThetaConditional};
pub use moves::{MoveStats, Tally};
pub use projection::ProjectionCache;
pub use updates::{update_binomial_augmentation, update_gamma};
