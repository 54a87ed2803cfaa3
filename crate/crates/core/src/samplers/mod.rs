//! Numerical sampling kernels shared by the MCMC updates.

pub mod halfcauchy;
pub mod normal;
pub mod polya_gamma;
pub mod rng;
pub mod tmvn;
pub mod truncnorm;

pub use halfcauchy::update_halfcauchy_variance;
pub use polya_gamma::sample_polya_gamma;
pub use rng::RngStream;
pub use tmvn::{log_orthant_prob, sample_tmvn_nonneg};
