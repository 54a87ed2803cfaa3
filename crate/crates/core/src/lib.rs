//! Monotone treed distributed lag nonlinear models.
//!
//! The exposure-lag-response surface `w(x, l)` is modelled by an ensemble of
//! nested tree units. Each unit partitions the lag axis with a *time tree*;
//! every terminal lag interval owns a univariate *exposure tree* whose ordered
//! bins carry nonnegative increments. Cumulating the increments gives
//! nondecreasing bin levels, so every surface the sampler visits is monotone
//! in exposure. A zero-inflated root-split prior turns "this exposure tree
//! never split" into "no effect at these lags", which yields per-lag
//! susceptibility probabilities.
//!
//! Module map:
//!
//! - [`data`], [`tree`], [`config`]: domain types and structural transforms.
//! - [`weights`]: the Gaussian-CDF smooth bin weight and unit design matrices.
//! - [`samplers`]: truncated normal, orthant probability, Pólya-gamma and
//!   half-Cauchy kernels plus the seeded RNG streams.
//! - [`priors`]: tree priors, prior draws and the split-location Dirichlet.
//! - [`mcmc`]: the hybrid Gibbs/Metropolis-Hastings sampler.
//! - [`inference`]: posterior summaries and Gelman-Rubin diagnostics.
//! - [`simstudy`]: simulation scenarios and evaluation metrics.
//! - [`cli`]: the command implementations behind the `mtdlnm` binary.

// `!(x > 0.0)` is used on purpose so NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod inference;
pub mod mcmc;
pub mod priors;
pub mod samplers;
pub mod simstudy;
pub mod tree;
pub mod weights;

pub use config::{HyperState, KappaMode, ModelConfig, OutcomeFamily};
pub use data::{build_lagged_design, LaggedDataset};
pub use error::{Error, Result};
pub use tree::{Ensemble, ExposureTree, LagSet, NestedTreeUnit, TimeTree};
