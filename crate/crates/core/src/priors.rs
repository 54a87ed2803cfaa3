//! Tree priors: standard and zero-inflated split probabilities, prior tree
//! draws, log prior densities, the split-location Dirichlet with its
//! concentration hyperprior, and interval-based selection priors.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::tree::{ExposureNode, ExposureTree, LagSet, TimeNode, TimeTree};

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `alpha (1 + depth)^{-beta}`.
pub fn split_prob_standard(depth: usize, alpha: f64, beta: f64) -> f64 {
    alpha * (1.0 + depth as f64).powf(-beta)
}

/// Root split probability `pi_0`: logistic of the mean of `gamma` over the lags.
pub fn root_split_prob(lags: LagSet, gamma: &[f64]) -> f64 {
    let mean = lags.iter().map(|l| gamma[l]).sum::<f64>() / lags.len() as f64;
    logistic(mean)
}

pub fn split_prob_zero_inflated(depth: usize, lags: LagSet, gamma: &[f64], alpha_e: f64, beta_e: f64) -> f64 {
    if depth == 0 {
        root_split_prob(lags, gamma)
    } else {
        split_prob_standard(depth, alpha_e, beta_e)
    }
}

/// Hyperparameters of the exposure-tree prior shared by every nested tree.
#[derive(Debug, Clone, Copy)]
pub struct ExposurePrior<'a> {
    pub gamma: &'a [f64],
    pub grid: &'a [f64],
    pub alpha: f64,
    pub beta: f64,
}

impl ExposurePrior<'_> {
    fn split_prob(&self, depth: usize, lags: LagSet) -> f64 {
        split_prob_zero_inflated(depth, lags, self.gamma, self.alpha, self.beta)
    }

    /// Grid indices strictly inside `(lower, upper)`.
    fn valid_range(&self, lower: f64, upper: f64) -> std::ops::Range<usize> {
        let start = self.grid.partition_point(|g| *g <= lower);
        let end = self.grid.partition_point(|g| *g < upper);
        start..end.max(start)
    }
}

pub fn draw_exposure_tree_from_prior<R: Rng + ?Sized>(
    lags: LagSet,
    prior: &ExposurePrior<'_>,
    rng: &mut R,
) -> ExposureTree {
    fn grow<R: Rng + ?Sized>(
        depth: usize,
        lower: f64,
        upper: f64,
        lags: LagSet,
        prior: &ExposurePrior<'_>,
        rng: &mut R,
    ) -> ExposureNode {
        let valid = prior.valid_range(lower, upper);
        if valid.is_empty() {
            return ExposureNode::Leaf;
        }
        let p = prior.split_prob(depth, lags);
        if rng.random::<f64>() >= p {
            return ExposureNode::Leaf;
        }
        let value = prior.grid[rng.random_range(valid)];
        let left = grow(depth + 1, lower, value, lags, prior, rng);
        let right = grow(depth + 1, value, upper, lags, prior, rng);
        ExposureNode::split(value, left, right)
    }
    let root = grow(0, f64::NEG_INFINITY, f64::INFINITY, lags, prior, rng);
    ExposureTree::from_root(root).expect("prior draws respect parent bounds")
}

pub fn log_exposure_tree_prior(tree: &ExposureTree, lags: LagSet, prior: &ExposurePrior<'_>) -> f64 {
    fn walk(node: &ExposureNode, depth: usize, lower: f64, upper: f64, lags: LagSet, prior: &ExposurePrior<'_>) -> f64 {
        let valid = prior.valid_range(lower, upper);
        let p = if valid.is_empty() {
            0.0
        } else {
            prior.split_prob(depth, lags)
        };
        match node {
            ExposureNode::Leaf => (1.0 - p).ln(),
            ExposureNode::Split { value, left, right } => {
                p.ln() - (valid.len() as f64).ln()
                    + walk(left, depth + 1, lower, *value, lags, prior)
                    + walk(right, depth + 1, *value, upper, lags, prior)
            }
        }
    }
    walk(tree.root(), 0, f64::NEG_INFINITY, f64::INFINITY, lags, prior)
}

/// Hyperparameters of the time-tree prior.
#[derive(Debug, Clone, Copy)]
pub struct TimePrior<'a> {
    pub split_probs: &'a [f64],
    pub alpha: f64,
    pub beta: f64,
}

impl TimePrior<'_> {
    pub fn split_prob(&self, depth: usize, lags: LagSet) -> f64 {
        if lags.len() < 2 {
            0.0
        } else {
            split_prob_standard(depth, self.alpha, self.beta)
        }
    }

    /// Probability of splitting at `at` given the node covers `lags`:
    /// the location probabilities renormalized over the valid locations.
    pub fn rule_prob(&self, lags: LagSet, at: usize) -> f64 {
        let total: f64 = lags.split_locations().map(|s| self.split_probs[s]).sum();
        self.split_probs[at] / total
    }

    pub fn draw_location<R: Rng + ?Sized>(&self, lags: LagSet, rng: &mut R) -> usize {
        let locs = lags.split_locations();
        let total: f64 = locs.clone().map(|s| self.split_probs[s]).sum();
        let mut u = rng.random::<f64>() * total;
        for s in locs.clone() {
            u -= self.split_probs[s];
            if u < 0.0 {
                return s;
            }
        }
        locs.end - 1
    }
}

pub fn log_time_tree_prior(tree: &TimeTree, prior: &TimePrior<'_>) -> f64 {
    fn walk(node: &TimeNode, depth: usize, lags: LagSet, prior: &TimePrior<'_>) -> f64 {
        let p = prior.split_prob(depth, lags);
        match node {
            TimeNode::Leaf(_) => (1.0 - p).ln(),
            TimeNode::Split { at, left, right } => {
                p.ln()
                    + prior.rule_prob(lags, *at).ln()
                    + walk(left, depth + 1, LagSet::new(lags.first, *at), prior)
                    + walk(right, depth + 1, LagSet::new(at + 1, lags.last), prior)
            }
        }
    }
    walk(tree.root(), 0, tree.full_lags(), prior)
}

/// Time tree drawn from its prior; every terminal node gets an unsplit
/// exposure tree.
pub fn draw_time_tree_from_prior<R: Rng + ?Sized>(max_lag: usize, prior: &TimePrior<'_>, rng: &mut R) -> TimeTree {
    fn grow<R: Rng + ?Sized>(depth: usize, lags: LagSet, prior: &TimePrior<'_>, rng: &mut R) -> TimeNode {
        let p = prior.split_prob(depth, lags);
        if rng.random::<f64>() >= p {
            return TimeNode::Leaf(ExposureTree::single());
        }
        let at = prior.draw_location(lags, rng);
        TimeNode::split(
            at,
            grow(depth + 1, LagSet::new(lags.first, at), prior, rng),
            grow(depth + 1, LagSet::new(at + 1, lags.last), prior, rng),
        )
    }
    TimeTree::new(grow(0, LagSet::new(0, max_lag), prior, rng), max_lag).expect("prior draws are valid")
}

/// Dirichlet prior on split locations with concentration `kappa`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitLocationPrior {
    pub probs: Vec<f64>,
    pub weights: Vec<f64>,
    pub kappa: f64,
    pub kappa_fixed: bool,
}

impl SplitLocationPrior {
    pub fn new(weights: Vec<f64>, kappa: f64, kappa_fixed: bool) -> Self {
        Self {
            probs: weights.clone(),
            weights,
            kappa,
            kappa_fixed,
        }
    }

    fn log_dirichlet_density(&self, kappa: f64) -> f64 {
        let alpha: Vec<f64> = self.weights.iter().map(|d| d * kappa).collect();
        ln_gamma(alpha.iter().sum())
            + alpha
                .iter()
                .zip(&self.probs)
                .map(|(a, p)| (a - 1.0) * p.ln() - ln_gamma(*a))
                .sum::<f64>()
    }
}

/// `probs | counts ~ Dirichlet(weights * kappa + counts)`, then (unless
/// fixed) one independence MH step for `kappa` with a uniform proposal on
/// `kappa / (kappa + L)`, the scale of its Beta(1, 1) prior.
pub fn update_split_location_prior<R: Rng + ?Sized>(
    split_counts: &[usize],
    prior: &SplitLocationPrior,
    rng: &mut R,
) -> SplitLocationPrior {
    let len = prior.weights.len();
    if len == 0 {
        return prior.clone();
    }
    let shapes: Vec<f64> = prior
        .weights
        .iter()
        .zip(split_counts)
        .map(|(d, c)| d * prior.kappa + *c as f64)
        .collect();
    let mut next = prior.clone();
    next.probs = sample_dirichlet(&shapes, rng);

    if !prior.kappa_fixed {
        let l = len as f64;
        let rho: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
        let proposal = l * rho / (1.0 - rho);
        let log_ratio = next.log_dirichlet_density(proposal) - next.log_dirichlet_density(next.kappa);
        if rng.random::<f64>().ln() < log_ratio {
            next.kappa = proposal;
        }
    }
    next
}

/// Dirichlet draw computed in log space so tiny shapes cannot underflow
/// to exact zeros.
pub fn sample_dirichlet<R: Rng + ?Sized>(shapes: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = shapes
        .iter()
        .map(|&a| {
            if a >= 1.0 {
                let g: f64 = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
                g.ln()
            } else {
                let g: f64 = Gamma::new(a + 1.0, 1.0).expect("positive shape").sample(rng);
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                g.ln() + u.ln() / a
            }
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|v| (v - max).exp().max(f64::MIN_POSITIVE)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// Normal prior on the logit scale whose central 95% maps to `(low, high)`.
/// Returns `(mean, variance)`.
pub fn selection_prior_from_interval(low: f64, high: f64) -> Result<(f64, f64)> {
    if !(0.0 < low && low < high && high < 1.0) {
        return Err(Error::param(format!(
            "selection interval must satisfy 0 < low < high < 1, got ({low}, {high})"
        )));
    }
    let (a, b) = (logit(low), logit(high));
    let mean = 0.5 * (a + b);
    let sd = (b - a) / (2.0 * 1.96);
    Ok((mean, sd * sd))
}
