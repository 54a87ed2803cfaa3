//! Metropolis-Hastings moves on one unit's trees.
//!
//! Increments are integrated out, so each move compares marginal
//! likelihoods. Both sides of a ratio use the same orthant-probability
//! substream.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::marginal::{sample_theta_prior, ThetaConditional};
use super::projection::ProjectionCache;
use crate::error::Result;
use crate::priors::{
    draw_exposure_tree_from_prior, log_exposure_tree_prior, log_time_tree_prior, ExposurePrior, TimePrior,
};
use crate::tree::TimeTree;
use crate::weights::{hstack, SplitBasis};

/// Proposal and acceptance tallies for one move type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Tally {
    pub proposed: u64,
    pub accepted: u64,
}

impl Tally {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn merge(&mut self, other: &Tally) {
        self.proposed += other.proposed;
        self.accepted += other.accepted;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MoveStats {
    pub grow: Tally,
    pub prune: Tally,
    pub change: Tally,
    pub exposure: Tally,
}

impl MoveStats {
    pub fn merge(&mut self, other: &MoveStats) {
        self.grow.merge(&other.grow);
        self.prune.merge(&other.prune);
        self.change.merge(&other.change);
        self.exposure.merge(&other.exposure);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeMove {
    Grow,
    Prune,
    Change,
}

/// A unit configuration with its design blocks and increment conditional.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub tree: TimeTree,
    /// Transformed design block of each nested tree, left to right.
    pub blocks: Vec<DMatrix<f64>>,
    pub cond: Option<ThetaConditional>,
}

impl Candidate {
    pub fn design(&self, n: usize) -> DMatrix<f64> {
        hstack(n, &self.blocks)
    }
}

/// Everything a unit update reads but does not change.
pub struct UnitContext<'a> {
    pub basis: &'a SplitBasis,
    pub proj: &'a ProjectionCache,
    /// `V_Z^{-1} R_a`.
    pub pr: &'a DVector<f64>,
    pub exposure_prior: ExposurePrior<'a>,
    pub time_prior: TimePrior<'a>,
    pub sigma: f64,
    pub nu: f64,
    pub mc_size: usize,
    pub sweeps: usize,
    /// Treat the likelihood as constant.
    pub prior_only: bool,
}

impl UnitContext<'_> {
    fn n(&self) -> usize {
        self.pr.len()
    }

    pub fn candidate(&self, tree: TimeTree, blocks: Vec<DMatrix<f64>>) -> Result<Candidate> {
        let cond = if self.prior_only {
            None
        } else {
            Some(ThetaConditional::new(
                &hstack(self.n(), &blocks),
                self.pr,
                self.proj,
                self.nu,
            )?)
        };
        Ok(Candidate { tree, blocks, cond })
    }

    pub fn fresh_blocks(&self, tree: &TimeTree) -> Vec<DMatrix<f64>> {
        tree.terminal_lag_sets()
            .into_iter()
            .zip(tree.exposure_trees())
            .map(|(lags, e)| self.basis.block(e, lags))
            .collect()
    }

    /// `ln p(R | proposal) - ln p(R | current)` under a shared substream.
    pub fn log_ml_ratio<R: RngCore + ?Sized>(
        &self,
        current: &Candidate,
        proposal: &Candidate,
        rng: &mut R,
    ) -> Result<f64> {
        let (Some(cur), Some(prop)) = (&current.cond, &proposal.cond) else {
            return Ok(0.0);
        };
        let seed = rng.next_u64();
        let a = prop.log_integral(self.sigma, self.nu, self.mc_size, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let b = cur.log_integral(self.sigma, self.nu, self.mc_size, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(a - b)
    }

    /// Prior-proposal replacement of nested tree `leaf`. Returns the
    /// log acceptance ratio alongside the decision.
    pub fn exposure_move<R: Rng + ?Sized>(
        &self,
        current: &mut Candidate,
        leaf: usize,
        rng: &mut R,
    ) -> Result<(bool, f64)> {
        let lags = current.tree.terminal_lag_sets()[leaf];
        let proposal_tree = draw_exposure_tree_from_prior(lags, &self.exposure_prior, rng);
        let mut tree = current.tree.clone();
        let mut blocks = current.blocks.clone();
        blocks[leaf] = self.basis.block(&proposal_tree, lags);
        *tree.exposure_tree_mut(leaf) = proposal_tree;
        let proposal = self.candidate(tree, blocks)?;
        let log_r = self.log_ml_ratio(current, &proposal, rng)?;
        let accept = accept(log_r, rng);
        if accept {
            *current = proposal;
        }
        Ok((accept, log_r))
    }

    /// One grow, prune or change proposal on the time tree, chosen uniformly
    /// among the moves valid for the current tree. `None` when no move is
    /// available.
    pub fn time_move<R: Rng + ?Sized>(
        &self,
        current: &mut Candidate,
        rng: &mut R,
    ) -> Result<Option<(TimeMove, bool, f64)>> {
        let moves = valid_moves(&current.tree);
        if moves.is_empty() {
            return Ok(None);
        }
        let kind = moves[rng.random_range(0..moves.len())];
        let proposal = match kind {
            TimeMove::Grow => self.propose_grow(current, rng)?,
            TimeMove::Prune => self.propose_prune(current, rng)?,
            TimeMove::Change => self.propose_change(current, rng)?,
        };
        let Some((proposal, log_structure)) = proposal else {
            return Ok(Some((kind, false, f64::NEG_INFINITY)));
        };
        let log_r = log_structure + self.log_ml_ratio(current, &proposal, rng)?;
        let accepted = accept(log_r, rng);
        if accepted {
            *current = proposal;
        }
        Ok(Some((kind, accepted, log_r)))
    }

    fn propose_grow<R: Rng + ?Sized>(&self, current: &Candidate, rng: &mut R) -> Result<Option<(Candidate, f64)>> {
        let tree = &current.tree;
        let splittable = splittable_leaves(tree);
        let leaf = splittable[rng.random_range(0..splittable.len())];
        let lags = tree.terminal_lag_sets()[leaf];
        let at = self.time_prior.draw_location(lags, rng);
        let (left_lags, right_lags) = (
            crate::tree::LagSet::new(lags.first, at),
            crate::tree::LagSet::new(at + 1, lags.last),
        );
        let left = draw_exposure_tree_from_prior(left_lags, &self.exposure_prior, rng);
        let right = draw_exposure_tree_from_prior(right_lags, &self.exposure_prior, rng);
        let mut blocks = current.blocks.clone();
        blocks.splice(
            leaf..=leaf,
            [self.basis.block(&left, left_lags), self.basis.block(&right, right_lags)],
        );
        let new_tree = tree.grow(leaf, at, left, right)?;
        let log_fwd = -(valid_moves(tree).len() as f64).ln() - (splittable.len() as f64).ln()
            + self.time_prior.rule_prob(lags, at).ln();
        let log_rev = -(valid_moves(&new_tree).len() as f64).ln() - (prunable_nodes(&new_tree).len() as f64).ln();
        let log_prior = log_time_tree_prior(&new_tree, &self.time_prior) - log_time_tree_prior(tree, &self.time_prior);
        Ok(Some((self.candidate(new_tree, blocks)?, log_prior + log_rev - log_fwd)))
    }

    fn propose_prune<R: Rng + ?Sized>(&self, current: &Candidate, rng: &mut R) -> Result<Option<(Candidate, f64)>> {
        let tree = &current.tree;
        let internals = tree.internal_nodes();
        let prunable = prunable_nodes(tree);
        let idx = prunable[rng.random_range(0..prunable.len())];
        let node = internals[idx];
        let merged = draw_exposure_tree_from_prior(node.lags, &self.exposure_prior, rng);
        let mut blocks = current.blocks.clone();
        blocks.splice(
            node.first_leaf..=node.first_leaf + 1,
            [self.basis.block(&merged, node.lags)],
        );
        let new_tree = tree.prune(idx, merged)?;
        let log_fwd = -(valid_moves(tree).len() as f64).ln() - (prunable.len() as f64).ln();
        let log_rev = -(valid_moves(&new_tree).len() as f64).ln() - (splittable_leaves(&new_tree).len() as f64).ln()
            + self.time_prior.rule_prob(node.lags, node.at).ln();
        let log_prior = log_time_tree_prior(&new_tree, &self.time_prior) - log_time_tree_prior(tree, &self.time_prior);
        Ok(Some((self.candidate(new_tree, blocks)?, log_prior + log_rev - log_fwd)))
    }

    fn propose_change<R: Rng + ?Sized>(&self, current: &Candidate, rng: &mut R) -> Result<Option<(Candidate, f64)>> {
        let tree = &current.tree;
        let internals = tree.internal_nodes();
        let idx = rng.random_range(0..internals.len());
        let node = internals[idx];
        let at = self.time_prior.draw_location(node.lags, rng);
        let Some(new_tree) = tree.change(idx, at) else {
            return Ok(None);
        };
        let log_fwd = -(valid_moves(tree).len() as f64).ln() + self.time_prior.rule_prob(node.lags, at).ln();
        let log_rev = -(valid_moves(&new_tree).len() as f64).ln() + self.time_prior.rule_prob(node.lags, node.at).ln();
        let log_prior = log_time_tree_prior(&new_tree, &self.time_prior) - log_time_tree_prior(tree, &self.time_prior);
        // nested trees keep their shape but their root-split probability
        // follows the new lag sets
        let old_sets = tree.terminal_lag_sets();
        let new_sets = new_tree.terminal_lag_sets();
        let mut log_nested = 0.0;
        for (k, e) in tree.exposure_trees().into_iter().enumerate() {
            if old_sets[k] != new_sets[k] {
                log_nested += log_exposure_tree_prior(e, new_sets[k], &self.exposure_prior)
                    - log_exposure_tree_prior(e, old_sets[k], &self.exposure_prior);
            }
        }
        let blocks = if new_sets == old_sets {
            current.blocks.clone()
        } else {
            self.fresh_blocks(&new_tree)
        };
        Ok(Some((
            self.candidate(new_tree, blocks)?,
            log_prior + log_nested + log_rev - log_fwd,
        )))
    }

    /// Increment draw for the accepted configuration.
    pub fn draw_theta<R: Rng + ?Sized>(&self, current: &Candidate, rng: &mut R) -> DVector<f64> {
        match &current.cond {
            Some(c) => c.sample(self.sigma, self.sweeps, rng),
            None => {
                let p: usize = current.blocks.iter().map(|b| b.ncols()).sum();
                sample_theta_prior(p, self.sigma, self.nu, rng)
            }
        }
    }
}

fn accept<R: Rng + ?Sized>(log_r: f64, rng: &mut R) -> bool {
    if log_r >= 0.0 {
        return true;
    }
    if log_r.is_nan() {
        return false;
    }
    rng.random::<f64>().ln() < log_r
}

/// Terminal nodes with at least two lags.
pub fn splittable_leaves(tree: &TimeTree) -> Vec<usize> {
    tree.terminal_lag_sets()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.len() >= 2)
        .map(|(i, _)| i)
        .collect()
}

/// Preorder indices of internal nodes whose children are both terminal.
pub fn prunable_nodes(tree: &TimeTree) -> Vec<usize> {
    tree.internal_nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.prunable)
        .map(|(i, _)| i)
        .collect()
}

pub fn valid_moves(tree: &TimeTree) -> Vec<TimeMove> {
    let mut out = Vec::with_capacity(3);
    if !splittable_leaves(tree).is_empty() {
        out.push(TimeMove::Grow);
    }
    if !tree.internal_nodes().is_empty() {
        out.push(TimeMove::Prune);
        out.push(TimeMove::Change);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lag_zero_has_no_time_moves() {
        assert!(valid_moves(&TimeTree::single(0)).is_empty());
    }

    #[test]
    fn move_availability() {
        let t = TimeTree::from_splits(1, &[0]).unwrap();
        // two single-lag leaves: nothing to grow
        assert_eq!(valid_moves(&t), vec![TimeMove::Prune, TimeMove::Change]);
        let t = TimeTree::from_splits(5, &[2]).unwrap();
        assert_eq!(valid_moves(&t).len(), 3);
        assert_eq!(prunable_nodes(&t), vec![0]);
        assert_eq!(splittable_leaves(&t), vec![0, 1]);
    }
}
