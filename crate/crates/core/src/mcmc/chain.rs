//! Chain state, one full sweep of the sampler, and chain orchestration.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::moves::{Candidate, MoveStats, TimeMove, UnitContext};
use super::projection::ProjectionCache;
use super::updates::{
    split_counts, update_binomial_augmentation, update_gamma, update_nu, update_sigma, update_zeta,
    BinomialAugmentation,
};
use crate::config::{HyperState, KappaMode, OutcomeFamily, ResolvedConfig};
use crate::data::{sample_sd, LaggedDataset};
use crate::error::{Error, Result};
use crate::priors::{update_split_location_prior, ExposurePrior, SplitLocationPrior, TimePrior};
use crate::samplers::RngStream;
use crate::tree::{Ensemble, ExposureTree, NestedTreeUnit, TimeTree};
use crate::weights::{compute_unit_design, evaluate_surface, SplitBasis};

/// Iterations between recomputations of the cached fit.
pub const FIT_CHECK_EVERY: usize = 100;
const FIT_TOLERANCE: f64 = 1e-8;
const MONOTONE_SLACK: f64 = 1e-10;

/// Read-only inputs shared by every chain of a run.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub data: LaggedDataset,
    pub config: ResolvedConfig,
    pub basis: SplitBasis,
    /// Standardized outcome (Gaussian) or raw counts (binomial).
    pub response: DVector<f64>,
    pub y_center: f64,
    pub y_scale: f64,
    /// Unweighted projection for the Gaussian family.
    pub projection: ProjectionCache,
    pub grid_x: Vec<f64>,
    pub grid_l: Vec<usize>,
}

impl PreparedModel {
    pub fn new(data: LaggedDataset, config: ResolvedConfig, grid_x: &[f64], grid_l: &[usize]) -> Result<Self> {
        if data.lag_count() != config.lag_count {
            return Err(Error::config("dataset and configuration disagree on L"));
        }
        if grid_l.iter().any(|&l| l > config.lag_count) {
            return Err(Error::config(format!(
                "surface lag grid exceeds L = {}",
                config.lag_count
            )));
        }
        if grid_x.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("surface exposure grid must be finite"));
        }
        let basis = SplitBasis::new(&data, &config.exposure_split_grid, config.sigma_x);
        let y = data.outcomes().clone();
        let (response, y_center, y_scale) = match config.outcome_family {
            OutcomeFamily::Gaussian => {
                let center = y.mean();
                let sd = sample_sd(y.as_slice());
                let scale = if sd > 0.0 { sd } else { 1.0 };
                (y.map(|v| (v - center) / scale), center, scale)
            }
            OutcomeFamily::Binomial => {
                if data.trial_counts().is_none() {
                    return Err(Error::config("binomial family requires trial counts"));
                }
                (y, 0.0, 1.0)
            }
        };
        let projection = ProjectionCache::build(data.covariates(), config.ridge_scale)?;
        Ok(Self {
            data,
            config,
            basis,
            response,
            y_center,
            y_scale,
            projection,
            grid_x: grid_x.to_vec(),
            grid_l: grid_l.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }
}

/// One retained posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub chain: usize,
    pub iteration: usize,
    /// `w(x, l)` on the output scale; rows follow `grid_x`, columns `grid_l`.
    pub surface: DMatrix<f64>,
    /// Per-lag effect indicators for lags `0..=L`.
    pub lag_effects: Vec<bool>,
    pub sigma: f64,
    pub nu: f64,
    pub gamma: Vec<f64>,
    pub split_probs: Vec<f64>,
    pub kappa: f64,
    pub zeta: Vec<f64>,
    /// Terminal lag nodes per unit.
    pub leaf_counts: Vec<usize>,
    /// Mean number of exposure bins per nested tree.
    pub mean_bins: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ChainDiagnostics {
    pub acceptance: MoveStats,
    /// Retained surfaces with a decrease in exposure beyond `1e-10`.
    pub monotonicity_violations: usize,
    pub fit_checks: usize,
    pub max_fit_drift: f64,
    /// Mean terminal lag nodes per unit at each retained draw.
    pub leaf_count_trace: Vec<f64>,
    /// Mean exposure bins per nested tree at each retained draw.
    pub bin_count_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub chain: usize,
    pub draws: Vec<PosteriorDraw>,
    pub diagnostics: ChainDiagnostics,
}

/// Mutable state of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub ensemble: Ensemble,
    /// Transformed design blocks per unit and nested tree.
    pub blocks: Vec<Vec<DMatrix<f64>>>,
    pub unit_fit: Vec<DVector<f64>>,
    /// `sum_a U_a D_a^{-1} theta_a`.
    pub fit: DVector<f64>,
    pub iteration: usize,
    pub split_prior: SplitLocationPrior,
    pub augmentation: Option<BinomialAugmentation>,
    pub weighted_projection: Option<ProjectionCache>,
}

impl ChainState {
    pub fn initial(model: &PreparedModel) -> Result<Self> {
        let cfg = &model.config;
        let n = model.n();
        let mut units = Vec::with_capacity(cfg.num_trees);
        for a in 0..cfg.num_trees {
            let unit = match cfg.fixed_time_trees.get(a) {
                Some(splits) => {
                    let mut u = NestedTreeUnit::new(a, TimeTree::from_splits(cfg.lag_count, splits)?);
                    u.fixed = true;
                    u
                }
                None => NestedTreeUnit::new(a, TimeTree::single(cfg.lag_count)),
            };
            units.push(unit);
        }
        let blocks = units
            .iter()
            .map(|u| {
                u.time_tree
                    .terminal_lag_sets()
                    .into_iter()
                    .map(|lags| model.basis.block(&ExposureTree::single(), lags))
                    .collect()
            })
            .collect();
        let kappa_fixed = matches!(cfg.kappa_mode, KappaMode::Fixed(_));
        let hyper = HyperState::initial(cfg, model.data.covariates().ncols());
        let split_prior = SplitLocationPrior::new(cfg.dirichlet_weights.clone(), hyper.kappa, kappa_fixed);
        let (augmentation, weighted_projection) = match cfg.outcome_family {
            OutcomeFamily::Gaussian => (None, None),
            OutcomeFamily::Binomial => {
                let trials = model.data.trial_counts().expect("checked in PreparedModel");
                let aug = BinomialAugmentation::initial(&model.response, trials);
                let proj = ProjectionCache::build_weighted(model.data.covariates(), Some(&aug.omega), cfg.ridge_scale)?;
                (Some(aug), Some(proj))
            }
        };
        let mut hyper = hyper;
        if let Some(aug) = &augmentation {
            hyper.omega = Some(aug.omega.iter().copied().collect());
        }
        Ok(Self {
            ensemble: Ensemble { units, hyper },
            blocks,
            unit_fit: vec![DVector::zeros(n); cfg.num_trees],
            fit: DVector::zeros(n),
            iteration: 0,
            split_prior,
            augmentation,
            weighted_projection,
        })
    }

    fn projection<'a>(&'a self, model: &'a PreparedModel) -> &'a ProjectionCache {
        self.weighted_projection.as_ref().unwrap_or(&model.projection)
    }

    fn response<'a>(&'a self, model: &'a PreparedModel) -> &'a DVector<f64> {
        self.augmentation.as_ref().map_or(&model.response, |a| &a.response)
    }

    /// Fit recomputed from scratch by direct smooth-weight summation.
    pub fn recompute_fit(&self, model: &PreparedModel) -> Result<DVector<f64>> {
        let mut total = DVector::zeros(model.n());
        for unit in &self.ensemble.units {
            let design = compute_unit_design(unit, &model.data, model.config.sigma_x)?;
            if design.columns.is_empty() {
                continue;
            }
            let theta = DVector::from_vec(unit.free_increments());
            total += design.transformed() * theta;
        }
        Ok(total)
    }

    /// One full sweep: every unit's trees and increments, then the
    /// hyperparameters.
    pub fn step(&mut self, model: &PreparedModel, rng: &mut RngStream, stats: &mut MoveStats) -> Result<()> {
        self.iteration += 1;
        let it = self.iteration;
        let numerical = |e: Error| match e {
            Error::Decomposition(m) | Error::Constraint(m) => Error::Numerical {
                iteration: it,
                message: m,
            },
            other => other,
        };
        let cfg = &model.config;
        let family = cfg.outcome_family;
        let prior_only = cfg.sample_prior;
        let sigma = match family {
            OutcomeFamily::Gaussian => self.ensemble.hyper.sigma,
            OutcomeFamily::Binomial => 1.0,
        };
        let nu = self.ensemble.hyper.nu;
        let n = model.n();

        for a in 0..self.ensemble.units.len() {
            let proj = self.projection(model);
            let resid = self.response(model) - &self.fit + &self.unit_fit[a];
            let pr = proj.apply(&resid);
            let ctx = UnitContext {
                basis: &model.basis,
                proj,
                pr: &pr,
                exposure_prior: ExposurePrior {
                    gamma: &self.ensemble.hyper.gamma,
                    grid: &cfg.exposure_split_grid,
                    alpha: cfg.alpha_E,
                    beta: cfg.beta_E,
                },
                time_prior: TimePrior {
                    split_probs: &self.ensemble.hyper.split_probs,
                    alpha: cfg.alpha_T,
                    beta: cfg.beta_T,
                },
                sigma,
                nu,
                mc_size: cfg.orthant_mc_size,
                sweeps: cfg.tmvn_sweeps,
                prior_only,
            };
            let unit = &self.ensemble.units[a];
            let mut current: Candidate = ctx
                .candidate(unit.time_tree.clone(), self.blocks[a].clone())
                .map_err(numerical)?;

            if !unit.fixed {
                if let Some((kind, accepted, log_r)) = ctx.time_move(&mut current, rng).map_err(numerical)? {
                    check_ratio(log_r, it, "time-tree")?;
                    match kind {
                        TimeMove::Grow => stats.grow.record(accepted),
                        TimeMove::Prune => stats.prune.record(accepted),
                        TimeMove::Change => stats.change.record(accepted),
                    }
                }
            }
            for leaf in 0..current.tree.leaf_count() {
                let (accepted, log_r) = ctx.exposure_move(&mut current, leaf, rng).map_err(numerical)?;
                check_ratio(log_r, it, "exposure-tree")?;
                stats.exposure.record(accepted);
            }

            let theta = ctx.draw_theta(&current, rng);
            let design = current.design(n);
            let new_fit = if theta.is_empty() {
                DVector::zeros(n)
            } else {
                &design * &theta
            };
            let Candidate { mut tree, blocks, .. } = current;
            let mut offset = 0;
            for e in tree.exposure_trees_mut() {
                let k = e.bin_count() - 1;
                e.set_free_increments(&theta.as_slice()[offset..offset + k])
                    .map_err(numerical)?;
                offset += k;
            }
            self.fit += &new_fit - &self.unit_fit[a];
            self.unit_fit[a] = new_fit;
            self.blocks[a] = blocks;
            self.ensemble.units[a].time_tree = tree;
        }

        // selection logits
        let hyper = &mut self.ensemble.hyper;
        hyper.gamma = update_gamma(
            &self.ensemble.units,
            &hyper.gamma,
            &cfg.gamma_prior_mean,
            &cfg.gamma_prior_var,
            rng,
        )
        .map_err(numerical)?;

        // split-location probabilities
        if cfg.lag_count > 0 {
            let counts = split_counts(&self.ensemble.units, cfg.lag_count);
            self.split_prior = update_split_location_prior(&counts, &self.split_prior, rng);
            hyper.split_probs = self.split_prior.probs.clone();
            hyper.kappa = self.split_prior.kappa;
        }

        let theta_sum_sq: f64 = self
            .ensemble
            .units
            .iter()
            .flat_map(|u| u.free_increments())
            .map(|t| t * t)
            .sum();
        let theta_count: usize = self.ensemble.units.iter().map(|u| u.free_parameter_count()).sum();

        match family {
            OutcomeFamily::Gaussian => {
                let resid = &model.response - &self.fit;
                if !prior_only {
                    let quad = resid.dot(&model.projection.apply(&resid));
                    let (s, aux) = update_sigma(quad, n, theta_sum_sq, theta_count, hyper.nu, hyper.sigma_aux, rng);
                    hyper.sigma = s;
                    hyper.sigma_aux = aux;
                }
                let (v, aux) = update_nu(theta_sum_sq, theta_count, hyper.sigma, hyper.nu_aux, rng);
                hyper.nu = v;
                hyper.nu_aux = aux;
                if !prior_only {
                    let zeta = update_zeta(&model.projection, &resid, hyper.sigma, rng);
                    hyper.zeta = zeta.iter().copied().collect();
                }
            }
            OutcomeFamily::Binomial => {
                let (v, aux) = update_nu(theta_sum_sq, theta_count, 1.0, hyper.nu_aux, rng);
                hyper.nu = v;
                hyper.nu_aux = aux;
                if !prior_only {
                    let proj = self.weighted_projection.as_ref().expect("binomial state");
                    let aug = self.augmentation.as_ref().expect("binomial state");
                    let resid = &aug.response - &self.fit;
                    let zeta = update_zeta(proj, &resid, 1.0, rng);
                    let eta = &self.fit + model.data.covariates() * &zeta;
                    hyper.zeta = zeta.iter().copied().collect();
                    let aug = update_binomial_augmentation(&model.response, model.data.trial_counts(), &eta, rng)
                        .map_err(numerical)?;
                    let proj =
                        ProjectionCache::build_weighted(model.data.covariates(), Some(&aug.omega), cfg.ridge_scale)
                            .map_err(numerical)?;
                    hyper.omega = Some(aug.omega.iter().copied().collect());
                    self.augmentation = Some(aug);
                    self.weighted_projection = Some(proj);
                }
            }
        }
        self.ensemble.hyper.check().map_err(numerical)?;
        self.check_increments()?;
        Ok(())
    }

    fn check_increments(&self) -> Result<()> {
        for unit in &self.ensemble.units {
            for e in unit.time_tree.exposure_trees() {
                let levels = e.levels();
                if levels[0] != 0.0 || levels.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::Numerical {
                        iteration: self.iteration,
                        message: format!("unit {} has non-monotone bin levels {levels:?}", unit.index),
                    });
                }
            }
        }
        Ok(())
    }

    /// Compare the cached fit with a direct recomputation, then resync.
    pub fn check_fit(&mut self, model: &PreparedModel) -> Result<f64> {
        let direct = self.recompute_fit(model)?;
        let drift = (&direct - &self.fit).amax();
        let scale = direct.amax().max(1.0);
        if !(drift <= FIT_TOLERANCE * scale) {
            return Err(Error::Numerical {
                iteration: self.iteration,
                message: format!("cached fit drifted from direct evaluation by {drift:e}"),
            });
        }
        self.fit = direct;
        Ok(drift)
    }

    pub fn draw(&self, model: &PreparedModel, chain: usize) -> PosteriorDraw {
        let cfg = &model.config;
        let surface = evaluate_surface(&self.ensemble, &model.grid_x, &model.grid_l, cfg.sigma_x) * model.y_scale;
        let hyper = &self.ensemble.hyper;
        let mut zeta: Vec<f64> = hyper.zeta.iter().map(|z| z * model.y_scale).collect();
        if let Some(j) = intercept_column(model.data.covariates()) {
            zeta[j] += model.y_center;
        }
        let leaf_counts: Vec<usize> = self.ensemble.units.iter().map(|u| u.time_tree.leaf_count()).collect();
        let (bins, trees) = self.ensemble.units.iter().fold((0usize, 0usize), |(b, t), u| {
            let es = u.time_tree.exposure_trees();
            (b + es.iter().map(|e| e.bin_count()).sum::<usize>(), t + es.len())
        });
        let sigma = match cfg.outcome_family {
            OutcomeFamily::Gaussian => hyper.sigma * model.y_scale,
            OutcomeFamily::Binomial => 1.0,
        };
        PosteriorDraw {
            chain,
            iteration: self.iteration,
            surface,
            lag_effects: self.ensemble.lag_effect_indicators(cfg.lag_count),
            sigma,
            nu: hyper.nu,
            gamma: hyper.gamma.clone(),
            split_probs: hyper.split_probs.clone(),
            kappa: hyper.kappa,
            zeta,
            leaf_counts,
            mean_bins: bins as f64 / trees.max(1) as f64,
        }
    }
}

fn check_ratio(log_r: f64, iteration: usize, what: &str) -> Result<()> {
    if log_r.is_nan() || log_r == f64::INFINITY {
        return Err(Error::Numerical {
            iteration,
            message: format!("non-finite {what} acceptance ratio"),
        });
    }
    Ok(())
}

fn intercept_column(z: &DMatrix<f64>) -> Option<usize> {
    (0..z.ncols()).find(|&j| z.column(j).iter().all(|v| *v == 1.0))
}

/// True when every column of `surface` is nondecreasing along `grid_x`.
pub fn is_monotone(surface: &DMatrix<f64>, grid_x: &[f64], slack: f64) -> bool {
    let mut order: Vec<usize> = (0..grid_x.len()).collect();
    order.sort_by(|&i, &j| grid_x[i].total_cmp(&grid_x[j]));
    (0..surface.ncols()).all(|j| {
        order
            .windows(2)
            .all(|w| surface[(w[1], j)] >= surface[(w[0], j)] - slack)
    })
}

/// Runs chain `chain` to completion.
pub fn run_chain(model: &PreparedModel, chain: usize) -> Result<ChainOutput> {
    let cfg = &model.config;
    let mut rng = RngStream::new(cfg.seed, chain as u64);
    let mut state = ChainState::initial(model)?;
    let mut diagnostics = ChainDiagnostics::default();
    let mut draws = Vec::with_capacity(cfg.retained_per_chain());
    for it in 1..=cfg.iterations {
        state.step(model, &mut rng, &mut diagnostics.acceptance)?;
        if it % FIT_CHECK_EVERY == 0 {
            let drift = state.check_fit(model)?;
            diagnostics.fit_checks += 1;
            diagnostics.max_fit_drift = diagnostics.max_fit_drift.max(drift);
        }
        if it > cfg.burn_in && (it - cfg.burn_in).is_multiple_of(cfg.thinning) {
            let draw = state.draw(model, chain);
            if !is_monotone(&draw.surface, &model.grid_x, MONOTONE_SLACK * model.y_scale.max(1.0)) {
                diagnostics.monotonicity_violations += 1;
            }
            diagnostics
                .leaf_count_trace
                .push(draw.leaf_counts.iter().sum::<usize>() as f64 / draw.leaf_counts.len() as f64);
            diagnostics.bin_count_trace.push(draw.mean_bins);
            draws.push(draw);
        }
        if it % 1000 == 0 {
            log::info!("chain {chain}: iteration {it}/{}", cfg.iterations);
        }
    }
    Ok(ChainOutput {
        chain,
        draws,
        diagnostics,
    })
}

/// Runs every configured chain, in parallel, returning them in chain order.
pub fn run_chains(model: &PreparedModel) -> Result<Vec<ChainOutput>> {
    (0..model.config.chains)
        .into_par_iter()
        .map(|c| run_chain(model, c))
        .collect()
}
