//! Model configuration and the hyperparameter state of a chain.

use serde::{Deserialize, Serialize};

use crate::data::LaggedDataset;
use crate::error::{Error, Result};
use crate::priors::selection_prior_from_interval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeFamily {
    #[default]
    Gaussian,
    Binomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KappaMode {
    #[default]
    Learned,
    Fixed(f64),
}

/// A scalar broadcast across lags, or one value per lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerLag<T> {
    Scalar(T),
    Each(Vec<T>),
}

impl<T: Clone> PerLag<T> {
    fn expand(&self, len: usize, what: &str) -> Result<Vec<T>> {
        match self {
            PerLag::Scalar(v) => Ok(vec![v.clone(); len]),
            PerLag::Each(v) if v.len() == len => Ok(v.clone()),
            PerLag::Each(v) => Err(Error::config(format!("{what} has {} entries, expected {len}", v.len()))),
        }
    }
}

/// User-facing model configuration. Every field may be omitted; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct ModelConfig {
    pub lag_count: usize,
    pub num_trees: usize,
    pub alpha_T: f64,
    pub beta_T: f64,
    pub alpha_E: f64,
    pub beta_E: f64,
    /// Smoothing bandwidth; half the pooled exposure sd when absent.
    pub sigma_x: Option<f64>,
    pub gamma_prior_mean: Option<PerLag<f64>>,
    pub gamma_prior_var: Option<PerLag<f64>>,
    /// Per-lag `(low, high)` probability intervals for the root-split
    /// probability; overrides `gamma_prior_mean` / `gamma_prior_var`.
    pub gamma_prior_intervals: Option<PerLag<(f64, f64)>>,
    /// Raw nonnegative weights for the split-location Dirichlet; normalized.
    pub dirichlet_weights: Option<Vec<f64>>,
    pub kappa_mode: KappaMode,
    pub ridge_scale: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
    pub seed: u64,
    pub outcome_family: OutcomeFamily,
    /// Each entry freezes one unit's time tree at the listed split locations.
    pub fixed_time_trees: Vec<Vec<usize>>,
    pub exposure_split_grid: Option<Vec<f64>>,
    pub tmvn_sweeps: usize,
    pub orthant_mc_size: usize,
    /// Diagnostic mode: treat the likelihood as constant so the chain
    /// samples the tree prior.
    pub sample_prior: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lag_count: 20,
            num_trees: 20,
            alpha_T: 0.95,
            beta_T: 2.0,
            alpha_E: 0.95,
            beta_E: 2.0,
            sigma_x: None,
            gamma_prior_mean: None,
            gamma_prior_var: None,
            gamma_prior_intervals: None,
            dirichlet_weights: None,
            kappa_mode: KappaMode::Learned,
            ridge_scale: 1.0e4,
            iterations: 7000,
            burn_in: 2000,
            thinning: 10,
            chains: 2,
            seed: 1,
            outcome_family: OutcomeFamily::Gaussian,
            fixed_time_trees: Vec::new(),
            exposure_split_grid: None,
            tmvn_sweeps: 10,
            orthant_mc_size: 512,
            sample_prior: false,
        }
    }
}

/// Configuration with every default filled in for a particular dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct ResolvedConfig {
    pub lag_count: usize,
    pub num_trees: usize,
    pub alpha_T: f64,
    pub beta_T: f64,
    pub alpha_E: f64,
    pub beta_E: f64,
    pub sigma_x: f64,
    pub gamma_prior_mean: Vec<f64>,
    pub gamma_prior_var: Vec<f64>,
    pub dirichlet_weights: Vec<f64>,
    pub kappa_mode: KappaMode,
    pub ridge_scale: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
    pub seed: u64,
    pub outcome_family: OutcomeFamily,
    pub fixed_time_trees: Vec<Vec<usize>>,
    pub exposure_split_grid: Vec<f64>,
    pub tmvn_sweeps: usize,
    pub orthant_mc_size: usize,
    pub sample_prior: bool,
}

impl ResolvedConfig {
    /// Number of retained draws per chain.
    pub fn retained_per_chain(&self) -> usize {
        (self.burn_in + 1..=self.iterations)
            .filter(|it| (it - self.burn_in).is_multiple_of(self.thinning))
            .count()
    }
}

fn check_split_params(alpha: f64, beta: f64, which: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) || !(beta > 0.0) {
        return Err(Error::config(format!(
            "{which}: need alpha in [0, 1] and beta > 0, got ({alpha}, {beta})"
        )));
    }
    Ok(())
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn resolve(&self, data: &LaggedDataset) -> Result<ResolvedConfig> {
        let lags = self.lag_count;
        if data.lag_count() != lags {
            return Err(Error::config(format!(
                "config lag_count {lags} does not match dataset L = {}",
                data.lag_count()
            )));
        }
        if self.num_trees == 0 {
            return Err(Error::config("num_trees must be at least 1"));
        }
        check_split_params(self.alpha_T, self.beta_T, "time-tree split prior")?;
        check_split_params(self.alpha_E, self.beta_E, "exposure-tree split prior")?;
        if self.burn_in >= self.iterations {
            return Err(Error::config(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thinning == 0 || self.chains == 0 {
            return Err(Error::config("thinning and chains must be at least 1"));
        }
        if !(self.ridge_scale > 0.0) {
            return Err(Error::config("ridge_scale must be positive"));
        }
        if self.orthant_mc_size == 0 || self.tmvn_sweeps == 0 {
            return Err(Error::config("orthant_mc_size and tmvn_sweeps must be at least 1"));
        }
        if self.outcome_family == OutcomeFamily::Binomial && data.trial_counts().is_none() {
            return Err(Error::config("binomial family requires trial counts"));
        }

        let sigma_x = match self.sigma_x {
            Some(s) if s > 0.0 => s,
            Some(s) => return Err(Error::config(format!("sigma_x must be positive, got {s}"))),
            None => {
                let s = 0.5 * data.pooled_exposure_sd();
                if !(s > 0.0) {
                    return Err(Error::config("exposures are constant; set sigma_x explicitly"));
                }
                s
            }
        };

        let (gamma_prior_mean, gamma_prior_var) = if let Some(intervals) = &self.gamma_prior_intervals {
            let iv = intervals.expand(lags + 1, "gamma_prior_intervals")?;
            let mut mean = Vec::with_capacity(lags + 1);
            let mut var = Vec::with_capacity(lags + 1);
            for (lo, hi) in iv {
                let (m, v) = selection_prior_from_interval(lo, hi)?;
                mean.push(m);
                var.push(v);
            }
            (mean, var)
        } else {
            let mean = match &self.gamma_prior_mean {
                Some(m) => m.expand(lags + 1, "gamma_prior_mean")?,
                None => vec![0.0; lags + 1],
            };
            let var = match &self.gamma_prior_var {
                Some(v) => v.expand(lags + 1, "gamma_prior_var")?,
                None => vec![selection_prior_from_interval(0.25, 0.75)?.1; lags + 1],
            };
            (mean, var)
        };
        if gamma_prior_var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config("gamma_prior_var entries must be positive"));
        }

        let dirichlet_weights = match &self.dirichlet_weights {
            Some(w) => {
                if w.len() != lags {
                    return Err(Error::config(format!(
                        "dirichlet_weights has {} entries, expected L = {lags}",
                        w.len()
                    )));
                }
                if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::config("dirichlet_weights must be positive"));
                }
                let total: f64 = w.iter().sum();
                w.iter().map(|v| v / total).collect()
            }
            None => vec![1.0 / lags.max(1) as f64; lags],
        };
        if let KappaMode::Fixed(k) = self.kappa_mode {
            if !(k > 0.0) {
                return Err(Error::config("fixed kappa must be positive"));
            }
        }

        if self.fixed_time_trees.len() > self.num_trees {
            return Err(Error::config("more fixed time trees than num_trees"));
        }
        for splits in &self.fixed_time_trees {
            if splits.iter().any(|&s| s >= lags) {
                return Err(Error::config(format!(
                    "fixed time tree split {splits:?} outside 0..{lags}"
                )));
            }
        }

        let exposure_split_grid = match &self.exposure_split_grid {
            Some(g) => {
                let mut g: Vec<f64> = g.clone();
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("exposure_split_grid must be finite"));
                }
                g.sort_by(f64::total_cmp);
                g.dedup();
                g
            }
            None => default_split_grid(data.exposures().as_slice()),
        };
        if exposure_split_grid.is_empty() {
            return Err(Error::config("exposure split grid is empty"));
        }

        Ok(ResolvedConfig {
            lag_count: lags,
            num_trees: self.num_trees,
            alpha_T: self.alpha_T,
            beta_T: self.beta_T,
            alpha_E: self.alpha_E,
            beta_E: self.beta_E,
            sigma_x,
            gamma_prior_mean,
            gamma_prior_var,
            dirichlet_weights,
            kappa_mode: self.kappa_mode,
            ridge_scale: self.ridge_scale,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thinning: self.thinning,
            chains: self.chains,
            seed: self.seed,
            outcome_family: self.outcome_family,
            fixed_time_trees: self.fixed_time_trees.clone(),
            exposure_split_grid,
            tmvn_sweeps: self.tmvn_sweeps,
            orthant_mc_size: self.orthant_mc_size,
            sample_prior: self.sample_prior,
        })
    }
}

/// Empirical percentiles 1..=99 (type 7) of the pooled exposures, deduplicated.
pub fn default_split_grid(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut grid: Vec<f64> = (1..=99)
        .map(|p| crate::inference::quantile_sorted(&sorted, p as f64 / 100.0))
        .collect();
    grid.dedup();
    grid
}

/// Hyperparameters and auxiliary variables of one chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperState {
    pub sigma: f64,
    pub nu: f64,
    pub gamma: Vec<f64>,
    pub split_probs: Vec<f64>,
    pub kappa: f64,
    pub zeta: Vec<f64>,
    pub sigma_aux: f64,
    pub nu_aux: f64,
    pub omega: Option<Vec<f64>>,
}

impl HyperState {
    pub fn initial(config: &ResolvedConfig, covariate_count: usize) -> Self {
        let lags = config.lag_count;
        Self {
            sigma: 1.0,
            nu: 1.0,
            gamma: config.gamma_prior_mean.clone(),
            split_probs: config.dirichlet_weights.clone(),
            kappa: match config.kappa_mode {
                KappaMode::Fixed(k) => k,
                KappaMode::Learned => lags.max(1) as f64,
            },
            zeta: vec![0.0; covariate_count],
            sigma_aux: 1.0,
            nu_aux: 1.0,
            omega: None,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.nu > 0.0) {
            return Err(Error::Constraint(format!(
                "variance parameters must be positive (sigma {}, nu {})",
                self.sigma, self.nu
            )));
        }
        if !self.split_probs.is_empty() {
            let total: f64 = self.split_probs.iter().sum();
            if (total - 1.0).abs() > 1e-12 || self.split_probs.iter().any(|p| !(*p > 0.0)) {
                return Err(Error::Constraint(format!(
                    "split probabilities must be a positive simplex (sum {total})"
                )));
            }
        }
        Ok(())
    }
}
