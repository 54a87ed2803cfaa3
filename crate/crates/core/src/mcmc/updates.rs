//! Gibbs updates for the hyperparameters: selection logits, variances,
//! covariate coefficients and the binomial augmentation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::projection::ProjectionCache;
use crate::error::{Error, Result};
use crate::samplers::{sample_polya_gamma, update_halfcauchy_variance};
use crate::tree::{LagSet, NestedTreeUnit};

/// One Pólya-gamma Gibbs step for the selection logits.
///
/// Every nested tree is a Bernoulli observation "root split" whose logit is
/// the average of `gamma` over its lags.
pub fn update_gamma<R: Rng + ?Sized>(
    units: &[NestedTreeUnit],
    gamma: &[f64],
    prior_mean: &[f64],
    prior_var: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut obs: Vec<(LagSet, bool)> = Vec::new();
    for unit in units {
        for (lags, tree) in unit
            .time_tree
            .terminal_lag_sets()
            .into_iter()
            .zip(unit.time_tree.exposure_trees())
        {
            obs.push((lags, tree.is_split()));
        }
    }
    gamma_from_observations(&obs, gamma, prior_mean, prior_var, rng)
}

/// The logistic-regression step behind [`update_gamma`], on explicit
/// `(lag set, split)` observations.
pub fn gamma_from_observations<R: Rng + ?Sized>(
    obs: &[(LagSet, bool)],
    gamma: &[f64],
    prior_mean: &[f64],
    prior_var: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let k = gamma.len();
    if prior_mean.len() != k || prior_var.len() != k {
        return Err(Error::param("selection prior length does not match gamma"));
    }
    let mut precision = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for l in 0..k {
        precision[(l, l)] = 1.0 / prior_var[l];
        rhs[l] = prior_mean[l] / prior_var[l];
    }
    for (lags, split) in obs {
        let w = 1.0 / lags.len() as f64;
        let eta: f64 = lags.iter().map(|l| gamma[l]).sum::<f64>() * w;
        let omega = sample_polya_gamma(1.0, eta, rng)?;
        let kappa = if *split { 0.5 } else { -0.5 };
        for i in lags.iter() {
            rhs[i] += kappa * w;
            for j in lags.iter() {
                precision[(i, j)] += omega * w * w;
            }
        }
    }
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::Decomposition("selection-logit precision is not positive definite".into()))?;
    let mean = chol.solve(&rhs);
    let noise = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let shift = chol
        .l()
        .transpose()
        .solve_upper_triangular(&noise)
        .ok_or_else(|| Error::Decomposition("selection-logit factor is singular".into()))?;
    Ok((mean + shift).iter().copied().collect())
}

/// Half-Cauchy Gibbs pair for the noise variance given the integrated-out
/// covariate residual `R' V_Z^{-1} R` and the increments.
#[allow(clippy::too_many_arguments)]
pub fn update_sigma<R: Rng + ?Sized>(
    resid_quad: f64,
    n: usize,
    theta_sum_sq: f64,
    theta_count: usize,
    nu: f64,
    aux: f64,
    rng: &mut R,
) -> (f64, f64) {
    let ss = resid_quad + theta_sum_sq / (nu * nu);
    let (var, aux) = update_halfcauchy_variance(ss, n + theta_count, aux, rng);
    (var.sqrt(), aux)
}

/// Half-Cauchy Gibbs pair for the increment scale.
pub fn update_nu<R: Rng + ?Sized>(
    theta_sum_sq: f64,
    theta_count: usize,
    sigma: f64,
    aux: f64,
    rng: &mut R,
) -> (f64, f64) {
    let (var, aux) = update_halfcauchy_variance(theta_sum_sq / (sigma * sigma), theta_count, aux, rng);
    (var.sqrt(), aux)
}

/// Posterior mean of the covariate coefficients, `V_zeta Z' W (y - f)`.
pub fn zeta_mean(proj: &ProjectionCache, resid: &DVector<f64>) -> DVector<f64> {
    proj.v_zeta() * proj.zt_w(resid)
}

/// `zeta ~ N(V_zeta Z' W (y - f), sigma^2 V_zeta)`.
pub fn update_zeta<R: Rng + ?Sized>(
    proj: &ProjectionCache,
    resid: &DVector<f64>,
    sigma: f64,
    rng: &mut R,
) -> DVector<f64> {
    let mean = zeta_mean(proj, resid);
    let k = mean.len();
    let noise = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + proj.v_zeta_chol() * noise * sigma
}

/// Pólya-gamma augmentation for binomial outcomes.
#[derive(Debug, Clone)]
pub struct BinomialAugmentation {
    pub omega: DVector<f64>,
    /// Working response `(y - n/2) / omega`.
    pub response: DVector<f64>,
}

impl BinomialAugmentation {
    /// Starting point with every `omega` at its prior mean `n/4`.
    pub fn initial(outcomes: &DVector<f64>, trials: &DVector<f64>) -> Self {
        let omega = trials.map(|n| n / 4.0);
        Self::from_omega(outcomes, trials, omega)
    }

    fn from_omega(outcomes: &DVector<f64>, trials: &DVector<f64>, omega: DVector<f64>) -> Self {
        let response = DVector::from_fn(outcomes.len(), |t, _| (outcomes[t] - 0.5 * trials[t]) / omega[t]);
        Self { omega, response }
    }
}

/// `omega_t ~ PG(n_t, psi_t)` at the current linear predictor `psi`.
pub fn update_binomial_augmentation<R: Rng + ?Sized>(
    outcomes: &DVector<f64>,
    trials: Option<&DVector<f64>>,
    linear_predictor: &DVector<f64>,
    rng: &mut R,
) -> Result<BinomialAugmentation> {
    let trials = trials.ok_or_else(|| Error::config("binomial family requires trial counts"))?;
    let mut omega = DVector::zeros(outcomes.len());
    for t in 0..outcomes.len() {
        omega[t] = sample_polya_gamma(trials[t], linear_predictor[t], rng)?.max(1e-12);
    }
    Ok(BinomialAugmentation::from_omega(outcomes, trials, omega))
}

/// Split-location usage counts over the time trees of non-fixed units.
pub fn split_counts(units: &[NestedTreeUnit], lag_count: usize) -> Vec<usize> {
    let mut counts = vec![0usize; lag_count];
    for unit in units.iter().filter(|u| !u.fixed) {
        for node in unit.time_tree.internal_nodes() {
            counts[node.at] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{ExposureNode, ExposureTree, TimeNode, TimeTree};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gamma_without_observations_is_a_prior_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        let m = 20_000;
        for _ in 0..m {
            let g = gamma_from_observations(&[], &[0.0, 0.0], &[1.0, -2.0], &[0.5, 2.0], &mut rng).unwrap();
            for i in 0..2 {
                sum[i] += g[i];
                sq[i] += g[i] * g[i];
            }
        }
        let mean = [sum[0] / m as f64, sum[1] / m as f64];
        assert!((mean[0] - 1.0).abs() < 0.03 && (mean[1] + 2.0).abs() < 0.05);
        let var1 = sq[1] / m as f64 - mean[1] * mean[1];
        assert!((var1 - 2.0).abs() < 0.1);
    }

    #[test]
    fn all_split_observations_push_logits_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let obs: Vec<(LagSet, bool)> = (0..3)
            .flat_map(|l| std::iter::repeat_n((LagSet::new(l, l), true), 30))
            .collect();
        let mut g = vec![0.0; 3];
        let mut acc = [0.0; 3];
        for it in 0..3000 {
            g = gamma_from_observations(&obs, &g, &[0.0; 3], &[100.0; 3], &mut rng).unwrap();
            if it >= 500 {
                for l in 0..3 {
                    acc[l] += g[l];
                }
            }
        }
        assert!(acc.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn ridge_mean_matches_closed_form() {
        let n = 20;
        let z = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i as f64 * 0.37).sin() });
        let proj = ProjectionCache::build(&z, 5.0).unwrap();
        let r = DVector::from_fn(n, |i, _| (i as f64 * 0.11).cos() + 0.5);
        let mut gram = z.transpose() * &z;
        gram[(0, 0)] += 0.2;
        gram[(1, 1)] += 0.2;
        let expect = gram.try_inverse().unwrap() * z.transpose() * &r;
        assert!((zeta_mean(&proj, &r) - expect).amax() < 1e-10);
    }

    #[test]
    fn null_binomial_working_response() {
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let n = DVector::from_vec(vec![1.0, 1.0]);
        let aug = BinomialAugmentation::initial(&y, &n);
        assert_eq!(aug.omega[0], 0.25);
        assert_eq!(aug.response[0], 2.0);
        assert_eq!(aug.response[1], -2.0);
    }

    #[test]
    fn split_counts_skip_fixed_units() {
        let mut fixed = NestedTreeUnit::new(0, TimeTree::from_splits(5, &[2]).unwrap());
        fixed.fixed = true;
        let free = NestedTreeUnit::new(
            1,
            TimeTree::new(
                TimeNode::split(
                    1,
                    TimeNode::Leaf(ExposureTree::single()),
                    TimeNode::Leaf(
                        ExposureTree::from_root(ExposureNode::split(3.0, ExposureNode::Leaf, ExposureNode::Leaf))
                            .unwrap(),
                    ),
                ),
                5,
            )
            .unwrap(),
        );
        assert_eq!(split_counts(&[fixed, free], 5), vec![0, 1, 0, 0, 0]);
    }
}
