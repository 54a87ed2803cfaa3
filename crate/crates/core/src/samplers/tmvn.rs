//! Multivariate normal restricted to the nonnegative orthant: Gibbs draws
//! and GHK orthant-probability estimates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{normal, truncnorm};
use crate::error::{Error, Result};

pub const DEFAULT_SWEEPS: usize = 10;

fn cholesky(cov: &DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if cov.nrows() != cov.ncols() {
        return Err(Error::Decomposition(format!("{what}: matrix is not square")));
    }
    let sym_err = (cov - cov.transpose()).amax();
    if sym_err > 1e-9 * cov.amax().max(1.0) {
        return Err(Error::Decomposition(format!("{what}: matrix is not symmetric")));
    }
    cov.clone()
        .cholesky()
        .ok_or_else(|| Error::Decomposition(format!("{what}: matrix is not positive definite")))
}

/// One draw from `MVN(mean, cov)` restricted to `[0, inf)^q`, by `sweeps`
/// coordinate-wise Gibbs sweeps started at the positive part of the mean.
pub fn sample_tmvn_nonneg<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    sweeps: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = cholesky(cov, "truncated normal covariance")?;
    let precision = chol.inverse();
    Ok(gibbs_nonneg_precision(mean, &precision, sweeps, rng))
}

/// Gibbs sweeps for `N(mean, precision^{-1})` on the nonnegative orthant.
pub fn gibbs_nonneg_precision<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    precision: &DMatrix<f64>,
    sweeps: usize,
    rng: &mut R,
) -> DVector<f64> {
    let q = mean.len();
    let mut x = mean.map(|m| m.max(0.0));
    for _ in 0..sweeps {
        for j in 0..q {
            let pjj = precision[(j, j)];
            let mut shift = 0.0;
            for k in 0..q {
                if k != j {
                    shift += precision[(j, k)] * (x[k] - mean[k]);
                }
            }
            let cond_mean = mean[j] - shift / pjj;
            x[j] = truncnorm::sample_nonneg(cond_mean, pjj.sqrt().recip(), rng);
        }
    }
    x
}

/// GHK estimate of `ln P(X >= 0)` for `X ~ MVN(mean, cov)` using
/// `mc_size` draws arranged in antithetic pairs.
pub fn log_orthant_prob<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    mc_size: usize,
    rng: &mut R,
) -> Result<f64> {
    if mc_size == 0 {
        return Err(Error::param("mc_size must be at least 1"));
    }
    let q = mean.len();
    if q == 0 {
        return Ok(0.0);
    }
    let chol = cholesky(cov, "orthant covariance")?;
    let l = chol.l();
    // independent coordinates need no simulation
    if q == 1 || is_diagonal(&l) {
        return Ok((0..q).map(|i| normal::ln_cdf(mean[i] / l[(i, i)])).sum());
    }

    let pairs = mc_size.div_ceil(2);
    let mut logw = Vec::with_capacity(2 * pairs);
    let mut u = vec![0.0; q];
    let mut e = vec![0.0; q];
    for _ in 0..pairs {
        for ui in u.iter_mut() {
            *ui = rng.random::<f64>();
        }
        for flip in [false, true] {
            let mut lw = 0.0;
            for i in 0..q {
                let mut shift = mean[i];
                for j in 0..i {
                    shift += l[(i, j)] * e[j];
                }
                let a = -shift / l[(i, i)];
                lw += normal::ln_cdf(-a);
                let ui = if flip { 1.0 - u[i] } else { u[i] };
                e[i] = truncnorm::std_lower_quantile(a, ui.min(1.0 - f64::EPSILON));
            }
            logw.push(lw);
        }
    }
    Ok(log_mean_exp(&logw))
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

pub(crate) fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (s / values.len() as f64).ln()
}
