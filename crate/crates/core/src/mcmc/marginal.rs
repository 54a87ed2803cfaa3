//! Marginal likelihood of one unit with its increments integrated out, and
//! the matching block draw of the increments.
//!
//! With `R = X theta + e`, `e ~ N(0, sigma^2 V_Z)` and the increments given
//! independent `N(0, sigma^2 nu^2)` priors truncated to `[0, inf)` (density
//! `2 N(.)` per coordinate), completing the square with
//! `Q = X' V_Z^{-1} X + nu^{-2} I`, `b = X' V_Z^{-1} R` and `m = Q^{-1} b` gives
//!
//! ```text
//! ln p(R) = ln N(R; 0, sigma^2 V_Z) + p ln 2 - p ln nu - ln|Q| / 2
//!           + b'm / (2 sigma^2) + ln P(N(m, sigma^2 Q^{-1}) >= 0)
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::projection::ProjectionCache;
use crate::error::{Error, Result};
use crate::samplers::tmvn::{gibbs_nonneg_precision, log_orthant_prob};
use crate::samplers::truncnorm;

const JITTER: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

/// Full conditional of a unit's increment block, up to the noise scale.
#[derive(Debug, Clone)]
pub struct ThetaConditional {
    precision: DMatrix<f64>,
    covariance: DMatrix<f64>,
    mean: DVector<f64>,
    quad: f64,
    log_det_precision: f64,
}

impl ThetaConditional {
    /// `design` is the transformed design `U D^{-1}`; `pr` is `V_Z^{-1} R`.
    pub fn new(design: &DMatrix<f64>, pr: &DVector<f64>, proj: &ProjectionCache, nu: f64) -> Result<Self> {
        let p = design.ncols();
        if p == 0 {
            return Ok(Self {
                precision: DMatrix::zeros(0, 0),
                covariance: DMatrix::zeros(0, 0),
                mean: DVector::zeros(0),
                quad: 0.0,
                log_det_precision: 0.0,
            });
        }
        let mut q = proj.quadratic_matrix(design);
        q = (&q + q.transpose()) * 0.5;
        for i in 0..p {
            q[(i, i)] += 1.0 / (nu * nu);
        }
        let b = design.transpose() * pr;
        let scale = q.diagonal().amax().max(1.0);
        for eps in JITTER {
            let mut qj = q.clone();
            for i in 0..p {
                qj[(i, i)] += eps * scale;
            }
            if let Some(chol) = qj.clone().cholesky() {
                let log_det_precision = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                let mean = chol.solve(&b);
                let quad = b.dot(&mean);
                let covariance = chol.inverse();
                return Ok(Self {
                    precision: qj,
                    covariance,
                    mean,
                    quad,
                    log_det_precision,
                });
            }
        }
        Err(Error::Decomposition(format!(
            "increment posterior precision ({p} x {p}) is singular after jitter"
        )))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Posterior mean before truncation.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// `Q^{-1}`; the untruncated posterior covariance is `sigma^2` times this.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// The part of the log marginal that depends on the design:
    /// everything except `ln N(R; 0, sigma^2 V_Z)`.
    pub fn log_integral<R: Rng + ?Sized>(&self, sigma: f64, nu: f64, mc_size: usize, rng: &mut R) -> Result<f64> {
        let p = self.dim();
        if p == 0 {
            return Ok(0.0);
        }
        let s2 = sigma * sigma;
        let cov = &self.covariance * s2;
        let orthant = log_orthant_prob(&self.mean, &cov, mc_size, rng)?;
        Ok(
            p as f64 * (std::f64::consts::LN_2 - nu.ln()) - 0.5 * self.log_det_precision
                + self.quad / (2.0 * s2)
                + orthant,
        )
    }

    /// One draw from the truncated conditional by Gibbs sweeps.
    pub fn sample<R: Rng + ?Sized>(&self, sigma: f64, sweeps: usize, rng: &mut R) -> DVector<f64> {
        if self.dim() == 0 {
            return DVector::zeros(0);
        }
        let prec = &self.precision / (sigma * sigma);
        gibbs_nonneg_precision(&self.mean, &prec, sweeps, rng)
    }
}

/// `ln N(R; 0, sigma^2 V_Z)`.
pub fn log_base(resid: &DVector<f64>, pr: &DVector<f64>, proj: &ProjectionCache, sigma: f64) -> f64 {
    let n = resid.len() as f64;
    let s2 = sigma * sigma;
    -0.5 * n * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * proj.log_det_vz() - resid.dot(pr) / (2.0 * s2)
}

pub fn log_marginal<R: Rng + ?Sized>(
    resid: &DVector<f64>,
    design: &DMatrix<f64>,
    proj: &ProjectionCache,
    sigma: f64,
    nu: f64,
    mc_size: usize,
    rng: &mut R,
) -> Result<f64> {
    check_scales(sigma, nu)?;
    let pr = proj.apply(resid);
    let cond = ThetaConditional::new(design, &pr, proj, nu)?;
    Ok(log_base(resid, &pr, proj, sigma) + cond.log_integral(sigma, nu, mc_size, rng)?)
}

/// Block draw of a unit's increments from their truncated normal full
/// conditional.
pub fn sample_theta_block<R: Rng + ?Sized>(
    design: &DMatrix<f64>,
    resid: &DVector<f64>,
    proj: &ProjectionCache,
    sigma: f64,
    nu: f64,
    sweeps: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_scales(sigma, nu)?;
    let pr = proj.apply(resid);
    let cond = ThetaConditional::new(design, &pr, proj, nu)?;
    Ok(cond.sample(sigma, sweeps, rng))
}

/// Independent half-normal draws with scale `sigma * nu`: the increment prior.
pub fn sample_theta_prior<R: Rng + ?Sized>(p: usize, sigma: f64, nu: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(p, |_, _| truncnorm::sample_nonneg(0.0, sigma * nu, rng))
}

fn check_scales(sigma: f64, nu: f64) -> Result<()> {
    if !(sigma > 0.0) || !(nu > 0.0) {
        return Err(Error::param(format!(
            "sigma and nu must be positive, got ({sigma}, {nu})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (DMatrix<f64>, DVector<f64>, ProjectionCache) {
        let n = 6;
        let z = DMatrix::from_element(n, 1, 1.0);
        let proj = ProjectionCache::build(&z, 2.0).unwrap();
        let x = DMatrix::from_fn(n, 1, |i, _| 0.3 + 0.4 * i as f64);
        let r = DVector::from_vec(vec![0.1, 0.5, 0.4, 1.2, 1.0, 1.9]);
        (x, r, proj)
    }

    #[test]
    fn empty_design_is_the_gaussian_density() {
        let (_, r, proj) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::zeros(6, 0);
        let lm = log_marginal(&r, &x, &proj, 0.7, 1.3, 64, &mut rng).unwrap();
        // dense oracle
        let n = 6;
        let mut cov = DMatrix::from_element(n, n, 2.0);
        for i in 0..n {
            cov[(i, i)] += 1.0;
        }
        cov *= 0.49;
        let det: f64 = cov.clone().determinant();
        let inv = cov.try_inverse().unwrap();
        let expect =
            -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * (r.transpose() * inv * &r)[0];
        assert!((lm - expect).abs() < 1e-10);
    }

    #[test]
    fn scalar_conditional_matches_closed_form() {
        let (x, r, proj) = toy();
        let (sigma, nu) = (0.8, 1.5);
        let pr = proj.apply(&r);
        let c = ThetaConditional::new(&x, &pr, &proj, nu).unwrap();
        let q = proj.quadratic_matrix(&x)[(0, 0)] + 1.0 / (nu * nu);
        let b = (x.transpose() * &pr)[0];
        assert!((c.mean()[0] - b / q).abs() < 1e-12);
        assert!((c.covariance()[(0, 0)] - 1.0 / q).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws: Vec<f64> = (0..40_000).map(|_| c.sample(sigma, 10, &mut rng)[0]).collect();
        assert!(draws.iter().all(|d| *d >= 0.0));
        // truncated normal mean m + s phi(m/s) / Phi(m/s)
        let (m, s) = (b / q, sigma / q.sqrt());
        let expect = m + s * normal::pdf(m / s) / normal::cdf(m / s);
        let got = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((got - expect).abs() < 4.0 * s / 200.0, "{got} vs {expect}");
    }

    #[test]
    fn tight_prior_shrinks_to_zero() {
        let (x, r, proj) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = sample_theta_block(&x, &r, &proj, 1.0, 1e-4, 10, &mut rng).unwrap();
        assert!(theta[0] < 1e-3);
    }
}
