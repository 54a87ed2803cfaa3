//! Half-Cauchy scale updates via the inverse-gamma mixture
//! `s^2 | a ~ IG(1/2, 1/a)`, `a ~ IG(1/2, 1)` (Makalic & Schmidt).

use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Draw from `InvGamma(shape, scale)` (density proportional to
/// `x^{-shape-1} exp(-scale / x)`).
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
    scale / g
}

/// One Gibbs pass for a variance with a half-Cauchy(0, 1) prior on its
/// square root, given `count` Gaussian terms whose squares sum to `sum_sq`.
/// Returns `(variance, aux)`.
pub fn update_halfcauchy_variance<R: Rng + ?Sized>(sum_sq: f64, count: usize, aux: f64, rng: &mut R) -> (f64, f64) {
    let shape = 0.5 * (count as f64 + 1.0);
    let variance = sample_inv_gamma(shape, 1.0 / aux + 0.5 * sum_sq, rng);
    let aux = sample_inv_gamma(1.0, 1.0 + 1.0 / variance, rng);
    (variance, aux)
}
