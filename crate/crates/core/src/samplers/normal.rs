//! Standard normal distribution helpers.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `Phi(x)`, with `Phi(-inf) = 0` and `Phi(+inf) = 1`.
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-x * FRAC_1_SQRT_2)
    }
}

/// `ln Phi(x)`, accurate far into the lower tail.
pub fn ln_cdf(x: f64) -> f64 {
    if x > -30.0 {
        cdf(x).ln()
    } else if x == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        // Mills-ratio asymptotic series
        let z2 = x * x;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - (-x).ln() - LN_SQRT_2PI + series.ln()
    }
}

pub fn ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `Phi^{-1}(p)` for `p` in `(0, 1)`.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        -SQRT_2 * erfc_inv(2.0 * p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert_eq!(cdf(0.0), 0.5);
        assert!(
            (cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-14,
            "{:e}",
            cdf(1.0) - 0.841_344_746_068_542_9
        );
        assert!((cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-14);
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
    }

    #[test]
    fn ln_cdf_is_continuous_at_the_switch() {
        let a = ln_cdf(-29.999_999);
        let b = ln_cdf(-30.000_001);
        assert!((a - b).abs() < 1e-3);
        assert!(ln_cdf(-60.0).is_finite());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-6, 0.01, 0.3, 0.5, 0.77, 0.999] {
            assert!((cdf(quantile(p)) - p).abs() < 1e-12 * p.max(1e-3) * 1e3);
        }
    }
}
