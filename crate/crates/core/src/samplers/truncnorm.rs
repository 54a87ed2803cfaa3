//! Univariate truncated normal draws.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use super::normal;

/// Draw `Z | Z >= a` for standard normal `Z`.
pub fn sample_std_lower<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a < 0.45 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z >= a {
                return z;
            }
        }
    }
    // Robert (1995) translated-exponential rejection
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = a + e / alpha;
        let rho = (-0.5 * (z - alpha) * (z - alpha)).exp();
        if rng.random::<f64>() <= rho {
            return z;
        }
    }
}

/// Draw from `N(mean, sd^2)` restricted to `[0, inf)`.
pub fn sample_nonneg<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    let a = -mean / sd;
    (mean + sd * sample_std_lower(a, rng)).max(0.0)
}

/// Inverse cdf of `Z | Z >= a` evaluated at `u` in `[0, 1)`.
pub fn std_lower_quantile(a: f64, u: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return normal::quantile(u);
    }
    let e = if a < 0.0 && u < 0.5 {
        normal::quantile(normal::cdf(a) + u * normal::cdf(-a))
    } else {
        // upper tail: P(Z >= e) = (1 - u) P(Z >= a)
        let ln_q = (1.0 - u).ln() + normal::ln_cdf(-a);
        if ln_q > -700.0 {
            -normal::quantile(ln_q.exp())
        } else {
            tail_newton(a, u, ln_q)
        }
    };
    if e.is_finite() {
        e.max(a)
    } else {
        a
    }
}

fn tail_newton(a: f64, u: f64, ln_q: f64) -> f64 {
    let mut e = (a * a - 2.0 * (1.0 - u).ln()).sqrt();
    for _ in 0..50 {
        let g = normal::ln_cdf(-e) - ln_q;
        let slope = -(normal::ln_pdf(e) - normal::ln_cdf(-e)).exp();
        let step = g / slope;
        e -= step;
        if step.abs() < 1e-12 * e.abs().max(1.0) {
            break;
        }
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Mean of Z | Z >= a is phi(a) / (1 - Phi(a)).
    fn truncated_mean(a: f64) -> f64 {
        (normal::ln_pdf(a) - normal::ln_cdf(-a)).exp()
    }

    #[test]
    fn lower_tail_draw_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &a in &[-2.0, 0.0, 0.3, 1.0, 4.0, 12.0] {
            let n = 40_000;
            let draws: Vec<f64> = (0..n).map(|_| sample_std_lower(a, &mut rng)).collect();
            assert!(draws.iter().all(|&z| z >= a));
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - truncated_mean(a)).abs() < 4.0 * se, "a={a} mean={mean}");
        }
    }

    #[test]
    fn quantile_is_monotone_and_bounded() {
        for &a in &[-3.0, 0.0, 2.0, 9.0, 40.0] {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..100 {
                let u = (i as f64 + 0.5) / 100.0;
                let e = std_lower_quantile(a, u);
                assert!(e >= a && e >= prev, "a={a} u={u} e={e}");
                prev = e;
            }
        }
    }

    #[test]
    fn quantile_matches_direct_inversion() {
        // conditional cdf at e is (Phi(e) - Phi(a)) / (1 - Phi(a))
        for &a in &[-1.0, 0.5, 3.0] {
            for &u in &[0.1, 0.5, 0.9] {
                let e = std_lower_quantile(a, u);
                let back = (normal::cdf(e) - normal::cdf(a)) / normal::cdf(-a);
                assert!((back - u).abs() < 1e-9, "a={a} u={u}");
            }
        }
    }

    #[test]
    fn deep_tail_quantile_uses_newton() {
        let e = std_lower_quantile(45.0, 0.5);
        // for large a the excess over a is about ln 2 / a
        assert!((e - 45.0 - 2f64.ln() / 45.0).abs() < 1e-3);
    }
}
