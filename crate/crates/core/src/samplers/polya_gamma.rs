//! Pólya-gamma draws.
//!
//! `PG(1, z)` uses Devroye's alternating-series sampler for `J*(1, z/2)`
//! (Polson, Scott & Windle). Integer `b <= EXACT_LIMIT` sums `b` such draws;
//! fractional remainders use a truncated gamma series; larger `b` switches
//! to a Gaussian with the exact PG mean and variance.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use std::f64::consts::PI;

use super::normal;
use crate::error::{Error, Result};

pub const EXACT_LIMIT: f64 = 50.0;

const TRUNC: f64 = 0.64;
const TRUNC_RECIP: f64 = 1.0 / TRUNC;

/// `E[PG(b, z)] = b tanh(z/2) / (2z)`, `b/4` at `z = 0`.
pub fn pg_mean(b: f64, z: f64) -> f64 {
    let z = z.abs();
    if z < 1e-6 {
        b * (0.25 - z * z / 48.0)
    } else {
        b * (0.5 * z).tanh() / (2.0 * z)
    }
}

/// `Var[PG(b, z)] = b (sinh z - z) / (4 z^3 cosh^2(z/2))`, `b/24` at `z = 0`.
pub fn pg_variance(b: f64, z: f64) -> f64 {
    let z = z.abs();
    if z < 1e-3 {
        b * (1.0 / 24.0 - z * z / 240.0)
    } else {
        let c = (0.5 * z).cosh();
        b * (z.sinh() - z) / (4.0 * z.powi(3) * c * c)
    }
}

pub fn sample_polya_gamma<R: Rng + ?Sized>(b: f64, z: f64, rng: &mut R) -> Result<f64> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::param(format!("Pólya-gamma shape must be positive, got {b}")));
    }
    if !z.is_finite() {
        return Err(Error::param(format!("Pólya-gamma tilt must be finite, got {z}")));
    }
    if b > EXACT_LIMIT {
        let mean = pg_mean(b, z);
        let sd = pg_variance(b, z).sqrt();
        let draw: f64 = StandardNormal.sample(rng);
        return Ok((mean + sd * draw).max(1e-3 * mean));
    }
    let whole = b.floor() as usize;
    let mut total: f64 = (0..whole).map(|_| sample_pg1(z, rng)).sum();
    let frac = b - whole as f64;
    if frac > 0.0 {
        total += sample_gamma_series(frac, z, rng);
    }
    Ok(total)
}

/// Exact `PG(1, z)`.
pub fn sample_pg1<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let z = 0.5 * z.abs();
    let k = 0.125 * PI * PI + 0.5 * z * z;
    let p_texp = mass_texpon(z, k);
    loop {
        let x = if rng.random::<f64>() < p_texp {
            let e: f64 = Exp1.sample(rng);
            TRUNC + e / k
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Probability of the truncated-exponential branch of the proposal.
fn mass_texpon(z: f64, k: f64) -> f64 {
    let t = TRUNC;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = k.ln() + k * t;
    let xb = x0 - z + normal::ln_cdf(b);
    let xa = x0 + z + normal::ln_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse Gaussian `IG(1/z, 1)` truncated to `(0, TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNC;
    if TRUNC_RECIP > z {
        loop {
            let (mut e1, mut e2): (f64, f64) = (Exp1.sample(rng), Exp1.sample(rng));
            while e1 * e1 > 2.0 * e2 / t {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
            }
            let r = 1.0 + e1 * t;
            let x = t / (r * r);
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    }
    let mu = 1.0 / z;
    loop {
        let g: f64 = StandardNormal.sample(rng);
        let y = g * g;
        let mu_y = mu * y;
        let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
        if rng.random::<f64>() > mu / (mu + x) {
            x = mu * mu / x;
        }
        if x < t {
            return x;
        }
    }
}

fn series_coef(n: usize, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let h = n as f64 + 0.5;
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}

/// `PG(b, z)` for `0 < b < 1` from its infinite-convolution representation,
/// truncated at `TERMS` with the omitted tail replaced by its mean.
fn sample_gamma_series<R: Rng + ?Sized>(b: f64, z: f64, rng: &mut R) -> f64 {
    const TERMS: usize = 200;
    let gamma = Gamma::new(b, 1.0).expect("shape is positive");
    let c2 = (z / (2.0 * PI)).powi(2);
    let mut total = 0.0;
    for k in 1..=TERMS {
        let h = k as f64 - 0.5;
        let g: f64 = gamma.sample(rng);
        total += g / (h * h + c2);
    }
    let head = total / (2.0 * PI * PI);
    let head_mean: f64 = (1..=TERMS)
        .map(|k| {
            let h = k as f64 - 0.5;
            b / (h * h + c2)
        })
        .sum::<f64>()
        / (2.0 * PI * PI);
    head + (pg_mean(b, z) - head_mean).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_and_se(draws: &[f64]) -> (f64, f64) {
        let n = draws.len() as f64;
        let m = draws.iter().sum::<f64>() / n;
        let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    /// The PG(1, z) density is a tilted alternating series; integrating
    /// x * density numerically gives an oracle for the mean independent of
    /// the tanh formula.
    fn mean_by_quadrature(z: f64) -> f64 {
        // J*(1, 0) density of X = 4 * PG(1, 0)
        let jstar_density = |x: f64| -> f64 {
            (0..200)
                .map(|n| {
                    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                    sign * series_coef(n, x)
                })
                .sum()
        };
        // PG(1, z) density: cosh(z/2) exp(-z^2 w / 2) p_{PG(1,0)}(w), p_{PG(1,0)}(w) = 4 f_J(4w)
        let f = |w: f64| (0.5 * z).cosh() * (-0.5 * z * z * w).exp() * 4.0 * jstar_density(4.0 * w);
        let (a, b, m) = (1e-6, 8.0, 400_000);
        let h = (b - a) / m as f64;
        let mut s = 0.0;
        let mut mass = 0.0;
        for i in 0..=m {
            let w = a + i as f64 * h;
            let wt = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let d = f(w);
            s += wt * w * d;
            mass += wt * d;
        }
        assert!((mass * h / 3.0 - 1.0).abs() < 1e-6, "density mass {}", mass * h / 3.0);
        s * h / 3.0
    }

    #[test]
    fn mean_formula_agrees_with_density_integration() {
        let q = mean_by_quadrature(1.0);
        assert!((q - 0.2311).abs() < 1e-4, "{q}");
        assert!((pg_mean(1.0, 1.0) - q).abs() < 1e-6);
        assert!((pg_mean(1.0, 0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn pg1_mean_at_z_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..100_000).map(|_| sample_pg1(1.0, &mut rng)).collect();
        let (m, se) = mean_and_se(&draws);
        assert!((m - pg_mean(1.0, 1.0)).abs() < 3.0 * se, "{m} ± {se}");
        let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((v - pg_variance(1.0, 1.0)).abs() / pg_variance(1.0, 1.0) < 0.03);
    }

    #[test]
    fn pg1_mean_at_zero_and_large_tilt() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for &z in &[0.0, 4.0, 20.0] {
            let draws: Vec<f64> = (0..50_000).map(|_| sample_pg1(z, &mut rng)).collect();
            let (m, se) = mean_and_se(&draws);
            assert!((m - pg_mean(1.0, z)).abs() < 3.5 * se, "z={z}: {m} ± {se}");
        }
    }

    #[test]
    fn mean_is_linear_in_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let draws: Vec<f64> = (0..50_000)
            .map(|_| sample_polya_gamma(3.0, 1.0, &mut rng).unwrap())
            .collect();
        let (m, se) = mean_and_se(&draws);
        assert!((m - 3.0 * 0.231_058_6).abs() < 3.5 * se);
    }

    #[test]
    fn fractional_and_large_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| sample_polya_gamma(2.5, 0.7, &mut rng).unwrap())
            .collect();
        let (m, se) = mean_and_se(&draws);
        assert!((m - pg_mean(2.5, 0.7)).abs() < 3.5 * se);

        let draws: Vec<f64> = (0..20_000)
            .map(|_| sample_polya_gamma(150.0, 0.4, &mut rng).unwrap())
            .collect();
        let (m, se) = mean_and_se(&draws);
        assert!((m - pg_mean(150.0, 0.4)).abs() < 3.5 * se);
        let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((v / pg_variance(150.0, 0.4) - 1.0).abs() < 0.05);
    }

    #[test]
    fn nonpositive_shape_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        assert!(sample_polya_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_polya_gamma(-1.0, 1.0, &mut rng).is_err());
    }
}
