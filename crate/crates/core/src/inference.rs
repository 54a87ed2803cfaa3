//! Posterior summaries: pointwise surface bands, susceptibility
//! probabilities and the Gelman-Rubin potential scale reduction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::PosteriorDraw;

/// Type-7 empirical quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `100 (exp(v) - 1)`: a log-scale effect as a percent change.
pub fn percent_change(v: f64) -> f64 {
    100.0 * v.exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntervalStyle {
    /// Equal-tailed `(1-q)/2`, `1-(1-q)/2` quantiles.
    #[default]
    Central,
    /// Lower bound at the `1-q` quantile, upper bound at the largest draw.
    UpperOneSided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSummary {
    pub grid_x: Vec<f64>,
    pub grid_l: Vec<usize>,
    pub mean: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub level: f64,
    pub widen: f64,
    pub style: IntervalStyle,
}

impl SurfaceSummary {
    /// Applies `f` to the mean and both bounds (e.g. [`percent_change`]);
    /// `f` must be nondecreasing.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            mean: self.mean.map(&f),
            lower: self.lower.map(&f),
            upper: self.upper.map(&f),
            ..self.clone()
        }
    }

    pub fn mean_width(&self) -> f64 {
        (&self.upper - &self.lower).mean()
    }
}

pub fn summarize_surface(
    draws: &[PosteriorDraw],
    grid_x: &[f64],
    grid_l: &[usize],
    level: f64,
    widen: f64,
    style: IntervalStyle,
) -> Result<SurfaceSummary> {
    let surfaces: Vec<&DMatrix<f64>> = draws.iter().map(|d| &d.surface).collect();
    summarize_matrices(&surfaces, grid_x, grid_l, level, widen, style)
}

/// Pointwise mean and credible band of a set of surface draws.
pub fn summarize_matrices(
    surfaces: &[&DMatrix<f64>],
    grid_x: &[f64],
    grid_l: &[usize],
    level: f64,
    widen: f64,
    style: IntervalStyle,
) -> Result<SurfaceSummary> {
    if surfaces.len() < 2 {
        return Err(Error::param(format!(
            "need at least 2 draws to summarize, got {}",
            surfaces.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) || !(widen >= 0.0) {
        return Err(Error::param(format!("invalid level {level} or widening {widen}")));
    }
    let (nx, nl) = (grid_x.len(), grid_l.len());
    if surfaces.iter().any(|s| s.nrows() != nx || s.ncols() != nl) {
        return Err(Error::param("surface draws do not match the grid"));
    }
    let mut mean = DMatrix::zeros(nx, nl);
    let mut lower = DMatrix::zeros(nx, nl);
    let mut upper = DMatrix::zeros(nx, nl);
    let mut buf = vec![0.0; surfaces.len()];
    let tail = 1.0 - level;
    for j in 0..nl {
        for i in 0..nx {
            for (k, s) in surfaces.iter().enumerate() {
                buf[k] = s[(i, j)];
            }
            mean[(i, j)] = buf.iter().sum::<f64>() / buf.len() as f64;
            buf.sort_by(f64::total_cmp);
            let (lo, hi) = match style {
                IntervalStyle::Central => (
                    quantile_sorted(&buf, tail / 2.0),
                    quantile_sorted(&buf, 1.0 - tail / 2.0),
                ),
                IntervalStyle::UpperOneSided => (quantile_sorted(&buf, tail), buf[buf.len() - 1]),
            };
            lower[(i, j)] = lo - widen;
            upper[(i, j)] = hi + widen;
        }
    }
    Ok(SurfaceSummary {
        grid_x: grid_x.to_vec(),
        grid_l: grid_l.to_vec(),
        mean,
        lower,
        upper,
        level,
        widen,
        style,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SusceptibilityProfile {
    pub probabilities: Vec<f64>,
    pub threshold: f64,
}

impl SusceptibilityProfile {
    /// Lags whose probability reaches the threshold.
    pub fn declared(&self) -> Vec<usize> {
        self.probabilities
            .iter()
            .enumerate()
            .filter(|(_, p)| **p >= self.threshold)
            .map(|(l, _)| l)
            .collect()
    }

    pub fn with_threshold(&self, threshold: f64) -> Self {
        Self {
            probabilities: self.probabilities.clone(),
            threshold,
        }
    }
}

pub fn susceptibility(draws: &[PosteriorDraw], threshold: f64) -> Result<SusceptibilityProfile> {
    let indicators: Vec<&[bool]> = draws.iter().map(|d| d.lag_effects.as_slice()).collect();
    susceptibility_from_indicators(&indicators, threshold)
}

/// Per-lag mean of effect indicators.
pub fn susceptibility_from_indicators(indicators: &[&[bool]], threshold: f64) -> Result<SusceptibilityProfile> {
    let first = indicators.first().ok_or_else(|| Error::param("no draws"))?;
    let lags = first.len();
    if indicators.iter().any(|e| e.len() != lags) {
        return Err(Error::param("draws disagree on the number of lags"));
    }
    let mut counts = vec![0usize; lags];
    for e in indicators {
        for (c, hit) in counts.iter_mut().zip(e.iter()) {
            *c += *hit as usize;
        }
    }
    Ok(SusceptibilityProfile {
        probabilities: counts.iter().map(|c| *c as f64 / indicators.len() as f64).collect(),
        threshold,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GelmanRubin {
    pub median: f64,
    /// Pointwise `R-hat`, same shape as the surfaces.
    pub map: DMatrix<f64>,
}

/// Potential scale reduction at each surface point; `chains[j][k]` is draw
/// `k` of chain `j`. Points where every draw is equal report 1.
pub fn gelman_rubin(chains: &[Vec<&DMatrix<f64>>]) -> Result<GelmanRubin> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::param("Gelman-Rubin needs at least two chains"));
    }
    let len = chains[0].len();
    if len < 10 || chains.iter().any(|c| c.len() != len) {
        return Err(Error::param("chains need equal length of at least 10 draws"));
    }
    let (nr, nc) = chains[0][0].shape();
    if chains.iter().flatten().any(|s| s.shape() != (nr, nc)) {
        return Err(Error::param("surface draws differ in shape"));
    }
    let nf = len as f64;
    let mut map = DMatrix::zeros(nr, nc);
    let mut means = vec![0.0; m];
    let mut vars = vec![0.0; m];
    for j in 0..nc {
        for i in 0..nr {
            for (c, chain) in chains.iter().enumerate() {
                let mu = chain.iter().map(|s| s[(i, j)]).sum::<f64>() / nf;
                means[c] = mu;
                vars[c] = chain.iter().map(|s| (s[(i, j)] - mu).powi(2)).sum::<f64>() / (nf - 1.0);
            }
            let grand = means.iter().sum::<f64>() / m as f64;
            let b = nf / (m as f64 - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
            let w = vars.iter().sum::<f64>() / m as f64;
            map[(i, j)] = if w > 0.0 {
                (((nf - 1.0) / nf * w + b / nf) / w).sqrt()
            } else if b > 0.0 {
                f64::INFINITY
            } else {
                1.0
            };
        }
    }
    let mut all: Vec<f64> = map.iter().copied().collect();
    all.sort_by(f64::total_cmp);
    let median = quantile_sorted(&all, 0.5);
    Ok(GelmanRubin { median, map })
}

/// [`gelman_rubin`] over the surfaces of chain outputs.
pub fn gelman_rubin_draws(chains: &[&[PosteriorDraw]]) -> Result<GelmanRubin> {
    let surfaces: Vec<Vec<&DMatrix<f64>>> = chains.iter().map(|c| c.iter().map(|d| &d.surface).collect()).collect();
    gelman_rubin(&surfaces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn single(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile_sorted(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn identical_draws_give_width_two_eps() {
        let s = DMatrix::from_fn(2, 3, |i, j| (i + j) as f64);
        let draws = vec![&s; 5];
        let out = summarize_matrices(&draws, &[0.0, 1.0], &[0, 1, 2], 0.95, 0.05, IntervalStyle::Central).unwrap();
        assert_eq!(out.mean, s);
        assert!(((&out.upper - &out.lower).add_scalar(-0.1)).amax() < 1e-12);
        let narrow = summarize_matrices(&draws, &[0.0, 1.0], &[0, 1, 2], 0.95, 0.0, IntervalStyle::Central).unwrap();
        assert!((out.mean_width() - narrow.mean_width() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn normal_quantiles_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(2.0, 3.0).unwrap();
        let draws: Vec<DMatrix<f64>> = (0..40_000).map(|_| single(normal.sample(&mut rng))).collect();
        let refs: Vec<&DMatrix<f64>> = draws.iter().collect();
        let out = summarize_matrices(&refs, &[0.0], &[0], 0.95, 0.0, IntervalStyle::Central).unwrap();
        assert!((out.lower[(0, 0)] - (2.0 - 1.959964 * 3.0)).abs() < 0.1);
        assert!((out.upper[(0, 0)] - (2.0 + 1.959964 * 3.0)).abs() < 0.1);
        let one = summarize_matrices(&refs, &[0.0], &[0], 0.95, 0.0, IntervalStyle::UpperOneSided).unwrap();
        assert!((one.lower[(0, 0)] - (2.0 - 1.644854 * 3.0)).abs() < 0.1);
    }

    #[test]
    fn too_few_draws_is_an_error() {
        assert!(summarize_matrices(&[], &[0.0], &[0], 0.95, 0.0, IntervalStyle::Central).is_err());
    }

    #[test]
    fn susceptibility_counts() {
        let a = [true, false, true];
        let b = [true, false, false];
        let p = susceptibility_from_indicators(&[&a, &b], 0.95).unwrap();
        assert_eq!(p.probabilities, vec![1.0, 0.0, 0.5]);
        assert_eq!(p.declared(), vec![0]);
        let none = [false; 3];
        assert!(susceptibility_from_indicators(&[&none, &none], 0.95)
            .unwrap()
            .probabilities
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn rhat_degenerate_copies() {
        let draws: Vec<DMatrix<f64>> = (0..20).map(|k| single(k as f64)).collect();
        let chain: Vec<&DMatrix<f64>> = draws.iter().collect();
        let gr = gelman_rubin(&[chain.clone(), chain]).unwrap();
        assert!((gr.median - (19.0f64 / 20.0).sqrt()).abs() < 1e-12);
        assert!(gelman_rubin(&[draws.iter().collect()]).is_err());
    }

    #[test]
    fn rhat_stationary_and_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mk = |shift: f64, rng: &mut ChaCha8Rng| -> Vec<DMatrix<f64>> {
            (0..10_000)
                .map(|_| DMatrix::from_fn(2, 2, |_, _| shift + normal.sample(rng)))
                .collect()
        };
        let a = mk(0.0, &mut rng);
        let b = mk(0.0, &mut rng);
        let c = mk(10.0, &mut rng);
        let gr = gelman_rubin(&[a.iter().collect(), b.iter().collect()]).unwrap();
        assert!(gr.median < 1.01);
        let gr = gelman_rubin(&[a.iter().collect(), c.iter().collect()]).unwrap();
        assert!(gr.median > 1.1 * 5.0);
    }

    #[test]
    fn constant_points_report_one() {
        let draws: Vec<DMatrix<f64>> = (0..12).map(|_| single(0.0)).collect();
        let gr = gelman_rubin(&[draws.iter().collect(), draws.iter().collect()]).unwrap();
        assert_eq!(gr.median, 1.0);
    }

    #[test]
    fn percent_change_formula() {
        assert!((percent_change(0.0)).abs() < 1e-15);
        assert!((percent_change(2f64.ln()) - 100.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn wider_level_gives_wider_interval(values in proptest::collection::vec(-50.0f64..50.0, 3..60), q1 in 0.5f64..0.9, dq in 0.01f64..0.09) {
            let draws: Vec<DMatrix<f64>> = values.iter().map(|v| single(*v)).collect();
            let refs: Vec<&DMatrix<f64>> = draws.iter().collect();
            let a = summarize_matrices(&refs, &[0.0], &[0], q1, 0.0, IntervalStyle::Central).unwrap();
            let b = summarize_matrices(&refs, &[0.0], &[0], q1 + dq, 0.0, IntervalStyle::Central).unwrap();
            prop_assert!(b.lower[(0, 0)] <= a.lower[(0, 0)] + 1e-12);
            prop_assert!(b.upper[(0, 0)] >= a.upper[(0, 0)] - 1e-12);
        }

        #[test]
        fn susceptibility_ignores_order(mut rows in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 4), 1..30), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let refs: Vec<&[bool]> = rows.iter().map(|r| r.as_slice()).collect();
            let a = susceptibility_from_indicators(&refs, 0.95).unwrap();
            rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let refs: Vec<&[bool]> = rows.iter().map(|r| r.as_slice()).collect();
            let b = susceptibility_from_indicators(&refs, 0.95).unwrap();
            for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn lower_threshold_declares_superset(probs in proptest::collection::vec(0.0f64..1.0, 1..25)) {
            let p = SusceptibilityProfile { probabilities: probs, threshold: 0.95 };
            let strict = p.declared();
            let loose = p.with_threshold(0.90).declared();
            prop_assert!(strict.iter().all(|l| loose.contains(l)));
        }
    }
}
