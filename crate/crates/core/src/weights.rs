//! Smooth bin weights and the per-unit design matrices.
//!
//! For a bin `[lo, hi)` the weight of exposure `x` is
//! `Phi((hi - x)/s) - Phi((lo - x)/s)`. Because the extreme bins are
//! unbounded, the weights of one exposure tree telescope to 1, and the
//! design column multiplying increment `c` (the suffix sum of bin weights)
//! collapses to `sum_{l in lags} Phi((x_{t-l} - split_c)/s)`.

use nalgebra::{DMatrix, DVector};

use crate::data::LaggedDataset;
use crate::error::{Error, Result};
use crate::samplers::normal;
use crate::tree::{Ensemble, ExposureTree, LagSet, NestedTreeUnit};

pub fn psi(x: f64, lower: f64, upper: f64, sigma_x: f64) -> Result<f64> {
    if !(sigma_x > 0.0) {
        return Err(Error::param(format!("sigma_x must be positive, got {sigma_x}")));
    }
    Ok(psi_unchecked(x, lower, upper, sigma_x))
}

#[inline]
fn psi_unchecked(x: f64, lower: f64, upper: f64, sigma_x: f64) -> f64 {
    let hi = if upper == f64::INFINITY {
        1.0
    } else {
        normal::cdf((upper - x) / sigma_x)
    };
    let lo = if lower == f64::NEG_INFINITY {
        0.0
    } else {
        normal::cdf((lower - x) / sigma_x)
    };
    (hi - lo).clamp(0.0, 1.0)
}

/// Weight mass of exposure `x` at or above `split`: the suffix sum of bin
/// weights from the bin starting at `split`.
#[inline]
pub fn upper_mass(x: f64, split: f64, sigma_x: f64) -> f64 {
    normal::cdf((x - split) / sigma_x)
}

/// Smooth bin-count matrix `U_a` of one unit, bin 1 of each nested tree
/// omitted.
#[derive(Debug, Clone)]
pub struct UnitDesign {
    pub matrix: DMatrix<f64>,
    /// `(nested tree b, bin c)` for each column, both zero-based; `c >= 1`.
    pub columns: Vec<(usize, usize)>,
}

impl UnitDesign {
    /// `U_a D_a^{-1}` restricted to the free increments: within each nested
    /// tree, column `c` becomes the sum of bin columns `c..C`.
    pub fn transformed(&self) -> DMatrix<f64> {
        let mut out = self.matrix.clone();
        let k = self.columns.len();
        for j in (0..k).rev() {
            if j + 1 < k && self.columns[j + 1].0 == self.columns[j].0 {
                let next = out.column(j + 1).into_owned();
                let mut col = out.column_mut(j);
                col += next;
            }
        }
        out
    }
}

pub fn compute_unit_design(unit: &NestedTreeUnit, data: &LaggedDataset, sigma_x: f64) -> Result<UnitDesign> {
    if !(sigma_x > 0.0) {
        return Err(Error::param(format!("sigma_x must be positive, got {sigma_x}")));
    }
    if unit.time_tree.max_lag() != data.lag_count() {
        return Err(Error::param("unit lag range does not match the dataset"));
    }
    let x = data.exposures();
    let n = data.n();
    let mut columns = Vec::new();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for (b, (lags, tree)) in unit
        .time_tree
        .terminal_lag_sets()
        .into_iter()
        .zip(unit.time_tree.exposure_trees())
        .enumerate()
    {
        for (c, bin) in tree.ordered_bins().into_iter().enumerate().skip(1) {
            let col = DVector::from_fn(n, |t, _| {
                lags.iter()
                    .map(|l| psi_unchecked(x[(t, l)], bin.lower, bin.upper, sigma_x))
                    .sum()
            });
            cols.push(col);
            columns.push((b, c));
        }
    }
    let matrix = if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    Ok(UnitDesign { matrix, columns })
}

/// `w(x, l)` on a grid; rows follow `grid_x`, columns `grid_l`.
pub fn evaluate_surface(ensemble: &Ensemble, grid_x: &[f64], grid_l: &[usize], sigma_x: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(grid_x.len(), grid_l.len());
    for unit in &ensemble.units {
        let sets = unit.time_tree.terminal_lag_sets();
        for (lags, tree) in sets.iter().zip(unit.time_tree.exposure_trees()) {
            if !tree.is_split() {
                continue;
            }
            let bins = tree.ordered_bins();
            let levels = tree.levels();
            for (j, &l) in grid_l.iter().enumerate() {
                if !lags.contains(l) {
                    continue;
                }
                for (i, &xv) in grid_x.iter().enumerate() {
                    let w: f64 = bins
                        .iter()
                        .zip(&levels)
                        .skip(1)
                        .map(|(bin, d)| d * psi_unchecked(xv, bin.lower, bin.upper, sigma_x))
                        .sum();
                    out[(i, j)] += w;
                }
            }
        }
    }
    out
}

/// Cumulative-over-lags smooth weights for every candidate split value.
///
/// For grid value `g_k`, `cum[k][(l+1) n + t] = sum_{l' <= l} Phi((x_{t,l'} - g_k)/s)`,
/// so a design column for any lag interval costs one subtraction per row.
#[derive(Debug, Clone)]
pub struct SplitBasis {
    grid: Vec<f64>,
    cum: Vec<Vec<f64>>,
    n: usize,
    sigma_x: f64,
    exposures: DMatrix<f64>,
}

impl SplitBasis {
    pub fn new(data: &LaggedDataset, grid: &[f64], sigma_x: f64) -> Self {
        let n = data.n();
        let lags = data.lag_count() + 1;
        let x = data.exposures();
        let cum = grid
            .iter()
            .map(|&g| {
                let mut v = vec![0.0; (lags + 1) * n];
                for l in 0..lags {
                    for t in 0..n {
                        v[(l + 1) * n + t] = v[l * n + t] + upper_mass(x[(t, l)], g, sigma_x);
                    }
                }
                v
            })
            .collect();
        Self {
            grid: grid.to_vec(),
            cum,
            n,
            sigma_x,
            exposures: x.clone(),
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    /// Transformed design column for increment at `split` over `lags`.
    pub fn column(&self, split: f64, lags: LagSet) -> DVector<f64> {
        match self.grid.binary_search_by(|g| g.total_cmp(&split)) {
            Ok(k) => {
                let c = &self.cum[k];
                let hi = (lags.last + 1) * self.n;
                let lo = lags.first * self.n;
                DVector::from_fn(self.n, |t, _| c[hi + t] - c[lo + t])
            }
            Err(_) => DVector::from_fn(self.n, |t, _| {
                lags.iter()
                    .map(|l| upper_mass(self.exposures[(t, l)], split, self.sigma_x))
                    .sum()
            }),
        }
    }

    /// Transformed design block (`n x (C-1)`) for one nested tree.
    pub fn block(&self, tree: &ExposureTree, lags: LagSet) -> DMatrix<f64> {
        let splits = tree.split_values();
        let mut m = DMatrix::zeros(self.n, splits.len());
        for (j, &s) in splits.iter().enumerate() {
            m.set_column(j, &self.column(s, lags));
        }
        m
    }

    /// Transformed design `U_a D_a^{-1}` of a whole unit.
    pub fn unit_matrix(&self, unit: &NestedTreeUnit) -> DMatrix<f64> {
        let blocks: Vec<DMatrix<f64>> = unit
            .time_tree
            .terminal_lag_sets()
            .into_iter()
            .zip(unit.time_tree.exposure_trees())
            .map(|(lags, tree)| self.block(tree, lags))
            .collect();
        hstack(self.n, &blocks)
    }
}

pub(crate) fn hstack(n: usize, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut m = DMatrix::zeros(n, total);
    let mut offset = 0;
    for b in blocks {
        if b.ncols() > 0 {
            m.columns_mut(offset, b.ncols()).copy_from(b);
            offset += b.ncols();
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{HyperState, ModelConfig};
    use crate::tree::{ExposureNode, TimeNode, TimeTree};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(rows: &[Vec<f64>]) -> LaggedDataset {
        let n = rows.len();
        let lags = rows[0].len() - 1;
        let x = DMatrix::from_fn(n, lags + 1, |i, l| rows[i][l]);
        LaggedDataset::new(DVector::zeros(n), x, DMatrix::from_element(n, 1, 1.0), lags, None).unwrap()
    }

    fn split_tree(values: &[f64], theta: &[f64]) -> ExposureTree {
        fn build(v: &[f64]) -> ExposureNode {
            if v.is_empty() {
                return ExposureNode::Leaf;
            }
            let m = v.len() / 2;
            ExposureNode::split(v[m], build(&v[..m]), build(&v[m + 1..]))
        }
        let mut inc = vec![0.0];
        inc.extend_from_slice(theta);
        ExposureTree::with_increments(build(values), inc).unwrap()
    }

    fn hyper() -> HyperState {
        let cfg = ModelConfig {
            lag_count: 2,
            ..Default::default()
        };
        let data = dataset(&[vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 0.0]]);
        HyperState::initial(&cfg.resolve(&data).unwrap(), 1)
    }

    #[test]
    fn psi_basic_values() {
        assert_eq!(psi(3.0, f64::NEG_INFINITY, f64::INFINITY, 1.0).unwrap(), 1.0);
        assert_eq!(psi(2.0, f64::NEG_INFINITY, 2.0, 0.7).unwrap(), 0.5);
        assert!((psi(5.0, 3.0, 7.0, 1e-6).unwrap() - 1.0).abs() < 1e-12);
        assert!(psi(5.0, 3.0, 7.0, 0.0).is_err());
    }

    #[test]
    fn unsplit_unit_has_no_columns() {
        let data = dataset(&[vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 0.0]]);
        let unit = NestedTreeUnit::new(0, TimeTree::single(2));
        let d = compute_unit_design(&unit, &data, 1.0).unwrap();
        assert_eq!(d.matrix.ncols(), 0);
        assert_eq!(d.matrix.nrows(), 2);
    }

    #[test]
    fn step_limit_counts_lags_above_split() {
        let data = dataset(&[vec![20.0, 26.0, 30.0]]);
        let tree = TimeTree::new(TimeNode::Leaf(split_tree(&[25.0], &[1.0])), 2).unwrap();
        let unit = NestedTreeUnit::new(0, tree);
        let d = compute_unit_design(&unit, &data, 1e-9).unwrap();
        assert_eq!(d.matrix.ncols(), 1);
        assert!((d.matrix[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weights_of_one_tree_sum_to_one() {
        let tree = split_tree(&[-1.0, 0.5, 2.0, 4.0], &[0.1, 0.2, 0.3, 0.4]);
        for &x in &[-10.0, -1.0, 0.3, 2.0, 9.0] {
            let total: f64 = tree
                .ordered_bins()
                .iter()
                .map(|b| psi(x, b.lower, b.upper, 0.8).unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn transformed_design_matches_split_basis_and_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..5).map(|_| rng.random_range(0.0..10.0)).collect())
            .collect();
        let data = dataset(&rows);
        let leaf = |v: &[f64]| TimeNode::Leaf(split_tree(v, &vec![0.5; v.len()]));
        let tt = TimeTree::new(TimeNode::split(1, leaf(&[3.0, 6.0]), leaf(&[5.0])), 4).unwrap();
        let unit = NestedTreeUnit::new(0, tt);
        let sigma_x = 1.3;
        let design = compute_unit_design(&unit, &data, sigma_x).unwrap();

        // row sums per nested tree equal |lags| minus the bin-1 mass
        let sets = unit.time_tree.terminal_lag_sets();
        for t in 0..data.n() {
            for (b, (lags, tree)) in sets.iter().zip(unit.time_tree.exposure_trees()).enumerate() {
                let row: f64 = design
                    .columns
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.0 == b)
                    .map(|(j, _)| design.matrix[(t, j)])
                    .sum();
                let first = tree.ordered_bins()[0];
                let bin1: f64 = lags
                    .iter()
                    .map(|l| psi(data.exposures()[(t, l)], first.lower, first.upper, sigma_x).unwrap())
                    .sum();
                assert!((row - (lags.len() as f64 - bin1)).abs() < 1e-12);
            }
        }

        let transformed = design.transformed();
        let basis = SplitBasis::new(&data, &[3.0, 5.0, 6.0], sigma_x);
        let fast = basis.unit_matrix(&unit);
        assert_eq!(fast.shape(), transformed.shape());
        assert!((fast - &transformed).amax() < 1e-12);
        // off-grid split values fall back to direct evaluation
        let off = SplitBasis::new(&data, &[4.0], sigma_x).unit_matrix(&unit);
        assert!((off - transformed).amax() < 1e-12);
    }

    #[test]
    fn fit_via_design_equals_surface_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows: Vec<Vec<f64>> = (0..15)
            .map(|_| (0..4).map(|_| rng.random_range(0.0..10.0)).collect())
            .collect();
        let data = dataset(&rows);
        let leaf = |v: &[f64], th: &[f64]| TimeNode::Leaf(split_tree(v, th));
        let tt = TimeTree::new(
            TimeNode::split(0, leaf(&[2.0, 7.0], &[0.4, 1.1]), leaf(&[5.0], &[0.3])),
            3,
        )
        .unwrap();
        let mut unit = NestedTreeUnit::new(0, tt);
        unit.set_free_increments(&[0.4, 1.1, 0.3]).unwrap();
        let sigma_x = 0.9;
        let basis = SplitBasis::new(&data, &[2.0, 5.0, 7.0], sigma_x);
        let f = basis.unit_matrix(&unit) * DVector::from_vec(unit.free_increments());
        let ens = Ensemble {
            units: vec![unit],
            hyper: hyper(),
        };
        for t in 0..data.n() {
            let mut direct = 0.0;
            for l in 0..=3 {
                let w = evaluate_surface(&ens, &[data.exposures()[(t, l)]], &[l], sigma_x);
                direct += w[(0, 0)];
            }
            assert!((direct - f[t]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_increments_give_zero_surface_and_step_surface() {
        let zero = TimeTree::new(TimeNode::Leaf(split_tree(&[25.0], &[0.0])), 3).unwrap();
        let ens = Ensemble {
            units: vec![NestedTreeUnit::new(0, zero)],
            hyper: hyper(),
        };
        let s = evaluate_surface(&ens, &[10.0, 30.0], &[0, 3], 1.0);
        assert_eq!(s.amax(), 0.0);

        let step = TimeTree::new(TimeNode::Leaf(split_tree(&[25.0], &[1.0])), 3).unwrap();
        let ens = Ensemble {
            units: vec![NestedTreeUnit::new(0, step)],
            hyper: hyper(),
        };
        let s = evaluate_surface(&ens, &[24.0, 25.0, 26.0], &[0, 1, 2, 3], 1e-9);
        for j in 0..4 {
            assert_eq!(s[(0, j)], 0.0);
            assert!((s[(1, j)] - 0.5).abs() < 1e-12);
            assert!((s[(2, j)] - 1.0).abs() < 1e-12);
        }
    }
}
