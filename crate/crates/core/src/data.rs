//! Lagged design construction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Outcomes, the `n x (L+1)` lagged exposure matrix and the covariate matrix.
///
/// Column `l` of `exposures` holds `x_{t-l}` for row `t`.
#[derive(Debug, Clone)]
pub struct LaggedDataset {
    outcomes: DVector<f64>,
    exposures: DMatrix<f64>,
    covariates: DMatrix<f64>,
    lag_count: usize,
    trial_counts: Option<DVector<f64>>,
    pub(crate) source_rows: Vec<usize>,
}

impl LaggedDataset {
    pub fn new(
        outcomes: DVector<f64>,
        exposures: DMatrix<f64>,
        covariates: DMatrix<f64>,
        lag_count: usize,
        trial_counts: Option<DVector<f64>>,
    ) -> Result<Self> {
        let n = outcomes.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if exposures.nrows() != n || covariates.nrows() != n {
            return Err(Error::Alignment(format!(
                "outcomes have {n} rows, exposures {}, covariates {}",
                exposures.nrows(),
                covariates.nrows()
            )));
        }
        if exposures.ncols() != lag_count + 1 {
            return Err(Error::Alignment(format!(
                "exposure matrix has {} columns, expected L+1 = {}",
                exposures.ncols(),
                lag_count + 1
            )));
        }
        if let Some(trials) = &trial_counts {
            if trials.len() != n {
                return Err(Error::Alignment(format!(
                    "trial counts have {} rows, expected {n}",
                    trials.len()
                )));
            }
            for (i, (&nt, &y)) in trials.iter().zip(outcomes.iter()).enumerate() {
                if !(nt >= 1.0) || nt.fract() != 0.0 || y < 0.0 || y > nt || y.fract() != 0.0 {
                    return Err(Error::param(format!(
                        "row {i}: binomial outcome {y} with trial count {nt} is invalid"
                    )));
                }
            }
        }
        if outcomes
            .iter()
            .chain(exposures.iter())
            .chain(covariates.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::param("dataset contains non-finite values"));
        }
        if covariates.ncols() > n {
            return Err(Error::RankDeficient {
                columns: (n..covariates.ncols()).collect(),
            });
        }
        let deficient = rank_deficient_columns(&covariates);
        if !deficient.is_empty() {
            return Err(Error::RankDeficient { columns: deficient });
        }
        Ok(Self {
            outcomes,
            exposures,
            covariates,
            lag_count,
            source_rows: (0..n).collect(),
            trial_counts,
        })
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn lag_count(&self) -> usize {
        self.lag_count
    }

    pub fn outcomes(&self) -> &DVector<f64> {
        &self.outcomes
    }

    pub fn exposures(&self) -> &DMatrix<f64> {
        &self.exposures
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn trial_counts(&self) -> Option<&DVector<f64>> {
        self.trial_counts.as_ref()
    }

    /// Position of each retained row in the original, unlagged series.
    pub fn source_rows(&self) -> &[usize] {
        &self.source_rows
    }

    /// Standard deviation of all exposure values in the lag matrix.
    pub fn pooled_exposure_sd(&self) -> f64 {
        sample_sd(self.exposures.as_slice())
    }

    /// Flip the sign of every exposure (cold-season analyses).
    pub fn negate_exposures(&mut self) {
        self.exposures.neg_mut();
    }
}

/// Builds the lag matrix from aligned, time-indexed series.
///
/// `NaN` marks a missing value. Row `t` of the result holds
/// `(x_t, x_{t-1}, ..., x_{t-L})`; rows whose window, outcome or trial count
/// is missing are dropped.
pub fn build_lagged_design(
    exposure_series: &[f64],
    outcomes: &[f64],
    covariates: &[Vec<f64>],
    trial_counts: Option<&[f64]>,
    lag_count: usize,
) -> Result<LaggedDataset> {
    let len = exposure_series.len();
    if outcomes.len() != len || covariates.len() != len {
        return Err(Error::Alignment(format!(
            "exposure series has {len} entries, outcomes {}, covariate rows {}",
            outcomes.len(),
            covariates.len()
        )));
    }
    if let Some(tc) = trial_counts {
        if tc.len() != len {
            return Err(Error::Alignment(format!(
                "trial counts have {} entries, expected {len}",
                tc.len()
            )));
        }
    }
    let p = covariates.first().map_or(0, Vec::len);
    if covariates.iter().any(|row| row.len() != p) {
        return Err(Error::Alignment("covariate rows have differing lengths".into()));
    }

    let keep: Vec<usize> = (lag_count..len)
        .filter(|&t| {
            (t - lag_count..=t).all(|s| exposure_series[s].is_finite())
                && outcomes[t].is_finite()
                && trial_counts.is_none_or(|tc| tc[t].is_finite())
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let n = keep.len();
    let exposures = DMatrix::from_fn(n, lag_count + 1, |i, l| exposure_series[keep[i] - l]);
    let y = DVector::from_iterator(n, keep.iter().map(|&t| outcomes[t]));
    let z = DMatrix::from_fn(n, p, |i, j| covariates[keep[i]][j]);
    let trials = trial_counts.map(|tc| DVector::from_iterator(n, keep.iter().map(|&t| tc[t])));

    let mut data = LaggedDataset::new(y, exposures, z, lag_count, trials)?;
    data.source_rows = keep;
    Ok(data)
}

/// Columns that are (numerically) linear combinations of earlier columns,
/// found by modified Gram-Schmidt.
pub(crate) fn rank_deficient_columns(z: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..z.ncols() {
        let col = z.column(j).into_owned();
        let norm0 = col.norm();
        let mut v = col;
        for q in &basis {
            let proj = q.dot(&v);
            v.axpy(-proj, q, 1.0);
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= 1e-10 * norm0.max(1.0) {
            bad.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    bad
}

pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}
