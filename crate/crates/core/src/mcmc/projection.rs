//! Integrating the covariate coefficients out of the likelihood.
//!
//! With `zeta ~ N(0, c sigma^2 I)` the response covariance becomes
//! `sigma^2 V_Z`, `V_Z = W^{-1} + c Z Z'`. Its inverse is applied through
//! the Woodbury form `W - W Z V_zeta Z' W` with
//! `V_zeta = (Z' W Z + c^{-1} I)^{-1}`; `W` is the identity for Gaussian
//! outcomes and the Pólya-gamma weights for binomial ones.

use nalgebra::{DMatrix, DVector};

use crate::data::rank_deficient_columns;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ProjectionCache {
    z: DMatrix<f64>,
    weights: Option<DVector<f64>>,
    v_zeta: DMatrix<f64>,
    v_zeta_chol_l: DMatrix<f64>,
    log_det_vz: f64,
    ridge: f64,
}

impl ProjectionCache {
    pub fn build(z: &DMatrix<f64>, ridge: f64) -> Result<Self> {
        Self::build_weighted(z, None, ridge)
    }

    pub fn build_weighted(z: &DMatrix<f64>, weights: Option<&DVector<f64>>, ridge: f64) -> Result<Self> {
        if !(ridge > 0.0) {
            return Err(Error::param(format!("ridge scale must be positive, got {ridge}")));
        }
        if let Some(w) = weights {
            if w.len() != z.nrows() || w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::param("weights must be positive and match the rows of Z"));
            }
        }
        let deficient = rank_deficient_columns(z);
        if !deficient.is_empty() {
            return Err(Error::RankDeficient { columns: deficient });
        }
        let k = z.ncols();
        let wz = match weights {
            Some(w) => {
                let mut m = z.clone();
                for (i, mut row) in m.row_iter_mut().enumerate() {
                    row *= w[i];
                }
                m
            }
            None => z.clone(),
        };
        let mut gram = z.transpose() * &wz;
        for i in 0..k {
            gram[(i, i)] += 1.0 / ridge;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Decomposition("Z'WZ + I/c is not positive definite".into()))?;
        let log_det_gram: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let v_zeta = chol.inverse();
        let v_chol = v_zeta
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Decomposition("V_zeta is not positive definite".into()))?;
        let log_w: f64 = weights.map_or(0.0, |w| w.iter().map(|v| v.ln()).sum());
        // |W^{-1} + c Z Z'| = |W|^{-1} c^k |Z'WZ + I/c|
        let log_det_vz = -log_w + k as f64 * ridge.ln() + log_det_gram;
        Ok(Self {
            z: z.clone(),
            weights: weights.cloned(),
            v_zeta,
            v_zeta_chol_l: v_chol.l(),
            log_det_vz,
            ridge,
        })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn weights(&self) -> Option<&DVector<f64>> {
        self.weights.as_ref()
    }

    pub fn v_zeta(&self) -> &DMatrix<f64> {
        &self.v_zeta
    }

    /// Lower Cholesky factor of `V_zeta`.
    pub fn v_zeta_chol(&self) -> &DMatrix<f64> {
        &self.v_zeta_chol_l
    }

    /// `ln |V_Z|`.
    pub fn log_det_vz(&self) -> f64 {
        self.log_det_vz
    }

    pub fn weight_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.weights {
            Some(w) => v.component_mul(w),
            None => v.clone(),
        }
    }

    fn weight_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.weights {
            Some(w) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= w[i];
                }
                out
            }
            None => m.clone(),
        }
    }

    /// `Z' W v`.
    pub fn zt_w(&self, v: &DVector<f64>) -> DVector<f64> {
        self.z.transpose() * self.weight_vector(v)
    }

    /// `V_Z^{-1} v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let wv = self.weight_vector(v);
        if self.z.ncols() == 0 {
            return wv;
        }
        let inner = &self.v_zeta * (self.z.transpose() * &wv);
        let back = self.weight_vector(&(&self.z * inner));
        wv - back
    }

    /// `V_Z^{-1} M`.
    pub fn apply_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let wm = self.weight_matrix(m);
        if self.z.ncols() == 0 {
            return wm;
        }
        let inner = &self.v_zeta * (self.z.transpose() * &wm);
        let back = self.weight_matrix(&(&self.z * inner));
        wm - back
    }

    /// `X' V_Z^{-1} X` without forming the `n x n` operator.
    pub fn quadratic_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let wx = self.weight_matrix(x);
        let mut q = x.transpose() * &wx;
        if self.z.ncols() > 0 {
            let ztwx = self.z.transpose() * &wx;
            q -= ztwx.transpose() * (&self.v_zeta * &ztwx);
        }
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_inverse_oracle(z: &DMatrix<f64>, w: Option<&DVector<f64>>, c: f64) -> (DMatrix<f64>, f64) {
        let n = z.nrows();
        let mut cov = c * z * z.transpose();
        for i in 0..n {
            cov[(i, i)] += w.map_or(1.0, |w| 1.0 / w[i]);
        }
        let det = cov.clone().determinant().ln();
        (cov.try_inverse().unwrap(), det)
    }

    #[test]
    fn intercept_with_huge_ridge_centres() {
        let z = DMatrix::from_element(5, 1, 1.0);
        let p = ProjectionCache::build(&z, 1e12).unwrap();
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 10.0]);
        let out = p.apply(&v);
        for i in 0..5 {
            assert!((out[i] - (v[i] - 4.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn tiny_ridge_is_identity() {
        let z = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let p = ProjectionCache::build(&z, 1e-12).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5, 2.0]);
        assert!((p.apply(&v) - &v).amax() < 1e-9);
    }

    #[test]
    fn woodbury_matches_dense_inverse() {
        let z = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { (i as f64).sin() });
        let v = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.7, 1.5]);
        for weights in [None, Some(DVector::from_vec(vec![0.5, 1.0, 2.0, 0.25, 3.0]))] {
            let p = ProjectionCache::build_weighted(&z, weights.as_ref(), 3.0).unwrap();
            let (dense, logdet) = dense_inverse_oracle(&z, weights.as_ref(), 3.0);
            assert!((p.apply(&v) - &dense * &v).amax() < 1e-10);
            let x = DMatrix::from_fn(5, 3, |i, j| ((i + 2 * j) as f64).cos());
            assert!((p.quadratic_matrix(&x) - x.transpose() * &dense * &x).amax() < 1e-10);
            assert!((p.apply_matrix(&x) - &dense * &x).amax() < 1e-10);
            assert!((p.log_det_vz() - logdet).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let z = DMatrix::from_fn(6, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 + 3.0 * i as f64,
        });
        match ProjectionCache::build(&z, 10.0) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec![2]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
