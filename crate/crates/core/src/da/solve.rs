use ndarray::Array2;

use crate::cov::GainTerms;
use crate::error::{Error, Result};

/// Lower Cholesky factor, or the first non-positive pivot.
fn cholesky(a: &Array2<f64>) -> std::result::Result<Array2<f64>, f64> {
    let m = a.nrows();
    let mut l = Array2::<f64>::zeros((m, m));
    for j in 0..m {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) {
            return Err(d);
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in j + 1..m {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(l)
}

/// Factors `R + HBHᵀ` once and maps innovations to increments `BHᵀ z`.
#[derive(Debug, Clone)]
pub struct KalmanSolver<'a> {
    terms: &'a GainTerms,
    l: Array2<f64>,
}

impl<'a> KalmanSolver<'a> {
    pub fn new(terms: &'a GainTerms, r_diag: &[f64]) -> Result<Self> {
        let m = terms.hbht.nrows();
        if r_diag.len() != m || terms.bht.ncols() != m {
            return Err(Error::config(format!(
                "gain terms for {} observations, R has {}",
                m,
                r_diag.len()
            )));
        }
        let mut s = terms.hbht.clone();
        for (j, r) in r_diag.iter().enumerate() {
            s[[j, j]] += r;
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite { min_pivot: f64::NAN });
        }
        let l = match cholesky(&s) {
            Ok(l) => l,
            Err(_) => {
                // One jitter retry before giving up.
                let jitter = 1e-12 * s.diag().sum() / m as f64;
                for j in 0..m {
                    s[[j, j]] += jitter;
                }
                cholesky(&s).map_err(|min_pivot| Error::NotPositiveDefinite { min_pivot })?
            }
        };
        Ok(Self { terms, l })
    }

    /// Like [`KalmanSolver::new`], but an indefinite `HBHᵀ` has its negative
    /// eigenvalues clipped to zero instead of failing. Learned covariances
    /// carry no positive-definiteness guarantee.
    pub fn repaired(terms: &'a GainTerms, r_diag: &[f64]) -> Result<Self> {
        match Self::new(terms, r_diag) {
            Err(Error::NotPositiveDefinite { min_pivot }) if min_pivot.is_finite() => {}
            other => return other,
        }
        let m = r_diag.len();
        let h = &terms.hbht;
        let eig = nalgebra::DMatrix::from_fn(m, m, |i, j| 0.5 * (h[[i, j]] + h[[j, i]])).symmetric_eigen();
        let vals = eig.eigenvalues.map(|v| v.max(0.0));
        let clipped = &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        let s = Array2::from_shape_fn((m, m), |(i, j)| clipped[(i, j)] + if i == j { r_diag[i] } else { 0.0 });
        let l = cholesky(&s).map_err(|min_pivot| Error::NotPositiveDefinite { min_pivot })?;
        Ok(Self { terms, l })
    }

    /// `z = (R + HBHᵀ)⁻¹ d`.
    pub fn weights(&self, d: &[f64]) -> Vec<f64> {
        let m = d.len();
        let l = &self.l;
        let mut z = d.to_vec();
        for i in 0..m {
            let mut s = z[i];
            for k in 0..i {
                s -= l[[i, k]] * z[k];
            }
            z[i] = s / l[[i, i]];
        }
        for i in (0..m).rev() {
            let mut s = z[i];
            for k in i + 1..m {
                s -= l[[k, i]] * z[k];
            }
            z[i] = s / l[[i, i]];
        }
        z
    }

    /// `δx = BHᵀ (R + HBHᵀ)⁻¹ d`.
    pub fn increment(&self, d: &[f64]) -> Vec<f64> {
        let z = self.weights(d);
        let bht = &self.terms.bht;
        let mut dx = vec![0.0; bht.nrows()];
        for (j, zj) in z.iter().enumerate() {
            if *zj == 0.0 {
                continue;
            }
            for (x, b) in dx.iter_mut().zip(bht.column(j)) {
                *x += b * zj;
            }
        }
        dx
    }
}

/// Optimal-interpolation increment for a single innovation vector.
pub fn oi_increment(terms: &GainTerms, r_diag: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    if d.len() != r_diag.len() {
        return Err(Error::config("innovation and R differ in length"));
    }
    Ok(KalmanSolver::new(terms, r_diag)?.increment(d))
}
