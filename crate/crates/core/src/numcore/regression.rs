use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::linalg::{chol_inverse, cholesky_checked};
use crate::error::{Error, Result};

/// Ordinary least-squares fit with what a posterior draw needs.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub coefficients: DVector<f64>,
    pub residual_variance: f64,
    /// `(X'X)^{-1}`
    pub scaled_inverse_gram: DMatrix<f64>,
    pub residual_df: usize,
    inv_gram_chol: DMatrix<f64>,
}

impl RegressionFit {
    pub fn n_coefficients(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        row.iter().zip(self.coefficients.iter()).map(|(a, b)| a * b).sum()
    }

    /// Standard error of coefficient `k`.
    pub fn std_error(&self, k: usize) -> f64 {
        (self.residual_variance * self.scaled_inverse_gram[(k, k)]).sqrt()
    }
}

/// Least squares of `y` on the columns of `x`.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<RegressionFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::InvalidParameter(format!(
            "design has {n} rows but response has {}",
            y.len()
        )));
    }
    if n <= p {
        return Err(Error::InsufficientData(format!(
            "{n} rows for {p} coefficients leaves no residual degrees of freedom"
        )));
    }
    let gram = x.tr_mul(x);
    let l = cholesky_checked(&gram).map_err(|_| {
        let empty: Vec<usize> = (0..p).filter(|&k| x.column(k).iter().all(|v| *v == 0.0)).collect();
        if empty.is_empty() {
            Error::RankDeficient("collinear regression design".into())
        } else {
            Error::RankDeficient(format!("design columns {empty:?} are identically zero"))
        }
    })?;
    let inv = chol_inverse(&l);
    let coefficients = &inv * x.tr_mul(y);
    let resid = y - x * &coefficients;
    let df = n - p;
    let residual_variance = resid.norm_squared() / df as f64;
    let inv_gram_chol = cholesky_checked(&inv).unwrap_or_else(|_| {
        // (X'X)^{-1} is PD whenever X'X is; this only guards extreme scaling.
        DMatrix::from_diagonal(&inv.diagonal().map(|d| d.max(0.0).sqrt()))
    });
    Ok(RegressionFit {
        coefficients,
        residual_variance,
        scaled_inverse_gram: inv,
        residual_df: df,
        inv_gram_chol,
    })
}

/// Posterior draw under the noninformative prior `p(beta, sigma^2) ∝ 1/sigma^2`:
/// `sigma2* = df s^2 / chi2_df`, `beta* ~ N(beta_hat, sigma2* (X'X)^{-1})`.
pub fn bayes_lm_draw<R: Rng + ?Sized>(fit: &RegressionFit, rng: &mut R) -> Result<(DVector<f64>, f64)> {
    if fit.residual_df < 1 {
        return Err(Error::InsufficientData(
            "regression has no residual degrees of freedom".into(),
        ));
    }
    let df = fit.residual_df as f64;
    let chi = ChiSquared::new(df).expect("df >= 1").sample(rng);
    let sigma2 = df * fit.residual_variance / chi;
    let p = fit.coefficients.len();
    let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let coef = &fit.coefficients + (&fit.inv_gram_chol * z) * sigma2.sqrt();
    Ok((coef, sigma2))
}
