use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::linalg::{cholesky_checked, CovMatrix};
use super::rng::RngStream;
use crate::error::{Error, Result};

/// Multivariate normal with a cached lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: DVector<f64>, cov: &CovMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::InvalidParameter(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        Ok(Self {
            mean,
            chol: cov.cholesky(),
        })
    }

    /// Sampler from a raw matrix (checked for positive definiteness).
    pub fn from_matrix(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let chol = cholesky_checked(cov)?;
        Ok(Self { mean, chol })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.mean.len();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol * z
    }

    /// Draw into a slice, avoiding allocation in hot loops.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let n = self.mean.len();
        let mut z = [0.0f64; 16];
        assert!(n <= z.len(), "sample_into supports up to 16 dimensions");
        for zi in z.iter_mut().take(n) {
            *zi = rng.sample(StandardNormal);
        }
        for i in 0..n {
            let mut s = self.mean[i];
            for k in 0..=i {
                s += self.chol[(i, k)] * z[k];
            }
            out[i] = s;
        }
    }
}

/// One draw from `MVN(mean, cov)` using the stream's generator.
pub fn mvn_sample(mean: &DVector<f64>, cov: &CovMatrix, stream: &RngStream) -> Result<DVector<f64>> {
    let s = MvnSampler::new(mean.clone(), cov)?;
    Ok(s.sample(&mut stream.rng()))
}

/// Conditional distribution of the unobserved coordinates.
#[derive(Debug, Clone)]
pub struct Conditional {
    /// Unobserved coordinate indices, ascending.
    pub missing: Vec<usize>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Gaussian conditioning of `MVN(mean, cov)` on `observed` `(index, value)` pairs.
///
/// Solves against the observed block instead of inverting it.
pub fn mvn_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    observed: &[(usize, f64)],
) -> Result<Conditional> {
    let n = mean.len();
    let mut is_obs = vec![false; n];
    for &(i, _) in observed {
        if i >= n {
            return Err(Error::InvalidParameter(format!("observed index {i} out of range {n}")));
        }
        if is_obs[i] {
            return Err(Error::InvalidParameter(format!("observed index {i} repeated")));
        }
        is_obs[i] = true;
    }
    let missing: Vec<usize> = (0..n).filter(|&i| !is_obs[i]).collect();
    if observed.is_empty() {
        return Ok(Conditional {
            missing,
            mean: mean.clone(),
            cov: cov.clone(),
        });
    }
    if missing.is_empty() {
        return Ok(Conditional {
            missing,
            mean: DVector::zeros(0),
            cov: DMatrix::zeros(0, 0),
        });
    }
    let no = observed.len();
    let nm = missing.len();
    let s_oo = DMatrix::from_fn(no, no, |a, b| cov[(observed[a].0, observed[b].0)]);
    let s_mo = DMatrix::from_fn(nm, no, |a, b| cov[(missing[a], observed[b].0)]);
    let s_mm = DMatrix::from_fn(nm, nm, |a, b| cov[(missing[a], missing[b])]);
    let resid = DVector::from_fn(no, |a, _| observed[a].1 - mean[observed[a].0]);

    let l = cholesky_checked(&s_oo)?;
    // K' = S_oo^{-1} S_om
    let kt = {
        let y = l
            .clone()
            .solve_lower_triangular(&s_mo.transpose())
            .expect("triangular solve");
        l.transpose()
            .solve_upper_triangular(&y)
            .expect("triangular solve")
    };
    let cmean = DVector::from_fn(nm, |a, _| mean[missing[a]]) + kt.tr_mul(&resid);
    let mut ccov = s_mm - &s_mo * &kt;
    // symmetrise rounding noise
    for a in 0..nm {
        for b in 0..a {
            let v = 0.5 * (ccov[(a, b)] + ccov[(b, a)]);
            ccov[(a, b)] = v;
            ccov[(b, a)] = v;
        }
    }
    Ok(Conditional {
        missing,
        mean: cmean,
        cov: ccov,
    })
}
