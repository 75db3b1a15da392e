use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot tolerance for declaring a matrix positive definite.
const PIVOT_TOL: f64 = 1e-10;

/// Lower Cholesky factor, rejecting matrices whose smallest squared pivot is
/// below `1e-10` times the largest diagonal entry.
pub fn cholesky_checked(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "square matrix required");
    let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
    let tol = PIVOT_TOL * max_diag.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol) {
            return Err(Error::NotPositiveDefinite {
                dim: n,
                pivot: j,
                value: d,
            });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

pub fn chol_logdet(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Inverse of `L L'` given the lower factor.
pub fn chol_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let linv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("non-singular triangular factor");
    linv.tr_mul(&linv)
}

/// Symmetric positive-definite covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    m: DMatrix<f64>,
}

impl CovMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidParameter(format!(
                "covariance must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::InvalidParameter(format!(
                        "covariance not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        cholesky_checked(&m)?;
        Ok(Self { m })
    }

    pub fn from_rows(dim: usize, rows: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(dim, dim, rows))
    }

    /// First-order spatial power structure: `sqrt(v_i v_j) rho^(|t_i - t_j| / |t_1 - t_0|)`.
    pub fn spatial_power(variances: &[f64], visit_weeks: &[f64], rho: f64) -> Result<Self> {
        if variances.len() != visit_weeks.len() {
            return Err(Error::InvalidParameter(
                "variances and visit_weeks differ in length".into(),
            ));
        }
        if let Some(v) = variances.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidParameter(format!("variance {v} is not positive")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidParameter(format!("rho {rho} outside (0, 1)")));
        }
        if visit_weeks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "visit weeks must be strictly increasing".into(),
            ));
        }
        let n = variances.len();
        let unit = if n > 1 {
            (visit_weeks[1] - visit_weeks[0]).abs()
        } else {
            1.0
        };
        let m = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                variances[i]
            } else {
                let lag = (visit_weeks[i] - visit_weeks[j]).abs() / unit;
                (variances[i] * variances[j]).sqrt() * rho.powf(lag)
            }
        });
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn cholesky(&self) -> DMatrix<f64> {
        cholesky_checked(&self.m).expect("validated at construction")
    }

    /// Sub-matrix over the given indices (in the given order).
    pub fn select(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.m[(idx[a], idx[b])])
    }

    pub fn variances(&self) -> DVector<f64> {
        self.m.diagonal()
    }
}
