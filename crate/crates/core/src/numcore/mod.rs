//! Random streams and the shared statistical kernels.

mod linalg;
mod mvn;
mod regression;
mod rng;

pub use linalg::{chol_inverse, chol_logdet, cholesky_checked, CovMatrix};
pub use mvn::{mvn_condition, mvn_sample, Conditional, MvnSampler};
pub use regression::{bayes_lm_draw, ols, RegressionFit};
pub use rng::RngStream;

/// Inverse logit.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Two-sided Student-t quantile `t_{df, p}`.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    StudentsT::new(0.0, 1.0, df)
        .expect("df > 0")
        .inverse_cdf(p)
}

pub fn t_cdf(x: f64, df: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    StudentsT::new(0.0, 1.0, df).expect("df > 0").cdf(x)
}
