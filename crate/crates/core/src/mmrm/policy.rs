use nalgebra::DMatrix;

/// Two-block delta-method variance of a standardized (policy) mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyVariance {
    /// Multinomial uncertainty in the level proportions.
    pub proportion: f64,
    /// Uncertainty in the level means with proportions held fixed.
    pub mean: f64,
}

impl PolicyVariance {
    pub fn total(&self) -> f64 {
        self.proportion + self.mean
    }
}

/// `sum_l theta_l * mu_l`.
pub fn policy_mean(means: &[f64], theta: &[f64]) -> f64 {
    assert_eq!(means.len(), theta.len());
    means.iter().zip(theta).map(|(m, t)| m * t).sum()
}

/// Variance of the policy mean for `n` subjects, treating the proportions as
/// multinomial and independent of the level means.
pub fn policy_variance(means: &[f64], mean_cov: &DMatrix<f64>, theta: &[f64], n: f64) -> PolicyVariance {
    let k = means.len();
    assert_eq!(theta.len(), k);
    assert_eq!(mean_cov.shape(), (k, k));
    let mbar = policy_mean(means, theta);
    // g' (diag(theta) - theta theta') g / n with g = mu; equivalently the
    // theta-weighted variance of the means
    let proportion = theta.iter().zip(means).map(|(t, m)| t * (m - mbar).powi(2)).sum::<f64>() / n;
    let mut mean = 0.0;
    for a in 0..k {
        for b in 0..k {
            mean += theta[a] * theta[b] * mean_cov[(a, b)];
        }
    }
    PolicyVariance { proportion, mean }
}
