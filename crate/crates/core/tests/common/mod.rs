#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use tpsim::config::{Arm, IeMechanism, ScenarioConfig, ShiftModel};
use tpsim::dgm::{generate_trial, TrialDataset};
use tpsim::numcore::ols;

pub fn scenario(theta: f64, n: usize) -> ScenarioConfig {
    let mut c = ScenarioConfig::pioneer1(IeMechanism::Dar, ShiftModel::Instant, theta);
    c.n_per_arm = n;
    c
}

pub fn trial(theta: f64, n: usize, rep: u64) -> TrialDataset {
    generate_trial(&scenario(theta, n), rep).unwrap()
}

/// Same trial with every outcome observed.
pub fn complete_trial(n: usize, rep: u64) -> TrialDataset {
    trial(0.1, n, rep).without_missingness()
}

/// Least squares of the visit-`j` change on (control, treatment, centred
/// baseline) over the observed subjects: returns coefficients and residuals.
pub fn visit_ols(data: &TrialDataset, j: usize) -> (DVector<f64>, DVector<f64>, usize) {
    let bm = data.mean_baseline();
    let rows: Vec<_> = data.patients.iter().filter(|p| !p.is_missing(j)).collect();
    let x = DMatrix::from_fn(rows.len(), 3, |i, k| match k {
        0 => (rows[i].arm == Arm::Control) as u8 as f64,
        1 => (rows[i].arm == Arm::Treatment) as u8 as f64,
        _ => rows[i].baseline() - bm,
    });
    let y = DVector::from_fn(rows.len(), |i, _| rows[i].observed_change(j).unwrap());
    let f = ols(&x, &y).unwrap();
    let r = &y - &x * &f.coefficients;
    (f.coefficients.clone(), r, rows.len())
}

/// ANCOVA of the final-visit change on arm and baseline: (estimate, se, df).
pub fn ancova_oracle(data: &TrialDataset) -> (f64, f64, usize) {
    let n = data.n();
    let x = DMatrix::from_fn(n, 3, |i, k| match k {
        0 => 1.0,
        1 => (data.patients[i].arm == Arm::Treatment) as u8 as f64,
        _ => data.patients[i].baseline(),
    });
    let y = DVector::from_fn(n, |i, _| data.patients[i].y_tilde[5] - data.patients[i].baseline());
    let f = ols(&x, &y).unwrap();
    (f.coefficients[1], f.std_error(1), n - 3)
}
