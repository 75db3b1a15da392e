mod common;

use common::{complete_trial, trial};
use nalgebra::DMatrix;
use tpsim::config::Arm;
use tpsim::mi::ancova_full;
use tpsim::mmrm::{fit, DesignSpec};
use tpsim::numcore::RngStream;
use tpsim::rbi::{
    build_marginal, estimate_rbi_all, fit_bayesian_mmrm, impute_rbi_all, Assumption, GibbsSettings, PosteriorDraw,
    RbiOptions,
};

fn toy_draw() -> PosteriorDraw {
    PosteriorDraw {
        cell_means: [[-0.1, -0.2, -0.3, -0.35, -0.4], [-0.4, -0.7, -0.8, -0.9, -1.0]],
        baseline_slopes: [0.5, 0.4, 0.3, 0.2, 0.1],
        sigma: DMatrix::from_fn(5, 5, |i, j| 0.8f64.powi((i as i32 - j as i32).abs())),
    }
}

#[test]
fn control_patients_share_one_distribution() {
    let d = toy_draw();
    for tau in [None, Some(1), Some(3), Some(5)] {
        let a = build_marginal(Assumption::J2r, Arm::Control, tau, &d, 0.3);
        let b = build_marginal(Assumption::Cir, Arm::Control, tau, &d, 0.3);
        let c = build_marginal(Assumption::Cr, Arm::Control, tau, &d, 0.3);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}

#[test]
fn patients_without_events_follow_their_arm() {
    let d = toy_draw();
    for a in Assumption::ALL {
        let m = build_marginal(a, Arm::Treatment, None, &d, 0.0);
        assert_eq!(m.mean, d.cell_means[1]);
        assert_eq!(m.cov, d.sigma);
    }
}

#[test]
fn assumption_profiles_after_event() {
    let mut d = toy_draw();
    // flat reference profile
    d.cell_means[0] = [-0.2; 5];
    let b = 0.0;
    let cir = build_marginal(Assumption::Cir, Arm::Treatment, Some(3), &d, b);
    assert_eq!(&cir.mean[..2], &d.cell_means[1][..2]);
    for j in 2..5 {
        assert!((cir.mean[j] - d.cell_means[1][1]).abs() < 1e-15);
    }
    let j2r = build_marginal(Assumption::J2r, Arm::Treatment, Some(3), &d, b);
    assert_eq!(&j2r.mean[2..], &[-0.2; 3]);
    let cr = build_marginal(Assumption::Cr, Arm::Treatment, Some(3), &d, b);
    assert_eq!(cr.mean, [-0.2; 5]);
    // an event before the first visit makes CIR coincide with J2R
    assert_eq!(
        build_marginal(Assumption::Cir, Arm::Treatment, Some(1), &d, b),
        build_marginal(Assumption::J2r, Arm::Treatment, Some(1), &d, b)
    );
    // baseline adjustment uses the visit-specific slopes
    let shifted = build_marginal(Assumption::J2r, Arm::Treatment, Some(3), &d, 1.0);
    for j in 0..5 {
        assert!((shifted.mean[j] - j2r.mean[j] - d.baseline_slopes[j]).abs() < 1e-15);
    }
}

#[test]
fn no_missing_data_reproduces_single_ancova() {
    let d = complete_trial(80, 2);
    let full = ancova_full(&d).unwrap();
    let opts = RbiOptions { mi: tpsim::mi::MiOptions { imputations: 5, ..Default::default() }, ..Default::default() };
    for r in estimate_rbi_all(&d, &opts, &RngStream::new(4)).unwrap() {
        assert_eq!(r.estimate, full.estimate);
        assert_eq!(r.se, full.se);
    }
}

#[test]
fn control_imputations_coincide_and_observed_are_kept() {
    let d = trial(0.4, 100, 3);
    let mut rng = RngStream::new(8).rng();
    let model = fit_bayesian_mmrm(&d, 4, GibbsSettings::default(), &mut rng).unwrap();
    let out = impute_rbi_all(&d, &model, &RngStream::new(9)).unwrap();
    for k in 0..4 {
        for (i, p) in d.patients.iter().enumerate() {
            for j in 1..=5 {
                if let Some(v) = p.observed(j) {
                    for a in 0..3 {
                        assert_eq!(out[a][k].outcomes[i][j], v);
                    }
                }
                if p.arm == Arm::Control {
                    assert_eq!(out[0][k].outcomes[i][j], out[1][k].outcomes[i][j]);
                    assert_eq!(out[0][k].outcomes[i][j], out[2][k].outcomes[i][j]);
                }
            }
        }
        assert!(out.iter().all(|v| v[k].is_complete()));
    }
}

#[test]
fn sampler_is_reproducible() {
    let d = trial(0.2, 60, 1);
    let a = fit_bayesian_mmrm(&d, 6, GibbsSettings::default(), &mut RngStream::new(3).rng()).unwrap();
    let b = fit_bayesian_mmrm(&d, 6, GibbsSettings::default(), &mut RngStream::new(3).rng()).unwrap();
    assert_eq!(a.draws, b.draws);
}

#[test]
fn posterior_centres_on_reml_for_large_complete_data() {
    let mut d = complete_trial(1500, 7);
    for p in d.patients.iter_mut() {
        p.ie_visit = None;
        p.y_tilde = p.y_on;
    }
    let model = fit_bayesian_mmrm(&d, 200, GibbsSettings::default(), &mut RngStream::new(2).rng()).unwrap();
    assert!(model.mixing_ok());
    let f = fit(&d, &DesignSpec::Simple).unwrap();
    let nd = model.draws.len() as f64;
    for arm in Arm::BOTH {
        for j in 1..=5 {
            let col = f.design().cell_column(tpsim::mmrm::Cell { visit: j, arm, level: 1 }).unwrap();
            // change-score cell mean + baseline mean = outcome cell mean
            let reml = f.coefficients[col] + model.baseline_mean;
            let post = model.draws.iter().map(|dr| dr.cell_means[arm.index()][j - 1]).sum::<f64>() / nd;
            let se = f.coef_cov[(col, col)].sqrt();
            assert!((post - reml).abs() < 0.3 * se, "arm {arm:?} visit {j}: {post} vs {reml}");
        }
    }
    let mut sbar = DMatrix::zeros(5, 5);
    for dr in &model.draws {
        sbar += &dr.sigma / nd;
    }
    assert!((&sbar - f.sigma.matrix()).amax() < 0.03, "{sbar} vs {}", f.sigma.matrix());
}
