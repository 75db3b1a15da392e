//! Acceptance suite. Each test checks one criterion and writes a single
//! PASS/FAIL line to stderr (outside the test-output capture) with the
//! observed values and the pinned tolerance.
//!
//! The desk-scale grid (DAR x {Instant, Gradual} x 6 scenarios, M = 500,
//! n = 200 per arm, m = 50, all methods) is run once and shared.

mod common;
#[path = "common/recoding_table.rs"]
mod recoding_table;

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use tpsim::collapse::{plan_collapse, CodingTarget, PatternIssueReport};
use tpsim::config::{Arm, THETA_GRID};
use tpsim::dgm::{final_visit_status, generate_trial, true_estimand};
use tpsim::harness::{run_scenario, OperatingCharacteristics, RunPlan, ScenarioResult, ScenarioSpec};
use tpsim::mi::{estimate_mi, rubin_pool, MiOptions};
use tpsim::mmrm::{
    estimate_mmrm, fit, policy_variance, reml_objective, sigma_to_theta, Cell, DesignSpec, MmrmDesign,
    MmrmOptions,
};
use tpsim::numcore::RngStream;
use tpsim::rbi::{estimate_rbi_all, RbiOptions};
use tpsim::{IeMechanism, Method, ScenarioConfig, ShiftModel};

use common::{ancova_oracle, complete_trial, trial, visit_ols};

const M: usize = 500;
const M_NULL: usize = 2000;

/// True effects from the 200 000-per-arm oracle (root seed 20240229).
const DELTA_TRUE_INSTANT: f64 = -0.6088244328766982;
const DELTA_TRUE_GRADUAL: f64 = -0.6490905995433518;

/// Two-sided 95% normal quantile used for "+ MC error" allowances.
const Z: f64 = 1.96;

fn report(criterion: u32, title: &str, failures: &[String], detail: &str) {
    let status = if failures.is_empty() { "PASS" } else { "FAIL" };
    let mut e = std::io::stderr().lock();
    let _ = writeln!(e, "[acceptance] criterion {criterion:>2} {status}: {title} | {detail}");
    for f in failures {
        let _ = writeln!(e, "[acceptance]     violated: {f}");
    }
}

fn finish(criterion: u32, title: &str, failures: Vec<String>, detail: String) {
    report(criterion, title, &failures, &detail);
    assert!(failures.is_empty(), "criterion {criterion} ({title}) failed: {failures:?}");
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

struct Grid {
    instant: Vec<ScenarioResult>,
    gradual: Vec<ScenarioResult>,
}

impl Grid {
    fn shift(&self, s: ShiftModel) -> &[ScenarioResult] {
        match s {
            ShiftModel::Instant => &self.instant,
            ShiftModel::Gradual => &self.gradual,
        }
    }

    fn oc(&self, s: ShiftModel, scenario: usize, m: Method) -> &OperatingCharacteristics {
        self.shift(s)[scenario - 1].summary(m).unwrap()
    }

    fn series(&self, s: ShiftModel, m: Method, f: impl Fn(&OperatingCharacteristics) -> f64) -> Vec<f64> {
        (1..=6).map(|k| f(self.oc(s, k, m))).collect()
    }
}

fn desk_plan() -> RunPlan {
    let mut plan = RunPlan::new(ScenarioConfig::pioneer1_defaults(), Vec::new());
    plan.n_reps = M;
    plan.record_timing = false;
    plan
}

fn grid() -> &'static Grid {
    static GRID: OnceLock<Grid> = OnceLock::new();
    GRID.get_or_init(|| {
        let plan = desk_plan();
        let run = |shift, delta| {
            THETA_GRID
                .iter()
                .map(|&t| run_scenario(&plan, &ScenarioSpec::new(IeMechanism::Dar, shift, t), delta).unwrap())
                .collect::<Vec<_>>()
        };
        Grid {
            instant: run(ShiftModel::Instant, DELTA_TRUE_INSTANT),
            gradual: run(ShiftModel::Gradual, DELTA_TRUE_GRADUAL),
        }
    })
}

fn fmt_series(v: &[f64], scale: f64) -> String {
    v.iter().map(|x| format!("{:.3}", x * scale)).collect::<Vec<_>>().join("/")
}

#[test]
fn frozen_truths_match_oracle() {
    for (shift, frozen) in [(ShiftModel::Instant, DELTA_TRUE_INSTANT), (ShiftModel::Gradual, DELTA_TRUE_GRADUAL)] {
        let cfg = ScenarioConfig::pioneer1(IeMechanism::Dar, shift, 0.1);
        let t = true_estimand(&cfg, 200_000).unwrap();
        assert!((t.delta - frozen).abs() < 1e-12, "{shift:?}: oracle {} frozen {frozen}", t.delta);
    }
}

/// Visit-5 status counts (on treatment, discontinued observed, discontinued
/// missing) summed over M replicates.
fn status_counts(theta: f64, arm: Arm) -> [f64; 3] {
    let cfg = ScenarioConfig::pioneer1(IeMechanism::Dar, ShiftModel::Instant, theta);
    let mut acc = [0.0; 3];
    for r in 0..M as u64 {
        let d = generate_trial(&cfg, r).unwrap();
        let s = final_visit_status(&d, arm);
        for k in 0..3 {
            acc[k] += s[k];
        }
    }
    acc.map(|x| 100.0 * x / M as f64)
}

#[test]
fn criterion_01_table1_status_percentages() {
    const TOL: f64 = 1.5;
    let cases = [
        ("S1 control", 0.1, Arm::Control, [74.5, 19.3, 6.2]),
        ("S1 treatment", 0.1, Arm::Treatment, [84.8, 10.8, 4.4]),
        ("S6 control", 0.6, Arm::Control, [74.5, 3.5, 22.0]),
    ];
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for (name, theta, arm, want) in cases {
        let got = status_counts(theta, arm);
        detail.push(format!("{name} {:.1}/{:.1}/{:.1}", got[0], got[1], got[2]));
        for k in 0..3 {
            if !within(got[k], want[k], TOL) {
                failures.push(format!("{name} column {k}: {:.2} vs {} +- {TOL}", got[k], want[k]));
            }
        }
    }
    finish(1, "visit-5 status percentages", failures, detail.join("; "));
}

#[test]
fn criterion_02_table2_discontinued_observed() {
    const TOL: f64 = 2.5;
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for (name, theta, want) in [("S1", 0.1, 75.7), ("S6", 0.6, 13.9)] {
        let s = status_counts(theta, Arm::Control);
        let got = 100.0 * s[1] / (s[1] + s[2]);
        detail.push(format!("{name} control {got:.1}% (target {want})"));
        if !within(got, want, TOL) {
            failures.push(format!("{name}: {got:.2} vs {want} +- {TOL}"));
        }
    }
    finish(2, "observed share among discontinued at visit 5", failures, detail.join("; "));
}

#[test]
fn criterion_03_full_data_power() {
    const TARGET: f64 = 0.90;
    const TOL: f64 = 0.03;
    let p = grid().oc(ShiftModel::Instant, 1, Method::Full).power;
    let failures = if within(p, TARGET, TOL) { vec![] } else { vec![format!("power {p:.3}")] };
    finish(3, "FULL ANCOVA power, DAR Instant", failures, format!("power {:.1}% (target 90 +- 3)", 100.0 * p));
}

#[test]
fn criterion_04_type1_error_under_null() {
    const TOL: f64 = 0.013;
    const RBI_MAX: f64 = 0.03;
    let mut plan = desk_plan();
    plan.base.null_mode = true;
    plan.n_reps = M_NULL;
    let mut failures = Vec::new();
    let mut detail = Vec::new();

    plan.methods = vec![Method::Full, Method::Mmrm1];
    let s1 = run_scenario(&plan, &ScenarioSpec::new(IeMechanism::Dar, ShiftModel::Instant, 0.1), 0.0).unwrap();
    for (m, want) in [(Method::Full, 0.0493), (Method::Mmrm1, 0.0474)] {
        let t = s1.summary(m).unwrap().type1.unwrap();
        detail.push(format!("{m} {:.2}%", 100.0 * t));
        if !within(t, want, TOL) {
            failures.push(format!("{m} type I {t:.4} vs {want} +- {TOL}"));
        }
    }

    plan.methods = vec![Method::J2r, Method::Cir, Method::Cr];
    let s6 = run_scenario(&plan, &ScenarioSpec::new(IeMechanism::Dar, ShiftModel::Instant, 0.6), 0.0).unwrap();
    for m in [Method::J2r, Method::Cir, Method::Cr] {
        let t = s6.summary(m).unwrap().type1.unwrap();
        detail.push(format!("{m}@S6 {:.2}%", 100.0 * t));
        if t >= RBI_MAX {
            failures.push(format!("{m} type I {t:.4} not below {RBI_MAX}"));
        }
    }
    finish(4, "type I error, null DGM, M = 2000", failures, detail.join(" "));
}

#[test]
fn criterion_05_collapse_frequencies() {
    let g = grid();
    let s1 = g.oc(ShiftModel::Instant, 1, Method::Mmrm3);
    let s6 = g.oc(ShiftModel::Instant, 6, Method::Mmrm3);
    let checks = [
        ("S1 six-pattern", s1.collapse_rate(6), 0.815, 0.04),
        ("S6 two-pattern", s6.collapse_rate(2), 0.436, 0.05),
        ("S6 one-pattern", s6.collapse_rate(1), 0.146, 0.04),
    ];
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for (name, got, want, tol) in checks {
        detail.push(format!("{name} {:.1}%", 100.0 * got));
        if !within(got, want, tol) {
            failures.push(format!("{name}: {got:.3} vs {want} +- {tol}"));
        }
    }
    finish(5, "MMRM3 collapse frequencies", failures, detail.join("; "));
}

#[test]
fn criterion_06_bias_profile() {
    const MMRM1_LO: f64 = 0.01;
    const MMRM1_HI: f64 = 0.09;
    const MMRM1_MAX_TOL: f64 = 0.02;
    const PATTERN_MAX: f64 = 0.03;
    const J2R_MAX: f64 = 0.015;
    let g = grid();
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for shift in [ShiftModel::Instant, ShiftModel::Gradual] {
        let b = g.series(shift, Method::Mmrm1, |o| o.bias);
        detail.push(format!("MMRM1 {shift:?} {}", fmt_series(&b, 1.0)));
        for (k, x) in b.iter().enumerate() {
            if *x >= 0.0 {
                failures.push(format!("MMRM1 {shift:?} S{} bias {x:.4} not anti-conservative", k + 1));
            }
            let mcse = g.oc(shift, k + 1, Method::Mmrm1).bias_mcse;
            if x.abs() < MMRM1_LO - Z * mcse || x.abs() > MMRM1_HI + MMRM1_MAX_TOL {
                failures.push(format!("MMRM1 {shift:?} S{} |bias| {:.4} outside [0.01, 0.09]", k + 1, x.abs()));
            }
        }
        if b.windows(2).any(|w| w[1].abs() <= w[0].abs()) {
            failures.push(format!("MMRM1 {shift:?} |bias| not increasing across scenarios"));
        }
        for m in [Method::Mmrm3, Method::Mi3] {
            for k in 1..=6 {
                let o = g.oc(shift, k, m);
                if o.bias.abs() > PATTERN_MAX + Z * o.bias_mcse {
                    failures.push(format!("{m} {shift:?} S{k} |bias| {:.4} > 0.03 + {:.4}", o.bias.abs(), Z * o.bias_mcse));
                }
            }
            detail.push(format!("{m} {shift:?} {}", fmt_series(&g.series(shift, m, |o| o.bias), 1.0)));
        }
    }
    let gmax = g.oc(ShiftModel::Gradual, 6, Method::Mmrm1).bias.abs();
    if !within(gmax, MMRM1_HI, MMRM1_MAX_TOL) {
        failures.push(format!("MMRM1 Gradual S6 |bias| {gmax:.4} vs 0.09 +- 0.02"));
    }
    for k in 1..=6 {
        let o = g.oc(ShiftModel::Instant, k, Method::J2r);
        if o.bias.abs() > J2R_MAX + Z * o.bias_mcse {
            failures.push(format!("J2R Instant S{k} |bias| {:.4}", o.bias.abs()));
        }
    }
    detail.push(format!("J2R Instant {}", fmt_series(&g.series(ShiftModel::Instant, Method::J2r, |o| o.bias), 1.0)));
    finish(6, "bias profile", failures, detail.join("; "));
}

#[test]
fn criterion_07_sd_profile() {
    const SIMPLE: (f64, f64) = (0.113 - 0.005, 0.120 + 0.005);
    const STATUS_MAX: f64 = 0.160;
    const PATTERN_MAX: f64 = 0.171;
    const MAX_TOL: f64 = 0.01;
    /// Spread allowed for "approximately constant": about three Monte Carlo
    /// SEs of an SD at M = 500 (0.105 / sqrt(2 * 499) = 0.0033).
    const RBI_RANGE: f64 = 0.01;
    let g = grid();
    let shifts = [ShiftModel::Instant, ShiftModel::Gradual];
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for m in [Method::Mmrm1, Method::Mi1] {
        for s in shifts {
            let sd = g.series(s, m, |o| o.sd);
            if sd.iter().any(|x| *x < SIMPLE.0 || *x > SIMPLE.1) {
                failures.push(format!("{m} {s:?} SD {} outside [{:.3}, {:.3}]", fmt_series(&sd, 1.0), SIMPLE.0, SIMPLE.1));
            }
        }
    }
    for (pair, target) in [([Method::Mmrm2, Method::Mi2], STATUS_MAX), ([Method::Mmrm3, Method::Mi3], PATTERN_MAX)] {
        for m in pair {
            let mut best = (0.0, 0, ShiftModel::Instant);
            for s in shifts {
                for (k, x) in g.series(s, m, |o| o.sd).into_iter().enumerate() {
                    if x > best.0 {
                        best = (x, k + 1, s);
                    }
                }
            }
            detail.push(format!("{m} max {:.4} at {:?} S{}", best.0, best.2, best.1));
            if !within(best.0, target, MAX_TOL) || best.1 != 6 {
                failures.push(format!("{m} max SD {:.4} at S{} vs {target} +- {MAX_TOL} at S6", best.0, best.1));
            }
        }
    }
    for s in shifts {
        let full = g.series(s, Method::Full, |o| o.sd);
        for m in [Method::J2r, Method::Cir, Method::Cr] {
            let sd = g.series(s, m, |o| o.sd);
            let range = sd.iter().cloned().fold(f64::MIN, f64::max) - sd.iter().cloned().fold(f64::MAX, f64::min);
            if range > RBI_RANGE {
                failures.push(format!("{m} {s:?} SD range {range:.4} > {RBI_RANGE}"));
            }
            if sd.iter().zip(&full).any(|(a, f)| a >= f) {
                failures.push(format!("{m} {s:?} SD {} not below FULL {:.4}", fmt_series(&sd, 1.0), full[0]));
            }
            detail.push(format!("{m} {s:?} {}", fmt_series(&sd, 1.0)));
        }
        detail.push(format!("FULL {s:?} {:.4}", full[0]));
    }
    finish(7, "SD profile", failures, detail.join("; "));
}

#[test]
fn criterion_08_power_ordering() {
    const TOL: f64 = 0.04;
    const J2R_MIN: f64 = 0.85;
    let g = grid();
    let s = ShiftModel::Instant;
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for m in [Method::Mmrm2, Method::Mi2] {
        let p = g.series(s, m, |o| o.power);
        detail.push(format!("{m} {}", fmt_series(&p, 100.0)));
        if !within(p[0], 0.88, TOL) {
            failures.push(format!("{m} S1 power {:.3} vs 0.88 +- {TOL}", p[0]));
        }
        if !within(p[5], 0.65, TOL) {
            failures.push(format!("{m} S6 power {:.3} vs 0.65 +- {TOL}", p[5]));
        }
    }
    for m in [Method::Mmrm3, Method::Mi3] {
        let p = g.series(s, m, |o| o.power);
        detail.push(format!("{m} {}", fmt_series(&p, 100.0)));
        let low = p.iter().cloned().fold(f64::MAX, f64::min);
        if !within(low, 0.58, TOL) {
            failures.push(format!("{m} minimum power {low:.3} vs 0.58 +- {TOL}"));
        }
    }
    let j = g.series(s, Method::J2r, |o| o.power);
    detail.push(format!("J2R {}", fmt_series(&j, 100.0)));
    if j.iter().any(|p| *p < J2R_MIN) {
        failures.push(format!("J2R power below {J2R_MIN}"));
    }
    finish(8, "power ordering, DAR Instant", failures, detail.join("; "));
}

#[test]
fn criterion_09_oracle_equivalences() {
    let mut failures = Vec::new();

    // complete-data MMRM equals per-visit least squares
    let d = complete_trial(120, 3);
    let f = fit(&d, &DesignSpec::Simple).unwrap();
    let mut worst: f64 = 0.0;
    for j in 1..=5 {
        let (b, _, _) = visit_ols(&d, j);
        for (k, arm) in [Arm::Control, Arm::Treatment].into_iter().enumerate() {
            let c = f.design().cell_column(Cell { visit: j, arm, level: 1 }).unwrap();
            worst = worst.max((f.coefficients[c] - b[k]).abs());
        }
    }
    if worst > 1e-8 {
        failures.push(format!("MMRM vs OLS max difference {worst:.2e}"));
    }

    // zero missing data: MI and RBI reduce to one ANCOVA exactly
    let (est, se, _) = ancova_oracle(&d);
    let stream = RngStream::new(7);
    let opts = MiOptions { imputations: 5, ..MiOptions::default() };
    for m in [Method::Mi1, Method::Mi2, Method::Mi3] {
        let r = estimate_mi(&d, m, &opts, &stream).unwrap();
        if (r.estimate - est).abs() > 1e-12 || (r.se - se).abs() > 1e-12 {
            failures.push(format!("{m} on complete data: {} vs {est}", r.estimate));
        }
    }
    let rbi = RbiOptions { mi: opts, ..RbiOptions::default() };
    for r in estimate_rbi_all(&d, &rbi, &stream).unwrap() {
        if (r.estimate - est).abs() > 1e-12 || (r.se - se).abs() > 1e-12 {
            failures.push(format!("{} on complete data: {} vs {est}", r.method, r.estimate));
        }
    }

    // Rubin: B = 0 gives T = U-bar
    let p = rubin_pool(&[0.3; 4], &[0.02, 0.03, 0.025, 0.025], 197.0).unwrap();
    if p.b != 0.0 || p.total_var != p.ubar {
        failures.push(format!("Rubin B {} T {} Ubar {}", p.b, p.total_var, p.ubar));
    }

    // two-pattern policy variance worked by hand:
    // 0.8 * 0.2 * 0.4^2 / 200 + 0.8^2 * 0.01 + 0.2^2 * 0.04 = 8.128e-3
    let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.04]));
    let v = policy_variance(&[-0.5, -0.1], &cov, &[0.8, 0.2], 200.0).total();
    if (v - 8.128e-3).abs() > 1e-12 {
        failures.push(format!("policy variance {v:e}"));
    }

    // all 32 recoding rows
    let mut bad_rows = 0;
    for (bits, status, pattern) in recoding_table::RECODING_ROWS {
        let r = PatternIssueReport::from_pattern_issues(bits.map(|b| b == 1));
        let s = plan_collapse(&r, CodingTarget::Status).unwrap().label();
        let p = plan_collapse(&r, CodingTarget::Pattern).unwrap().label();
        if s != status || p != pattern {
            bad_rows += 1;
        }
    }
    if bad_rows > 0 {
        failures.push(format!("{bad_rows} recoding rows differ"));
    }
    finish(
        9,
        "oracle equivalences",
        failures,
        format!("MMRM-OLS max diff {worst:.1e}; MI/RBI exact; Rubin B=0; policy variance {v:.6e}; 32 recoding rows"),
    );
}

#[test]
fn criterion_10_mmrm_mi_concordance() {
    const TOL: f64 = 0.005;
    let g = grid();
    let mut failures = Vec::new();
    let mut worst = (0.0, String::new());
    for s in [ShiftModel::Instant, ShiftModel::Gradual] {
        for (a, b) in [(Method::Mmrm1, Method::Mi1), (Method::Mmrm2, Method::Mi2), (Method::Mmrm3, Method::Mi3)] {
            for k in 1..=6 {
                let diff = (g.oc(s, k, a).mean - g.oc(s, k, b).mean).abs();
                if diff > worst.0 {
                    worst = (diff, format!("{a}/{b} {s:?} S{k}"));
                }
                if diff > TOL {
                    failures.push(format!("{a} vs {b} {s:?} S{k}: {diff:.4}"));
                }
            }
        }
    }
    finish(10, "MMRM/MI mean concordance", failures, format!("largest |difference| {:.4} ({})", worst.0, worst.1));
}

#[test]
fn criterion_11_kenward_roger_sanity() {
    const DF_TOL: f64 = 0.1;
    const GRAD_TOL: f64 = 1e-4;
    let mut failures = Vec::new();
    let d = complete_trial(150, 21);
    let r = estimate_mmrm(&d, Method::Mmrm1, &MmrmOptions::default()).unwrap();
    let want = (d.n() - 3) as f64;
    if (r.df - want).abs() > DF_TOL {
        failures.push(format!("KR df {:.3} vs {want}", r.df));
    }

    let t = trial(0.3, 80, 2);
    let coding = tpsim::collapse::collapse(&t, CodingTarget::Pattern).unwrap();
    let mut worst: f64 = 0.0;
    for spec in [DesignSpec::Simple, DesignSpec::Coded(coding)] {
        let design = MmrmDesign::build(&t, &spec).unwrap();
        let sigma = DMatrix::from_fn(5, 5, |i, j| 0.5_f64.powi((i as i32 - j as i32).abs()) * (0.9 + 0.1 * j.min(i) as f64));
        let theta = sigma_to_theta(&sigma).unwrap();
        let (_, g) = reml_objective(&design, &theta).unwrap();
        let h = 1e-5;
        for k in 0..theta.len() {
            let (mut tp, mut tm) = (theta.clone(), theta.clone());
            tp[k] += h;
            tm[k] -= h;
            let fd = (reml_objective(&design, &tp).unwrap().0 - reml_objective(&design, &tm).unwrap().0) / (2.0 * h);
            worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1.0));
        }
    }
    if worst > GRAD_TOL {
        failures.push(format!("gradient relative error {worst:.2e}"));
    }
    finish(11, "Kenward-Roger sanity", failures, format!("KR df {:.3} (n-3 = {want}); gradient rel. error {worst:.1e}", r.df));
}
