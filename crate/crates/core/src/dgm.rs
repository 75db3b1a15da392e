//! Patient-level data generation: on-treatment trajectories, intercurrent
//! events, off-treatment shifts and monotone withdrawal.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;

use crate::config::{Arm, ScenarioConfig, N_POST, N_VISITS};
use crate::error::Result;
use crate::numcore::{expit, MvnSampler, RngStream};

/// Stage indices used to derive independent streams for one replicate.
pub mod stage {
    pub const ON_TREATMENT_CONTROL: u64 = 0;
    pub const ON_TREATMENT_TREATMENT: u64 = 1;
    pub const IE: u64 = 2;
    pub const MISSINGNESS: u64 = 3;
    pub const TRUTH: u64 = 9;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub arm: Arm,
    /// Hypothetical on-treatment outcomes, visits 0..=5.
    pub y_on: [f64; N_VISITS],
    /// First visit affected by the intercurrent event (1..=5).
    pub ie_visit: Option<usize>,
    /// Outcomes including the off-treatment shift.
    pub y_tilde: [f64; N_VISITS],
    /// Missingness of post-baseline visits 1..=5 (index 0 is visit 1).
    pub miss: [bool; N_POST],
}

impl PatientRecord {
    pub fn baseline(&self) -> f64 {
        self.y_on[0]
    }

    /// IE status `D` at visit `j` (1-based).
    pub fn ie_status(&self, j: usize) -> bool {
        matches!(self.ie_visit, Some(t) if t <= j)
    }

    /// Pattern indicator `P` at visit `j`.
    pub fn ie_pattern_indicator(&self, j: usize) -> bool {
        self.ie_visit == Some(j)
    }

    /// IE pattern 1..=5, or 6 for patients without an intercurrent event.
    pub fn pattern(&self) -> usize {
        self.ie_visit.unwrap_or(N_VISITS)
    }

    pub fn is_missing(&self, j: usize) -> bool {
        j > 0 && self.miss[j - 1]
    }

    /// Number of observed post-baseline visits; observed visits are `1..=n`.
    pub fn n_observed(&self) -> usize {
        self.miss.iter().take_while(|m| !**m).count()
    }

    /// Observed outcome at visit `j`.
    pub fn observed(&self, j: usize) -> Option<f64> {
        (!self.is_missing(j)).then(|| self.y_tilde[j])
    }

    pub fn observed_change(&self, j: usize) -> Option<f64> {
        self.observed(j).map(|y| y - self.y_on[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub n_per_arm: usize,
    pub visit_weeks: Vec<f64>,
    /// Control patients first, then treatment patients.
    pub patients: Vec<PatientRecord>,
}

impl TrialDataset {
    pub fn n(&self) -> usize {
        self.patients.len()
    }

    pub fn arm_patients(&self, arm: Arm) -> impl Iterator<Item = &PatientRecord> {
        self.patients.iter().filter(move |p| p.arm == arm)
    }

    pub fn arm_size(&self, arm: Arm) -> usize {
        self.arm_patients(arm).count()
    }

    /// Same trial with every outcome observed.
    pub fn without_missingness(&self) -> TrialDataset {
        let mut d = self.clone();
        for p in &mut d.patients {
            p.miss = [false; N_POST];
        }
        d
    }

    pub fn n_missing_cells(&self) -> usize {
        self.patients
            .iter()
            .map(|p| p.miss.iter().filter(|m| **m).count())
            .sum()
    }

    pub fn mean_baseline(&self) -> f64 {
        self.patients.iter().map(|p| p.baseline()).sum::<f64>() / self.n() as f64
    }

    /// One row per patient-visit:
    /// `patient_id,arm,visit,week,baseline,y,change,ie_status,ie_pattern,missing`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "patient_id", "arm", "visit", "week", "baseline", "y", "change", "ie_status",
            "ie_pattern", "missing",
        ])?;
        for (i, p) in self.patients.iter().enumerate() {
            for j in 0..N_VISITS {
                let (y, ch) = match p.observed(j) {
                    Some(y) => (format!("{y}"), format!("{}", y - p.baseline())),
                    None => (String::new(), String::new()),
                };
                out.write_record([
                    (i + 1).to_string(),
                    p.arm.label().to_string(),
                    j.to_string(),
                    format!("{}", self.visit_weeks[j]),
                    format!("{}", p.baseline()),
                    y,
                    ch,
                    u8::from(j > 0 && p.ie_status(j)).to_string(),
                    u8::from(j > 0 && p.ie_pattern_indicator(j)).to_string(),
                    u8::from(p.is_missing(j)).to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Step 1: `n_per_arm` on-treatment trajectories for one arm.
pub fn simulate_on_treatment<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    arm: Arm,
    n: usize,
    rng: &mut R,
) -> Result<Vec<[f64; N_VISITS]>> {
    let mean = DVector::from_column_slice(&cfg.arm(arm).means);
    let sampler = MvnSampler::new(mean, &cfg.covariance(arm))?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut y = [0.0; N_VISITS];
        sampler.sample_into(rng, &mut y);
        out.push(y);
    }
    Ok(out)
}

/// Step 2: first visit with an intercurrent event, drawn sequentially from
/// the discrete-time logistic hazard.
pub fn simulate_ie<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    arm: Arm,
    y_on: &[f64; N_VISITS],
    rng: &mut R,
) -> Option<usize> {
    let coef = cfg.ie_coefficients(arm);
    for j in 1..N_VISITS {
        let lp = coef.linear_predictor(j, y_on[0], y_on[j - 1], y_on[j]);
        let u: f64 = rng.gen();
        if u < expit(lp) {
            return Some(j);
        }
    }
    None
}

/// Step 3: shifted trajectory `y_tilde[j] = y_on[j] + delta(j - tau)` for `j >= tau`.
pub fn apply_offtreatment_shift(
    cfg: &ScenarioConfig,
    arm: Arm,
    y_on: &[f64; N_VISITS],
    ie_visit: Option<usize>,
) -> [f64; N_VISITS] {
    let mut y = *y_on;
    if let Some(tau) = ie_visit {
        for (j, v) in y.iter_mut().enumerate().skip(tau) {
            *v += cfg.shift(arm, j - tau);
        }
    }
    y
}

/// Step 4: monotone withdrawal, possible only from the first affected visit on.
pub fn simulate_missingness<R: Rng + ?Sized>(
    ie_visit: Option<usize>,
    prob: f64,
    rng: &mut R,
) -> [bool; N_POST] {
    let mut miss = [false; N_POST];
    // one uniform per visit keeps draws aligned across withdrawal probabilities
    let u: [f64; N_POST] = std::array::from_fn(|_| rng.gen());
    if let Some(tau) = ie_visit {
        for j in tau..N_VISITS {
            if u[j - 1] < prob {
                for m in miss.iter_mut().skip(j - 1) {
                    *m = true;
                }
                break;
            }
        }
    }
    miss
}

/// Composes the four generation steps for one replicate.
pub fn generate_trial(cfg: &ScenarioConfig, replicate_id: u64) -> Result<TrialDataset> {
    let base = RngStream::new(cfg.root_seed).child(replicate_id);
    generate_with_stream(cfg, &base, cfg.n_per_arm, true)
}

fn generate_with_stream(
    cfg: &ScenarioConfig,
    base: &RngStream,
    n_per_arm: usize,
    with_missingness: bool,
) -> Result<TrialDataset> {
    let mut ie_rng = base.child(stage::IE).rng();
    let mut miss_rng = base.child(stage::MISSINGNESS).rng();
    let prob = cfg.withdrawal_probability();
    let mut patients = Vec::with_capacity(2 * n_per_arm);
    for arm in Arm::BOTH {
        let st = match arm {
            Arm::Control => stage::ON_TREATMENT_CONTROL,
            Arm::Treatment => stage::ON_TREATMENT_TREATMENT,
        };
        let ys = simulate_on_treatment(cfg, arm, n_per_arm, &mut base.child(st).rng())?;
        for y_on in ys {
            let ie_visit = simulate_ie(cfg, arm, &y_on, &mut ie_rng);
            let y_tilde = apply_offtreatment_shift(cfg, arm, &y_on, ie_visit);
            let miss = if with_missingness {
                simulate_missingness(ie_visit, prob, &mut miss_rng)
            } else {
                [false; N_POST]
            };
            patients.push(PatientRecord {
                arm,
                y_on,
                ie_visit,
                y_tilde,
                miss,
            });
        }
    }
    Ok(TrialDataset {
        n_per_arm,
        visit_weeks: cfg.visit_weeks.clone(),
        patients,
    })
}

/// True treatment-policy effect with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueEstimand {
    pub delta: f64,
    pub mcse: f64,
    pub n_per_arm: usize,
}

/// Difference (T - C) in mean change from baseline to the last visit in a
/// large trial without missingness.
pub fn true_estimand(cfg: &ScenarioConfig, n_per_arm: usize) -> Result<TrueEstimand> {
    let base = RngStream::new(cfg.root_seed).child(u64::MAX).child(stage::TRUTH);
    let mut ie_rng = base.child(stage::IE).rng();
    let mut stats = [(0.0f64, 0.0f64); 2];
    // stream the draws arm by arm to keep memory flat
    for arm in Arm::BOTH {
        let st = match arm {
            Arm::Control => stage::ON_TREATMENT_CONTROL,
            Arm::Treatment => stage::ON_TREATMENT_TREATMENT,
        };
        let mean = DVector::from_column_slice(&cfg.arm(arm).means);
        let sampler = MvnSampler::new(mean, &cfg.covariance(arm))?;
        let mut rng = base.child(st).rng();
        let (mut m, mut m2) = (0.0, 0.0);
        let mut y = [0.0; N_VISITS];
        for k in 0..n_per_arm {
            sampler.sample_into(&mut rng, &mut y);
            let ie = simulate_ie(cfg, arm, &y, &mut ie_rng);
            let yt = apply_offtreatment_shift(cfg, arm, &y, ie);
            let ch = yt[N_VISITS - 1] - yt[0];
            // Welford update
            let d = ch - m;
            m += d / (k + 1) as f64;
            m2 += d * (ch - m);
        }
        stats[arm.index()] = (m, m2 / (n_per_arm - 1) as f64);
    }
    let (mc, vc) = stats[Arm::Control.index()];
    let (mt, vt) = stats[Arm::Treatment.index()];
    Ok(TrueEstimand {
        delta: mt - mc,
        mcse: (vt / n_per_arm as f64 + vc / n_per_arm as f64).sqrt(),
        n_per_arm,
    })
}

/// Visit-5 status shares per arm: (on treatment, discontinued and observed,
/// discontinued and missing), as fractions.
pub fn final_visit_status(data: &TrialDataset, arm: Arm) -> [f64; 3] {
    let mut c = [0usize; 3];
    let mut n = 0;
    for p in data.arm_patients(arm) {
        n += 1;
        let k = if p.ie_visit.is_none() {
            0
        } else if p.is_missing(N_POST) {
            2
        } else {
            1
        };
        c[k] += 1;
    }
    c.map(|v| v as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{IeMechanism, ShiftModel};

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::pioneer1_defaults()
    }

    #[test]
    fn no_ie_means_no_shift_and_no_missingness() {
        let c = cfg();
        let y = [8.0, 7.9, 7.8, 7.7, 7.6, 7.5];
        assert_eq!(apply_offtreatment_shift(&c, Arm::Control, &y, None), y);
        let mut rng = RngStream::new(1).rng();
        for _ in 0..100 {
            assert_eq!(simulate_missingness(None, 1.0, &mut rng), [false; N_POST]);
        }
    }

    #[test]
    fn instant_control_shift_from_tau() {
        let c = cfg();
        let y = [8.0; N_VISITS];
        let t = apply_offtreatment_shift(&c, Arm::Control, &y, Some(3));
        assert_eq!(&t[..3], &[8.0, 8.0, 8.0]);
        for v in &t[3..] {
            assert!((v - 7.4).abs() < 1e-12);
        }
    }

    #[test]
    fn gradual_treatment_ramp() {
        let c = ScenarioConfig::pioneer1(IeMechanism::Dar, ShiftModel::Gradual, 0.1);
        let y = [0.0; N_VISITS];
        let t = apply_offtreatment_shift(&c, Arm::Treatment, &y, Some(2));
        let expect = [0.0, 0.0, 0.0, -0.25 / 3.0, -0.25 * 2.0 / 3.0, -0.25];
        for (a, b) in t.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn huge_negative_intercept_gives_no_events() {
        let mut c = cfg();
        for arm in [&mut c.control, &mut c.treatment] {
            arm.dar.intercept = vec![-50.0; N_POST];
            arm.dar.baseline = vec![0.0; N_POST];
            arm.dar.previous = vec![0.0; N_POST];
        }
        let d = generate_trial(&c, 0).unwrap();
        assert!(d.patients.iter().all(|p| p.ie_visit.is_none()));
        assert_eq!(d.n_missing_cells(), 0);
    }

    #[test]
    fn missingness_is_monotone_and_after_ie() {
        let c = ScenarioConfig::pioneer1(IeMechanism::Dar, ShiftModel::Instant, 0.6);
        for r in 0..5 {
            let d = generate_trial(&c, r).unwrap();
            assert_eq!(d.n(), 400);
            assert_eq!(d.arm_size(Arm::Control), 200);
            for p in &d.patients {
                for j in 1..N_VISITS {
                    if p.is_missing(j) {
                        assert!(p.ie_status(j));
                        for l in j..N_VISITS {
                            assert!(p.is_missing(l));
                        }
                    }
                    if let Some(t) = p.ie_visit {
                        assert_eq!(p.ie_status(j), j >= t);
                    }
                }
                let n_ind = (1..N_VISITS).filter(|&j| p.ie_pattern_indicator(j)).count();
                assert!(n_ind <= 1);
                assert!(!p.is_missing(0));
                if let Some(t) = p.ie_visit {
                    assert_eq!(&p.y_tilde[..t], &p.y_on[..t]);
                } else {
                    assert_eq!(p.y_tilde, p.y_on);
                }
            }
        }
    }

    #[test]
    fn deterministic_per_replicate() {
        let c = cfg();
        assert_eq!(generate_trial(&c, 3).unwrap(), generate_trial(&c, 3).unwrap());
        assert_ne!(generate_trial(&c, 3).unwrap(), generate_trial(&c, 4).unwrap());
    }

    #[test]
    fn on_treatment_moments() {
        let c = cfg();
        let mut rng = RngStream::new(5).rng();
        let n = 100_000;
        let yt = simulate_on_treatment(&c, Arm::Treatment, n, &mut rng).unwrap();
        let yc = simulate_on_treatment(&c, Arm::Control, n, &mut rng).unwrap();
        for j in 0..N_VISITS {
            let m = yt.iter().map(|y| y[j]).sum::<f64>() / n as f64;
            assert!((m - c.treatment.means[j]).abs() < 0.02, "visit {j}: {m}");
        }
        let m5 = yc.iter().map(|y| y[5]).sum::<f64>() / n as f64;
        let v5 = yc.iter().map(|y| (y[5] - m5).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((v5 - 1.48).abs() < 0.03, "{v5}");
    }

    #[test]
    fn null_mode_arms_share_means() {
        let mut c = cfg();
        c.null_mode = true;
        let mut rng = RngStream::new(6).rng();
        let yt = simulate_on_treatment(&c, Arm::Treatment, 50_000, &mut rng).unwrap();
        let m5 = yt.iter().map(|y| y[5]).sum::<f64>() / 50_000.0;
        assert!((m5 - 7.78).abs() < 0.02);
    }

    #[test]
    fn truth_without_events_is_closed_form() {
        let mut c = cfg();
        for arm in [&mut c.control, &mut c.treatment] {
            arm.dar.intercept = vec![-60.0; N_POST];
        }
        let t = true_estimand(&c, 100_000).unwrap();
        // (7.05 - 7.92) - (7.78 - 7.92)
        assert!((t.delta - (-0.73)).abs() < 4.0 * t.mcse, "{t:?}");
    }

    #[test]
    fn truth_under_null_is_zero() {
        let mut c = cfg();
        c.null_mode = true;
        let t = true_estimand(&c, 100_000).unwrap();
        assert!(t.delta.abs() < 4.0 * t.mcse, "{t:?}");
    }

    #[test]
    fn csv_export_layout() {
        let d = generate_trial(&ScenarioConfig::pioneer1(IeMechanism::Dar, ShiftModel::Instant, 0.6), 1).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "patient_id,arm,visit,week,baseline,y,change,ie_status,ie_pattern,missing");
        assert_eq!(lines.len(), 1 + 400 * N_VISITS);
        assert!(lines[1].starts_with("1,C,0,0,"));
    }
}
