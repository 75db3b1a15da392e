//! Scenario configuration: the complete data-generating parameterisation.

use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::CovMatrix;

/// Number of scheduled visits including baseline.
pub const N_VISITS: usize = 6;
/// Number of post-baseline visits.
pub const N_POST: usize = N_VISITS - 1;

/// Withdrawal parameters of the six missingness scenarios.
pub const THETA_GRID: [f64; 6] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];

const DEFAULTS_TOML: &str = include_str!("../config/pioneer1_defaults.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "C")]
    Control,
    #[serde(rename = "T")]
    Treatment,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treatment];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Arm::Control => "C",
            Arm::Treatment => "T",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IeMechanism {
    Dar,
    Dnar,
}

impl IeMechanism {
    pub fn label(self) -> &'static str {
        match self {
            IeMechanism::Dar => "DAR",
            IeMechanism::Dnar => "DNAR",
        }
    }
}

impl std::str::FromStr for IeMechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dar" => Ok(IeMechanism::Dar),
            "dnar" => Ok(IeMechanism::Dnar),
            _ => Err(Error::Config(format!("unknown IE mechanism `{s}` (dar, dnar)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftModel {
    Instant,
    Gradual,
}

impl ShiftModel {
    pub fn label(self) -> &'static str {
        match self {
            ShiftModel::Instant => "Instant",
            ShiftModel::Gradual => "Gradual",
        }
    }
}

impl std::str::FromStr for ShiftModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "instant" => Ok(ShiftModel::Instant),
            "gradual" => Ok(ShiftModel::Gradual),
            _ => Err(Error::Config(format!("unknown shift model `{s}` (instant, gradual)"))),
        }
    }
}

/// How `missingness_theta` maps to the per-visit withdrawal probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingnessLink {
    /// Probability equals theta.
    Probability,
    /// Probability equals expit(theta).
    Logit,
}

/// Logistic hazard coefficients for the intercurrent event, one entry per
/// post-baseline visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IeCoefficients {
    pub intercept: Vec<f64>,
    pub baseline: Vec<f64>,
    pub previous: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current: Option<Vec<f64>>,
}

impl IeCoefficients {
    /// Linear predictor at post-baseline visit `j` (1-based).
    pub fn linear_predictor(&self, j: usize, baseline: f64, previous: f64, current: f64) -> f64 {
        let k = j - 1;
        let mut lp = self.intercept[k] + self.baseline[k] * baseline + self.previous[k] * previous;
        if let Some(c) = &self.current {
            lp += c[k] * current;
        }
        lp
    }

    fn validate(&self, what: &str, need_current: bool) -> Result<()> {
        for (name, v) in [
            ("intercept", &self.intercept),
            ("baseline", &self.baseline),
            ("previous", &self.previous),
        ] {
            if v.len() != N_POST {
                return Err(Error::Config(format!(
                    "{what}.{name} needs {N_POST} values, found {}",
                    v.len()
                )));
            }
        }
        match (&self.current, need_current) {
            (Some(_), false) => Err(Error::Config(format!(
                "{what}: the DAR hazard must not depend on the current outcome"
            ))),
            (None, true) => Err(Error::Config(format!("{what}.current is required for DNAR"))),
            (Some(c), true) if c.len() != N_POST => Err(Error::Config(format!(
                "{what}.current needs {N_POST} values, found {}",
                c.len()
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftParams {
    /// Constant shift under the instant model.
    pub instant: f64,
    /// Plateau of the gradual shift.
    pub gradual_a: f64,
    /// Number of visits over which the gradual shift ramps up.
    pub gradual_b: f64,
}

impl ShiftParams {
    /// Off-treatment shift `s` visits after the first affected visit.
    pub fn shift(&self, model: ShiftModel, s: usize) -> f64 {
        match model {
            ShiftModel::Instant => self.instant,
            ShiftModel::Gradual => self.gradual_a * (s as f64).min(self.gradual_b) / self.gradual_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub dar: IeCoefficients,
    pub dnar: IeCoefficients,
    pub shift: ShiftParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_per_arm: usize,
    pub visit_weeks: Vec<f64>,
    pub rho: f64,
    pub ie_mechanism: IeMechanism,
    pub shift_model: ShiftModel,
    pub missingness_theta: f64,
    #[serde(default = "default_link")]
    pub missingness_link: MissingnessLink,
    pub root_seed: u64,
    #[serde(default)]
    pub null_mode: bool,
    #[serde(default)]
    pub allow_offgrid: bool,
    pub treatment: ArmParams,
    pub control: ArmParams,
}

fn default_link() -> MissingnessLink {
    MissingnessLink::Probability
}

impl ScenarioConfig {
    /// The bundled PIONEER 1 calibration (DAR, instant shift, scenario 1).
    pub fn pioneer1_defaults() -> Self {
        Self::from_toml_str(DEFAULTS_TOML).expect("bundled defaults are valid")
    }

    pub fn defaults_toml() -> &'static str {
        DEFAULTS_TOML
    }

    /// Bundled defaults with the given scenario cell selected.
    pub fn pioneer1(mechanism: IeMechanism, shift: ShiftModel, theta: f64) -> Self {
        let mut c = Self::pioneer1_defaults();
        c.ie_mechanism = mechanism;
        c.shift_model = shift;
        c.missingness_theta = theta;
        c
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.visit_weeks.len() != N_VISITS {
            return Err(Error::Config(format!(
                "expected {N_VISITS} visits, found {}",
                self.visit_weeks.len()
            )));
        }
        if self.n_per_arm < 2 {
            return Err(Error::Config("n_per_arm must be at least 2".into()));
        }
        if !self.missingness_theta.is_finite() {
            return Err(Error::Config("missingness_theta must be finite".into()));
        }
        if !self.allow_offgrid && scenario_index(self.missingness_theta).is_none() {
            return Err(Error::Config(format!(
                "missingness_theta {} is not on the scenario grid {:?} (set allow_offgrid to override)",
                self.missingness_theta, THETA_GRID
            )));
        }
        if self.missingness_link == MissingnessLink::Probability
            && !(0.0..=1.0).contains(&self.missingness_theta)
        {
            return Err(Error::Config(
                "missingness_theta must be a probability under the probability link".into(),
            ));
        }
        for (name, arm) in [("treatment", &self.treatment), ("control", &self.control)] {
            if arm.means.len() != N_VISITS || arm.variances.len() != N_VISITS {
                return Err(Error::Config(format!(
                    "{name}: means and variances need {N_VISITS} values"
                )));
            }
            arm.dar.validate(&format!("{name}.dar"), false)?;
            arm.dnar.validate(&format!("{name}.dnar"), true)?;
            if !(arm.shift.gradual_b > 0.0) {
                return Err(Error::Config(format!("{name}.shift.gradual_b must be positive")));
            }
            CovMatrix::spatial_power(&arm.variances, &self.visit_weeks, self.rho)
                .map_err(|e| Error::Config(format!("{name} covariance: {e}")))?;
        }
        Ok(())
    }

    /// Parameters actually used for an arm (control parameters for both arms
    /// under the null configuration).
    pub fn arm(&self, arm: Arm) -> &ArmParams {
        match (arm, self.null_mode) {
            (Arm::Treatment, false) => &self.treatment,
            _ => &self.control,
        }
    }

    pub fn ie_coefficients(&self, arm: Arm) -> &IeCoefficients {
        match self.ie_mechanism {
            IeMechanism::Dar => &self.arm(arm).dar,
            IeMechanism::Dnar => &self.arm(arm).dnar,
        }
    }

    pub fn covariance(&self, arm: Arm) -> CovMatrix {
        let a = self.arm(arm);
        CovMatrix::spatial_power(&a.variances, &self.visit_weeks, self.rho).expect("validated")
    }

    pub fn shift(&self, arm: Arm, s: usize) -> f64 {
        self.arm(arm).shift.shift(self.shift_model, s)
    }

    pub fn withdrawal_probability(&self) -> f64 {
        match self.missingness_link {
            MissingnessLink::Probability => self.missingness_theta,
            MissingnessLink::Logit => crate::numcore::expit(self.missingness_theta),
        }
    }

    /// Missingness scenario number (1-6) when theta is on the grid.
    pub fn scenario_number(&self) -> Option<usize> {
        scenario_index(self.missingness_theta).map(|i| i + 1)
    }

    /// Human-readable parameter tables.
    pub fn render_tables(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "mechanism={} shift={} theta={} link={:?} null_mode={} n_per_arm={} rho={} seed={}",
            self.ie_mechanism.label(),
            self.shift_model.label(),
            self.missingness_theta,
            self.missingness_link,
            self.null_mode,
            self.n_per_arm,
            self.rho,
            self.root_seed
        );
        let _ = writeln!(s, "\nOn-treatment means and variances");
        let _ = writeln!(s, "week\tmu_T\tmu_C\tvar_T\tvar_C");
        for j in 0..N_VISITS {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                self.visit_weeks[j],
                self.treatment.means[j],
                self.control.means[j],
                self.treatment.variances[j],
                self.control.variances[j]
            );
        }
        for (title, t, c) in [
            ("DAR discontinuation model", &self.treatment.dar, &self.control.dar),
            ("DNAR discontinuation model", &self.treatment.dnar, &self.control.dnar),
        ] {
            let _ = writeln!(s, "\n{title}");
            let _ = writeln!(s, "parameter\tvisit\tT\tC");
            let mut rows: Vec<(&str, &Vec<f64>, &Vec<f64>)> = vec![
                ("beta0", &t.intercept, &c.intercept),
                ("beta1", &t.baseline, &c.baseline),
                ("beta2", &t.previous, &c.previous),
            ];
            if let (Some(tc), Some(cc)) = (&t.current, &c.current) {
                rows.push(("beta3", tc, cc));
            }
            for (name, tv, cv) in rows {
                for j in 0..N_POST {
                    let _ = writeln!(s, "{name}\t{}\t{}\t{}", j + 1, tv[j], cv[j]);
                }
            }
        }
        let _ = writeln!(s, "\nOff-treatment shift");
        let _ = writeln!(s, "model\tT\tC");
        let _ = writeln!(s, "instant\t{}\t{}", self.treatment.shift.instant, self.control.shift.instant);
        let _ = writeln!(
            s,
            "gradual\t{} * min(x, {}) / {}\t{} * min(x, {}) / {}",
            self.treatment.shift.gradual_a,
            self.treatment.shift.gradual_b,
            self.treatment.shift.gradual_b,
            self.control.shift.gradual_a,
            self.control.shift.gradual_b,
            self.control.shift.gradual_b
        );
        let _ = writeln!(s, "\nMissingness");
        let grid: Vec<String> = THETA_GRID.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(s, "theta grid\t{}", grid.join(", "));
        s
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_tables())
    }
}

/// Zero-based grid position of theta, if it is on the grid.
pub fn scenario_index(theta: f64) -> Option<usize> {
    THETA_GRID.iter().position(|t| (t - theta).abs() < 1e-9)
}
