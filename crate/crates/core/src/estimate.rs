//! Shared result type for all estimators.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numcore::{t_cdf, t_quantile};

/// Super-superiority margin on the HbA1c (%) scale.
pub const DEFAULT_MARGIN: f64 = -0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Full,
    Mmrm1,
    Mmrm2,
    Mmrm3,
    Mi1,
    Mi2,
    Mi3,
    J2r,
    Cir,
    Cr,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Full,
        Method::Mmrm1,
        Method::Mmrm2,
        Method::Mmrm3,
        Method::Mi1,
        Method::Mi2,
        Method::Mi3,
        Method::J2r,
        Method::Cir,
        Method::Cr,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Full => "FULL",
            Method::Mmrm1 => "MMRM1",
            Method::Mmrm2 => "MMRM2",
            Method::Mmrm3 => "MMRM3",
            Method::Mi1 => "MI1",
            Method::Mi2 => "MI2",
            Method::Mi3 => "MI3",
            Method::J2r => "J2R",
            Method::Cir => "CIR",
            Method::Cr => "CR",
        }
    }

    pub fn is_reference_based(self) -> bool {
        matches!(self, Method::J2r | Method::Cir | Method::Cr)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        Method::ALL
            .into_iter()
            .find(|m| m.label() == up || (up == "JTR" && *m == Method::J2r))
            .ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.label()).collect();
                Error::Config(format!("unknown method {s:?}; expected one of {}", valid.join(",")))
            })
    }
}

/// Degrees-of-freedom method for the likelihood-based models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DfMethod {
    #[default]
    KenwardRoger,
    Satterthwaite,
}

impl FromStr for DfMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kr" | "kenward-roger" | "kenwardroger" => Ok(DfMethod::KenwardRoger),
            "satterthwaite" | "satt" => Ok(DfMethod::Satterthwaite),
            _ => Err(Error::Config(format!("unknown df method {s:?}; expected kr or satterthwaite"))),
        }
    }
}

/// One estimator applied to one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub method: Method,
    pub estimate: f64,
    pub se: f64,
    pub df: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Two-sided p-value against zero.
    pub p_zero: f64,
    /// One-sided p-value against the margin (alternative: effect below it).
    pub p_margin: f64,
    /// Number of IE patterns kept in the model (retrieved-dropout methods).
    pub collapse_level: Option<usize>,
    pub coding: Option<String>,
}

impl EstimateResult {
    /// t-based inference for an estimate with standard error `se` on `df`
    /// degrees of freedom (`f64::INFINITY` gives the normal limit).
    pub fn from_t(method: Method, estimate: f64, se: f64, df: f64, margin: f64) -> Result<Self> {
        if !(df > 0.0) {
            return Err(Error::InvalidParameter(format!("{method}: non-positive df {df}")));
        }
        if !(se >= 0.0) || !se.is_finite() {
            return Err(Error::InvalidParameter(format!("{method}: invalid standard error {se}")));
        }
        let (q, cdf): (f64, Box<dyn Fn(f64) -> f64>) = if df.is_finite() {
            (t_quantile(0.975, df), Box::new(move |x| t_cdf(x, df)))
        } else {
            use statrs::distribution::{ContinuousCDF, Normal};
            let n = Normal::new(0.0, 1.0).unwrap();
            (n.inverse_cdf(0.975), Box::new(move |x| n.cdf(x)))
        };
        let (p_zero, p_margin) = if se > 0.0 {
            let tz = estimate / se;
            let tm = (estimate - margin) / se;
            (2.0 * cdf(-tz.abs()), cdf(tm))
        } else {
            let pz = if estimate == 0.0 { 1.0 } else { 0.0 };
            let pm = if estimate < margin { 0.0 } else if estimate == margin { 0.5 } else { 1.0 };
            (pz, pm)
        };
        Ok(Self {
            method,
            estimate,
            se,
            df,
            ci_lo: estimate - q * se,
            ci_hi: estimate + q * se,
            p_zero,
            p_margin,
            collapse_level: None,
            coding: None,
        })
    }

    pub fn with_coding(mut self, level: usize, label: String) -> Self {
        self.collapse_level = Some(level);
        self.coding = Some(label);
        self
    }
}
