//! Simulation engine for treatment-policy estimators in longitudinal trials
//! with intercurrent events and missing data.

pub mod collapse;
pub mod config;
pub mod dgm;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod mi;
pub mod mmrm;
pub mod numcore;
pub mod rbi;

pub use config::{Arm, IeMechanism, MissingnessLink, ScenarioConfig, ShiftModel};
pub use error::{Error, Result};
pub use estimate::{DfMethod, EstimateResult, Method};
