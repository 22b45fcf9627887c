//! Minimum-time induction of anesthesia on a four-compartment PK/PD model.
//!
//! Two independent solvers compute the bang-bang infusion schedule that
//! brings the blood and effect-site masses to their BIS-target equilibrium
//! values as fast as possible:
//!
//! - [`shooting`]: Pontryagin extremals, solved by shooting on the initial
//!   costate and final time.
//! - [`strategy`]: enumeration of every bang-bang structure with at most
//!   three switches, each solved by exact propagation and root-finding.

pub mod cli;
pub mod error;
pub mod lti;
pub mod patient;
pub mod problem;
pub mod shooting;
pub mod strategy;

pub use error::{Error, Result};
pub use lti::{LtiSystem, Trajectory};
pub use patient::{BisParameters, EquilibriumState, PatientDemographics, PkPdParameters, Sex};
pub use problem::{ControlSchedule, TimeOptimalProblem};
