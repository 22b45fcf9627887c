use thiserror::Error;

/// Errors raised by the model builders and the solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The James formula produced a non-positive lean body mass.
    #[error("degenerate demographics: lean body mass {lbm} kg is not positive")]
    DegenerateDemographics { lbm: f64 },

    /// A Schnider rate constant came out non-positive.
    #[error("parameter {name} = {value} is out of range (demographics outside model validity)")]
    ParameterOutOfRange { name: &'static str, value: f64 },

    /// The adaptive integrator could not proceed.
    #[error("integrator step underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("integrator exceeded {0} steps")]
    TooManySteps(usize),

    /// No shooting seed produced a residual below tolerance.
    #[error("shooting did not converge after {seeds_tried} seeds (best residual {best_residual:e})")]
    NoConvergence { best_residual: f64, seeds_tried: usize },

    /// No bang-bang strategy reaches the target.
    #[error("no feasible strategy (best residual {best_residual:e} mg)")]
    Infeasible { best_residual: f64 },

    #[error("system is not controllable (Kalman rank {0})")]
    NotControllable(usize),

    #[error("system matrix has a complex or non-separated spectrum")]
    ComplexSpectrum,

    /// The fast target coincides with the initial fast state.
    #[error("degenerate target: fast target equals the initial fast state")]
    DegenerateTarget,
}

pub type Result<T> = std::result::Result<T, Error>;
