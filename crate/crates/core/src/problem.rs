//! Minimum-time induction problem and piecewise-constant schedules.

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::LtiSystem;
use crate::patient::{
    assemble_system, bis_inverse, equilibrium, schnider_parameters, BisParameters, EquilibriumState,
    PatientDemographics, PkPdParameters,
};

/// Infusion bound of the worked example, mg/min.
pub const REFERENCE_U_MAX: f64 = 106.0907;

/// Drive `x' = A x + B u`, `0 <= u <= u_max`, from `x0` until the fast
/// components `(x1, x4)` hit the equilibrium values, in minimum time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeOptimalProblem {
    sys: LtiSystem,
    x0: Vector4<f64>,
    equilibrium: EquilibriumState,
    u_max: f64,
}

impl TimeOptimalProblem {
    pub fn new(sys: LtiSystem, x0: Vector4<f64>, equilibrium: EquilibriumState, u_max: f64) -> Result<Self> {
        if !(u_max.is_finite() && u_max > 0.0) {
            return Err(Error::Domain(format!("u_max must be positive, got {u_max}")));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("initial state is not finite".into()));
        }
        let prob = Self {
            sys,
            x0,
            equilibrium,
            u_max,
        };
        let gap = prob.fast_residual(&x0);
        if gap[0].abs().max(gap[1].abs()) <= 1e-12 {
            return Err(Error::DegenerateTarget);
        }
        Ok(prob)
    }

    /// Builds the problem for a patient at rest, targeting the equilibrium
    /// whose effect-site level gives `bis_target`.
    pub fn for_patient(
        demo: &PatientDemographics,
        bis: &BisParameters,
        bis_target: f64,
        u_max: f64,
    ) -> Result<Self> {
        let params = schnider_parameters(demo)?;
        Self::from_parameters(&params, bis, bis_target, u_max)
    }

    pub fn from_parameters(
        params: &PkPdParameters,
        bis: &BisParameters,
        bis_target: f64,
        u_max: f64,
    ) -> Result<Self> {
        bis.validate()?;
        let sys = assemble_system(params)?;
        let level = bis_inverse(bis_target, bis)?;
        Self::new(sys, Vector4::zeros(), equilibrium(params, level), u_max)
    }

    /// 53 y, 77 kg, 177 cm male, BIS 50, `u_max = 106.0907`.
    pub fn reference() -> Self {
        Self::for_patient(
            &PatientDemographics::reference(),
            &BisParameters::default(),
            50.0,
            REFERENCE_U_MAX,
        )
        .expect("reference problem is well formed")
    }

    pub fn system(&self) -> &LtiSystem {
        &self.sys
    }

    pub fn x0(&self) -> &Vector4<f64> {
        &self.x0
    }

    pub fn equilibrium(&self) -> &EquilibriumState {
        &self.equilibrium
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    /// `(x_e1, x_e4)`.
    pub fn target_fast(&self) -> [f64; 2] {
        self.equilibrium.fast_target()
    }

    /// `C (x1, x4) − (x_e1, x_e4)` with `C = I₂`.
    pub fn fast_residual(&self, x: &Vector4<f64>) -> [f64; 2] {
        let target = self.target_fast();
        [x[0] - target[0], x[3] - target[1]]
    }
}

/// Piecewise-constant input: `levels[i]` holds on
/// `[breakpoints[i-1], breakpoints[i])`, the last level until `t_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct ControlSchedule {
    levels: Vec<f64>,
    breakpoints: Vec<f64>,
    t_f: f64,
}

#[derive(Serialize, Deserialize)]
struct RawSchedule {
    u_levels: Vec<f64>,
    breakpoints: Vec<f64>,
    t_f: f64,
}

impl TryFrom<RawSchedule> for ControlSchedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        ControlSchedule::new(raw.u_levels, raw.breakpoints, raw.t_f)
    }
}

impl From<ControlSchedule> for RawSchedule {
    fn from(s: ControlSchedule) -> Self {
        RawSchedule {
            u_levels: s.levels,
            breakpoints: s.breakpoints,
            t_f: s.t_f,
        }
    }
}

impl ControlSchedule {
    pub fn new(levels: Vec<f64>, breakpoints: Vec<f64>, t_f: f64) -> Result<Self> {
        let bad = |msg: String| Err(Error::Domain(format!("malformed schedule: {msg}")));
        if !(t_f.is_finite() && t_f >= 0.0) {
            return bad(format!("t_f must be >= 0, got {t_f}"));
        }
        if levels.len() != breakpoints.len() + 1 {
            return bad(format!(
                "{} levels need {} breakpoints, got {}",
                levels.len(),
                levels.len().saturating_sub(1),
                breakpoints.len()
            ));
        }
        if levels.iter().any(|u| !u.is_finite()) {
            return bad("levels must be finite".into());
        }
        if levels.windows(2).any(|w| w[0] == w[1]) {
            return bad("adjacent levels must differ".into());
        }
        let mut prev = 0.0;
        for &b in &breakpoints {
            if !(b > prev && b < t_f) {
                return bad(format!("breakpoint {b} is not strictly increasing inside (0, {t_f})"));
            }
            prev = b;
        }
        Ok(Self {
            levels,
            breakpoints,
            t_f,
        })
    }

    /// Builds a schedule from segment durations. Zero-length segments are
    /// dropped and equal neighbours merged.
    pub fn from_durations(levels: &[f64], durations: &[f64]) -> Result<Self> {
        if levels.len() != durations.len() || levels.is_empty() {
            return Err(Error::Domain("levels and durations must pair up".into()));
        }
        if durations.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::Domain("durations must be >= 0".into()));
        }
        let mut out_levels: Vec<f64> = Vec::new();
        let mut breakpoints = Vec::new();
        let mut t = 0.0;
        for (&u, &d) in levels.iter().zip(durations) {
            if d == 0.0 {
                continue;
            }
            match out_levels.last() {
                Some(&last) if last == u => {}
                Some(_) => {
                    breakpoints.push(t);
                    out_levels.push(u);
                }
                None => out_levels.push(u),
            }
            t += d;
        }
        if out_levels.is_empty() {
            out_levels.push(levels[0]);
        }
        Self::new(out_levels, breakpoints, t)
    }

    /// A single level held for `t_f`.
    pub fn constant(u: f64, t_f: f64) -> Result<Self> {
        Self::new(vec![u], Vec::new(), t_f)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    pub fn switch_count(&self) -> usize {
        self.breakpoints.len()
    }

    /// `(start, end, level)` for every segment.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let starts = std::iter::once(0.0).chain(self.breakpoints.iter().copied());
        let ends = self.breakpoints.iter().copied().chain(std::iter::once(self.t_f));
        starts
            .zip(ends)
            .zip(self.levels.iter().copied())
            .map(|((s, e), u)| (s, e, u))
    }

    /// Level in force at `t`; right-continuous at breakpoints.
    pub fn level_at(&self, t: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&b| b <= t);
        self.levels[k]
    }

    /// Every level is either 0 or `u_max`.
    pub fn is_bang_bang(&self, u_max: f64) -> bool {
        self.levels.iter().all(|&u| u == 0.0 || u == u_max)
    }
}
