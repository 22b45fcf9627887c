//! Patient-specific PK/PD model.
//!
//! Four compartments (blood, muscle, fat, effect site) with rate constants
//! taken from the Schnider regression. Lean body mass follows the James
//! formula. The depth of anesthesia is read from the effect-site level
//! through the BIS sigmoid.
//!
//! Units: masses in mg, time in min, infusion in mg/min, `v1` in L. The BIS
//! map is applied to `x4` directly, so the effect-site mass and the `ec50`
//! concentration share a numeric scale.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::LtiSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

/// Demographics in years, kg and cm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientDemographics {
    pub sex: Sex,
    pub age: f64,
    pub weight: f64,
    pub height: f64,
}

impl PatientDemographics {
    pub fn new(sex: Sex, age: f64, weight: f64, height: f64) -> Result<Self> {
        let demo = Self {
            sex,
            age,
            weight,
            height,
        };
        demo.validate()?;
        Ok(demo)
    }

    /// The 53 year old, 77 kg, 177 cm male used as the worked example.
    pub fn reference() -> Self {
        Self {
            sex: Sex::Male,
            age: 53.0,
            weight: 77.0,
            height: 177.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("age", self.age),
            ("weight", self.weight),
            ("height", self.height),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Rate constants (1/min) and central volume (L).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkPdParameters {
    pub a10: f64,
    pub a12: f64,
    pub a13: f64,
    pub a21: f64,
    pub a31: f64,
    pub ae0: f64,
    pub v1: f64,
}

impl PkPdParameters {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in self.named() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::ParameterOutOfRange { name, value });
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("a10", self.a10),
            ("a12", self.a12),
            ("a13", self.a13),
            ("a21", self.a21),
            ("a31", self.a31),
            ("ae0", self.ae0),
            ("v1", self.v1),
        ]
    }
}

/// Parameters of the BIS sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisParameters {
    pub bis0: f64,
    pub ec50: f64,
    pub gamma: f64,
}

impl Default for BisParameters {
    fn default() -> Self {
        Self {
            bis0: 100.0,
            ec50: 3.4,
            gamma: 3.0,
        }
    }
}

impl BisParameters {
    pub fn validate(&self) -> Result<()> {
        if self.bis0 > 0.0 && self.ec50 > 0.0 && self.gamma > 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "BIS parameters must be positive: {self:?}"
            )))
        }
    }
}

/// Steady state holding the effect site at a given level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumState {
    pub x_e: Vector4<f64>,
    pub u_e: f64,
}

impl EquilibriumState {
    /// The (x1, x4) pair that defines induction completion.
    pub fn fast_target(&self) -> [f64; 2] {
        [self.x_e[0], self.x_e[3]]
    }
}

/// James formula, kg. Weight in kg, height in cm.
pub fn lean_body_mass(sex: Sex, weight: f64, height: f64) -> Result<f64> {
    if !(weight.is_finite() && weight > 0.0 && height.is_finite() && height > 0.0) {
        return Err(Error::Domain(format!(
            "weight and height must be positive (weight {weight}, height {height})"
        )));
    }
    let ratio = weight / height;
    let lbm = match sex {
        Sex::Male => 1.1 * weight - 128.0 * ratio * ratio,
        Sex::Female => 1.07 * weight - 148.0 * ratio * ratio,
    };
    if lbm <= 0.0 {
        return Err(Error::DegenerateDemographics { lbm });
    }
    Ok(lbm)
}

pub fn schnider_parameters(demo: &PatientDemographics) -> Result<PkPdParameters> {
    demo.validate()?;
    let lbm = lean_body_mass(demo.sex, demo.weight, demo.height)?;
    let age = demo.age - 53.0;
    let params = PkPdParameters {
        a10: 0.443 + 0.0107 * (demo.weight - 77.0) - 0.0159 * (lbm - 59.0)
            + 0.0062 * (demo.height - 177.0),
        a12: 0.302 - 0.0056 * age,
        a13: 0.196,
        a21: (1.29 - 0.024 * age) / (18.9 - 0.391 * age),
        a31: 0.0035,
        ae0: 0.456,
        v1: 4.27,
    };
    params.validate()?;
    Ok(params)
}

/// Builds `x' = A x + B u` for the four compartments.
pub fn assemble_system(p: &PkPdParameters) -> Result<LtiSystem> {
    p.validate()?;
    #[rustfmt::skip]
    let a = Matrix4::new(
        -(p.a10 + p.a12 + p.a13), p.a21,  p.a31,  0.0,
        p.a12,                    -p.a21, 0.0,    0.0,
        p.a13,                    0.0,    -p.a31, 0.0,
        p.ae0 / p.v1,             0.0,    0.0,    -p.ae0,
    );
    Ok(LtiSystem::new(a, Vector4::new(1.0, 0.0, 0.0, 0.0)))
}

/// BIS of an effect-site level. Strictly decreasing in `x4`.
pub fn bis(x4: f64, bp: &BisParameters) -> Result<f64> {
    if !(x4 >= 0.0) {
        return Err(Error::Domain(format!("effect-site level must be >= 0, got {x4}")));
    }
    let num = x4.powf(bp.gamma);
    let den = num + bp.ec50.powf(bp.gamma);
    Ok(bp.bis0 * (1.0 - num / den))
}

/// Effect-site level producing `target_bis`.
pub fn bis_inverse(target_bis: f64, bp: &BisParameters) -> Result<f64> {
    if !(target_bis > 0.0 && target_bis < bp.bis0) {
        return Err(Error::Domain(format!(
            "BIS target must lie in (0, {}), got {target_bis}",
            bp.bis0
        )));
    }
    Ok(bp.ec50 * ((bp.bis0 - target_bis) / target_bis).powf(1.0 / bp.gamma))
}

/// Steady state with `x4 = effect_level`, and its maintenance infusion.
pub fn equilibrium(p: &PkPdParameters, effect_level: f64) -> EquilibriumState {
    let x1 = p.v1 * effect_level;
    EquilibriumState {
        x_e: Vector4::new(x1, p.a12 * x1 / p.a21, p.a13 * x1 / p.a31, effect_level),
        u_e: p.a10 * x1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn reference_params() -> PkPdParameters {
        schnider_parameters(&PatientDemographics::reference()).unwrap()
    }

    #[test]
    fn lbm_direct_evaluation() {
        // 1.1*77 - 128*(77/177)^2 and 1.07*77 - 148*(77/177)^2
        assert_abs_diff_eq!(
            lean_body_mass(Sex::Male, 77.0, 177.0).unwrap(),
            60.476054135146356,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            lean_body_mass(Sex::Female, 77.0, 177.0).unwrap(),
            54.38106259376297,
            epsilon = 1e-12
        );
    }

    #[test]
    fn lbm_thin_limit() {
        let w = 1e-3;
        let lbm = lean_body_mass(Sex::Male, w, 1e6).unwrap();
        assert_abs_diff_eq!(lbm, 1.1 * w, epsilon = 1e-15);
    }

    #[test]
    fn lbm_rejects_bad_input() {
        assert!(matches!(
            lean_body_mass(Sex::Male, 0.0, 177.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            lean_body_mass(Sex::Female, 70.0, -1.0),
            Err(Error::Domain(_))
        ));
        // quadratic term dominates for an extreme weight/height ratio
        assert!(matches!(
            lean_body_mass(Sex::Male, 300.0, 120.0),
            Err(Error::DegenerateDemographics { .. })
        ));
    }

    #[test]
    fn schnider_reference_patient() {
        let p = reference_params();
        assert_abs_diff_eq!(p.a10, 0.4195, epsilon = 1e-4);
        assert_abs_diff_eq!(p.a12, 0.302, epsilon = 1e-15);
        assert_abs_diff_eq!(p.a21, 1.29 / 18.9, epsilon = 1e-15);
        assert_abs_diff_eq!(p.a21, 0.0683, epsilon = 1e-4);
        assert_eq!((p.a13, p.a31, p.ae0, p.v1), (0.196, 0.0035, 0.456, 4.27));
    }

    #[test]
    fn schnider_out_of_range() {
        // a12 = 0.302 - 0.0056 (age - 53) turns negative past age ~107
        let demo = PatientDemographics::new(Sex::Male, 120.0, 77.0, 177.0).unwrap();
        assert!(matches!(
            schnider_parameters(&demo),
            Err(Error::ParameterOutOfRange { name: "a12", .. })
        ));
    }

    #[test]
    fn assembled_matrix_structure() {
        let sys = assemble_system(&reference_params()).unwrap();
        let a = sys.a();
        #[rustfmt::skip]
        let expected = [
            -0.9175, 0.0683, 0.0035, 0.0,
            0.3020, -0.0683, 0.0, 0.0,
            0.1960, 0.0, -0.0035, 0.0,
            0.1068, 0.0, 0.0, -0.4560,
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(a[(i, j)], expected[4 * i + j], epsilon = 1e-4);
                if i == j {
                    assert!(a[(i, j)] < 0.0);
                } else {
                    assert!(a[(i, j)] >= 0.0);
                }
            }
        }
        assert_abs_diff_eq!(a[(3, 0)], 0.456 / 4.27, epsilon = 1e-15);
        assert_eq!(sys.b(), &Vector4::new(1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn bis_values() {
        let bp = BisParameters::default();
        assert_eq!(bis(0.0, &bp).unwrap(), 100.0);
        assert_abs_diff_eq!(bis(3.4, &bp).unwrap(), 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bis(6.8, &bp).unwrap(), 100.0 / 9.0, epsilon = 1e-12);
        assert!(bis(-1e-9, &bp).is_err());
    }

    #[test]
    fn bis_inverse_values() {
        let bp = BisParameters::default();
        assert_abs_diff_eq!(bis_inverse(50.0, &bp).unwrap(), 3.4, epsilon = 1e-15);
        assert_abs_diff_eq!(bis_inverse(100.0 / 9.0, &bp).unwrap(), 6.8, epsilon = 1e-12);
        for b in [10.0, 30.0, 50.0, 70.0, 90.0] {
            let back = bis(bis_inverse(b, &bp).unwrap(), &bp).unwrap();
            assert!(((back - b) / b).abs() < 1e-12);
        }
        assert!(bis_inverse(0.0, &bp).is_err());
        assert!(bis_inverse(100.0, &bp).is_err());
    }

    #[test]
    fn reference_equilibrium() {
        let eq = equilibrium(&reference_params(), 3.4);
        let expected = [14.518, 64.2371, 813.008, 3.4];
        for (got, want) in eq.x_e.iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-3);
        }
        assert_abs_diff_eq!(eq.u_e, 6.0907, epsilon = 1e-4);
        assert_eq!(eq.fast_target(), [eq.x_e[0], 3.4]);
    }

    #[test]
    fn equilibrium_is_homogeneous() {
        let eq = equilibrium(&reference_params(), 0.0);
        assert_eq!(eq.x_e, Vector4::zeros());
        assert_eq!(eq.u_e, 0.0);
    }

    #[test]
    fn equilibrium_residual_vanishes() {
        let p = reference_params();
        let sys = assemble_system(&p).unwrap();
        let eq = equilibrium(&p, 3.4);
        let r = sys.a() * eq.x_e + sys.b() * eq.u_e;
        assert!(r.amax() < 1e-12);
    }
}
