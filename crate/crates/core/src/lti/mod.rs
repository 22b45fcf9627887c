//! Linear time-invariant kernel: `x' = A x + B u` with a 4-dimensional state.
//!
//! The system caches two real eigendecompositions at construction: one of
//! `A` and one of the augmented generator `[[A, B], [0, 0]]`. The second
//! turns constant-input propagation into a single 5x5 product without
//! inverting `A`.

mod expm;
mod ode;

pub use expm::{expm, expm_pade, real_eigenvalues, SpectralDecomposition, MAX_IMAGINARY, MIN_EIGEN_SEPARATION};
pub use ode::{
    integrate, integrate_until_sign_change, integrate_with_sign_event, OdeOptions, Trajectory, MIN_STEP,
};

use nalgebra::{DMatrix, Matrix4, Matrix5, Vector4, Vector5, SVD};

use crate::error::{Error, Result};

/// Relative singular-value cutoff for the controllability rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: Matrix4<f64>,
    b: Vector4<f64>,
    spectral: Option<SpectralDecomposition>,
    augmented: Option<SpectralDecomposition>,
    augmented_fixed: Option<FixedSpectral>,
}

/// Fixed-size copy of the augmented decomposition for allocation-free propagation.
#[derive(Debug, Clone, PartialEq)]
struct FixedSpectral {
    eigenvalues: Vector5<f64>,
    vectors: Matrix5<f64>,
    inverse: Matrix5<f64>,
}

impl LtiSystem {
    pub fn new(a: Matrix4<f64>, b: Vector4<f64>) -> Self {
        let a_dyn = DMatrix::from_iterator(4, 4, a.iter().copied());
        let spectral = SpectralDecomposition::new(&a_dyn);
        let augmented = SpectralDecomposition::new(&augmented_generator(&a, &b));
        let augmented_fixed = augmented.as_ref().map(|s| FixedSpectral {
            eigenvalues: Vector5::from_iterator(s.eigenvalues().iter().copied()),
            vectors: Matrix5::from_iterator(s.eigenvectors().iter().copied()),
            inverse: Matrix5::from_iterator(s.inverse_eigenvectors().iter().copied()),
        });
        Self {
            a,
            b,
            spectral,
            augmented,
            augmented_fixed,
        }
    }

    pub fn a(&self) -> &Matrix4<f64> {
        &self.a
    }

    pub fn b(&self) -> &Vector4<f64> {
        &self.b
    }

    /// Cached decomposition of `A`, if its spectrum is real and separated.
    pub fn spectral(&self) -> Option<&SpectralDecomposition> {
        self.spectral.as_ref()
    }

    /// Ascending real eigenvalues of `A`, if the spectral cache is populated.
    pub fn eigenvalues(&self) -> Option<[f64; 4]> {
        self.spectral.as_ref().map(|s| {
            let e = s.eigenvalues();
            [e[0], e[1], e[2], e[3]]
        })
    }

    pub fn has_real_spectrum(&self) -> bool {
        self.spectral.is_some()
    }

    pub fn vector_field(&self, x: &Vector4<f64>, u: f64) -> Vector4<f64> {
        self.a * x + self.b * u
    }

    /// `e^{A t}`: spectral route when cached, Padé otherwise.
    pub fn expm(&self, t: f64) -> Result<Matrix4<f64>> {
        if !t.is_finite() {
            return Err(Error::Domain(format!("time {t} is not finite")));
        }
        let e = match &self.spectral {
            Some(s) => s.exp(t),
            None => expm(&DMatrix::from_iterator(4, 4, self.a.iter().copied()), t)?,
        };
        Ok(Matrix4::from_iterator(e.iter().copied()))
    }

    /// Transition pair `(e^{A dt}, ∫₀^dt e^{A s} ds · B)` read off the
    /// exponential of the augmented generator.
    pub fn transition(&self, dt: f64) -> Result<(Matrix4<f64>, Vector4<f64>)> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(Error::Domain(format!("duration must be >= 0, got {dt}")));
        }
        let e = match &self.augmented {
            Some(s) => s.exp(dt),
            None => expm(&augmented_generator(&self.a, &self.b), dt)?,
        };
        let phi = Matrix4::from_fn(|i, j| e[(i, j)]);
        let gamma = Vector4::from_fn(|i, _| e[(i, 4)]);
        Ok((phi, gamma))
    }

    /// Exact state after holding the input at `u` for `dt`.
    pub fn propagate_constant(&self, x0: &Vector4<f64>, u: f64, dt: f64) -> Result<Vector4<f64>> {
        if !u.is_finite() || x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("state or input is not finite".into()));
        }
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(Error::Domain(format!("duration must be >= 0, got {dt}")));
        }
        if dt == 0.0 {
            return Ok(*x0);
        }
        if let Some(fs) = &self.augmented_fixed {
            // exp(M dt) [x0; u] with M = [[A, B], [0, 0]]
            let z = Vector5::new(x0[0], x0[1], x0[2], x0[3], u);
            let mut modal = fs.inverse * z;
            for k in 0..5 {
                modal[k] *= (fs.eigenvalues[k] * dt).exp();
            }
            let z = fs.vectors * modal;
            return Ok(Vector4::new(z[0], z[1], z[2], z[3]));
        }
        let (phi, gamma) = self.transition(dt)?;
        Ok(phi * x0 + gamma * u)
    }

    /// `[B, AB, A²B, A³B]`.
    pub fn controllability_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        let mut col = self.b;
        for k in 0..4 {
            m.set_column(k, &col);
            col = self.a * col;
        }
        m
    }

    pub fn kalman_rank(&self) -> usize {
        kalman_rank(self)
    }
}

fn augmented_generator(a: &Matrix4<f64>, b: &Vector4<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(5, 5);
    m.view_mut((0, 0), (4, 4)).copy_from(a);
    m.view_mut((0, 4), (4, 1)).copy_from(b);
    m
}

/// Numerical rank of the controllability matrix, cutoff `1e-10·σ_max`.
pub fn kalman_rank(sys: &LtiSystem) -> usize {
    let svd = SVD::new(sys.controllability_matrix(), false, false);
    let sigma_max = svd.singular_values.max();
    if sigma_max == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > RANK_TOLERANCE * sigma_max)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patient::{assemble_system, equilibrium, schnider_parameters, PatientDemographics};

    fn reference() -> LtiSystem {
        assemble_system(&schnider_parameters(&PatientDemographics::reference()).unwrap()).unwrap()
    }

    #[test]
    fn reference_spectrum() {
        let sys = reference();
        let ev = sys.eigenvalues().expect("real spectrum");
        let expected = [-0.9419, -0.4560, -0.0451, -0.0024];
        for (got, want) in ev.iter().zip(expected) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
        let dec = sys.spectral().unwrap();
        let a = DMatrix::from_iterator(4, 4, sys.a().iter().copied());
        assert!(dec.reconstruction_error(&a) < 1e-10);
    }

    #[test]
    fn reference_eigenvectors_match_published_columns() {
        // unit-norm eigenvector columns, up to sign; ordered like our ascending eigenvalues
        let published = [
            [0.9085, -0.3141, -0.1898, -0.1997], // -0.9419
            [0.0, 0.0, 0.0, 1.0],                // -0.4560
            [0.0720, 0.9377, -0.3395, 0.0187],   // -0.0451
            [-0.0058, -0.0266, -0.9996, -0.0014], // -0.0024
        ];
        let v = reference().spectral().unwrap().eigenvectors().clone();
        for (k, col) in published.iter().enumerate() {
            let sign = if v.column(k).dot(&nalgebra::DVector::from_row_slice(col)) < 0.0 { -1.0 } else { 1.0 };
            for i in 0..4 {
                assert!((sign * v[(i, k)] - col[i]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn equilibrium_is_invariant_under_propagation() {
        let p = schnider_parameters(&PatientDemographics::reference()).unwrap();
        let sys = assemble_system(&p).unwrap();
        let eq = equilibrium(&p, 3.4);
        for dt in [0.0, 0.1, 1.0, 30.0, 500.0] {
            let x = sys.propagate_constant(&eq.x_e, eq.u_e, dt).unwrap();
            assert!((x - eq.x_e).amax() < 1e-9 * eq.x_e.amax(), "dt = {dt}");
        }
    }

    #[test]
    fn rest_stays_at_rest() {
        let sys = reference();
        for dt in [0.5, 3.0, 100.0] {
            assert_eq!(sys.propagate_constant(&Vector4::zeros(), 0.0, dt).unwrap(), Vector4::zeros());
        }
    }

    #[test]
    fn published_schedule_reaches_target() {
        let sys = reference();
        let x_c = sys.propagate_constant(&Vector4::zeros(), 106.0907, 0.5467).unwrap();
        let x_f = sys.propagate_constant(&x_c, 0.0, 1.2930).unwrap();
        assert!((x_f[0] - 14.518).abs() < 1e-3);
        assert!((x_f[3] - 3.4).abs() < 1e-3);
    }

    #[test]
    fn negative_duration_is_rejected() {
        assert!(matches!(
            reference().propagate_constant(&Vector4::zeros(), 1.0, -0.1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn kalman_ranks() {
        assert_eq!(reference().kalman_rank(), 4);
        let trivial = LtiSystem::new(Matrix4::zeros(), Vector4::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!(kalman_rank(&trivial), 1);
        assert!(!trivial.has_real_spectrum());
        // cutting blood <-> fat exchange leaves x3 unreachable
        let mut a = *reference().a();
        a[(2, 0)] = 0.0;
        a[(0, 2)] = 0.0;
        let cut = LtiSystem::new(a, Vector4::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!(kalman_rank(&cut), 3);
    }

    #[test]
    fn fallback_propagation_without_spectral_cache() {
        // A = 0: x(t) = x0 + B u t
        let sys = LtiSystem::new(Matrix4::zeros(), Vector4::new(1.0, 0.0, 0.0, 0.0));
        let x = sys.propagate_constant(&Vector4::new(1.0, 2.0, 3.0, 4.0), 2.0, 1.5).unwrap();
        assert_eq!(x, Vector4::new(4.0, 2.0, 3.0, 4.0));
    }
}
