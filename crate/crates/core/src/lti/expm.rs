//! Matrix exponential.
//!
//! Two routes: an eigendecomposition `V diag(e^{λt}) V⁻¹`, valid when the
//! spectrum is real and well separated, and degree-13 Padé approximation
//! with scaling and squaring for everything else.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};

/// Eigenvalues closer than this are treated as repeated; the spectral route is then refused.
pub const MIN_EIGEN_SEPARATION: f64 = 1e-6;
/// Largest imaginary part still accepted as a real eigenvalue.
pub const MAX_IMAGINARY: f64 = 1e-10;
const MAX_RECONSTRUCTION_ERROR: f64 = 1e-10;

/// Real diagonalization `A = V diag(λ) V⁻¹` with ascending eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: DVector<f64>,
    vectors: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl SpectralDecomposition {
    /// Returns `None` when the spectrum is complex, nearly repeated, or the
    /// reconstruction misses `a` by more than 1e-10 in the max norm.
    pub fn new(a: &DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        if n == 0 || n != a.ncols() || a.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut values = real_eigenvalues(a)?;
        values.sort_by(|x, y| x.total_cmp(y));
        if values
            .windows(2)
            .any(|w| (w[1] - w[0]).abs() <= MIN_EIGEN_SEPARATION)
        {
            return None;
        }

        let mut vectors = DMatrix::zeros(n, n);
        for (k, &lambda) in values.iter().enumerate() {
            let shifted = a - DMatrix::identity(n, n) * lambda;
            let v = null_vector(shifted)?;
            vectors.set_column(k, &v);
        }
        let inverse = vectors.clone().try_inverse()?;
        let decomposition = Self {
            eigenvalues: DVector::from_vec(values),
            vectors,
            inverse,
        };
        if decomposition.reconstruction_error(a) < MAX_RECONSTRUCTION_ERROR {
            Some(decomposition)
        } else {
            None
        }
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Unit-norm eigenvectors as columns.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn inverse_eigenvectors(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// `e^{A t}` as `V diag(e^{λ t}) V⁻¹`.
    pub fn exp(&self, t: f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (k, lambda) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(k).scale_mut((lambda * t).exp());
        }
        scaled * &self.inverse
    }

    /// `‖V diag(λ) V⁻¹ − A‖∞` (entrywise max).
    pub fn reconstruction_error(&self, a: &DMatrix<f64>) -> f64 {
        let mut scaled = self.vectors.clone();
        for (k, lambda) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(k).scale_mut(*lambda);
        }
        (scaled * &self.inverse - a).amax()
    }
}

/// Eigenvalues of a square matrix if all of them are real.
pub fn real_eigenvalues(a: &DMatrix<f64>) -> Option<Vec<f64>> {
    let eig = a.clone().complex_eigenvalues();
    if eig.iter().any(|z| !z.re.is_finite() || z.im.abs() >= MAX_IMAGINARY) {
        return None;
    }
    Some(eig.iter().map(|z| z.re).collect())
}

/// Right singular vector of the smallest singular value, sign fixed so the
/// largest component is positive.
fn null_vector(m: DMatrix<f64>) -> Option<DVector<f64>> {
    let svd = SVD::new(m, false, true);
    let v_t = svd.v_t?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))?;
    let mut v: DVector<f64> = v_t.row(k).transpose();
    let pivot = v.iamax();
    if v[pivot] < 0.0 {
        v.neg_mut();
    }
    Some(v)
}

/// `e^{A t}` for any finite square matrix, by Padé scaling and squaring.
pub fn expm(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Domain(format!(
            "expm needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !t.is_finite() || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("expm input is not finite".into()));
    }
    if t == 0.0 {
        return Ok(DMatrix::identity(a.nrows(), a.ncols()));
    }
    Ok(expm_pade(&(a * t)))
}

/// Degree-13 Padé approximant with scaling and squaring (Higham 2005).
pub fn expm_pade(a: &DMatrix<f64>) -> DMatrix<f64> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA_13: f64 = 5.371920351148152;

    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > THETA_13 {
        (norm1 / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-squarings);

    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9])
        + &a6 * B[7]
        + &a4 * B[5]
        + &a2 * B[3]
        + &ident * B[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8])
        + &a6 * B[6]
        + &a4 * B[4]
        + &a2 * B[2]
        + &ident * B[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular after scaling");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_is_identity() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 4.0]);
        assert_eq!(expm(&a, 0.0).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn diagonal_matrix() {
        let d = [-0.3, 0.0, 1.7, -12.0];
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&d));
        let e = expm(&a, 0.8).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { (d[i] * 0.8).exp() } else { 0.0 };
                assert!((e[(i, j)] - want).abs() <= 1e-13 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn nilpotent_matrix_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = expm(&a, 3.0).unwrap();
        assert_eq!(e, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 0.0, 1.0]));
    }

    #[test]
    fn rotation_generator_has_complex_spectrum() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(real_eigenvalues(&a).is_none());
        assert!(SpectralDecomposition::new(&a).is_none());
        let e = expm(&a, std::f64::consts::FRAC_PI_2).unwrap();
        assert!((e[(1, 0)] - 1.0).abs() < 1e-14 && e[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn repeated_eigenvalues_refuse_spectral_route() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        assert!(SpectralDecomposition::new(&a).is_none());
    }

    #[test]
    fn rejects_non_finite() {
        let a = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(expm(&a, 1.0), Err(Error::Domain(_))));
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(expm(&a, 1.0).is_err());
    }

    #[test]
    fn large_norm_uses_squaring() {
        let a = DMatrix::from_row_slice(1, 1, &[-40.0]);
        let e = expm(&a, 1.0).unwrap();
        assert!(((e[(0, 0)] - (-40f64).exp()) / (-40f64).exp()).abs() < 1e-12);
    }
}
