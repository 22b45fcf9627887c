//! Indirect method: Pontryagin extremals and shooting.
//!
//! Along an extremal the state and costate obey
//!
//! ```text
//! x' = A x + B u,   ψ' = −Aᵀ ψ,   u = bang(ψ1),
//! ```
//!
//! and the free final time adds the transversality condition `H(t_f) = 0`
//! with `H = 1 + ψᵀ(A x + B u)`. The unknowns `(ψ(0), t_f)` are found by
//! damped least squares on the three residuals
//! `(x1(t_f) − x_e1, x4(t_f) − x_e4, H(t_f))`.
//!
//! The extremal is integrated segment by segment: the control is frozen on
//! each segment and the integrator restarts at every sign change of `ψ1`,
//! so the bang-bang discontinuities are resolved exactly.

use nalgebra::{DVector, Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lti::{integrate_until_sign_change, OdeOptions, Trajectory};
use crate::problem::{ControlSchedule, TimeOptimalProblem};

/// Hard cap on switches per extremal; a real spectrum allows at most three.
const MAX_SEGMENTS: usize = 64;

/// Minimum-principle control law: `0` when `ψ1 > 0`, `u_max` otherwise.
pub fn bang_control(psi1: f64, u_max: f64) -> f64 {
    if psi1 > 0.0 {
        0.0
    } else {
        u_max
    }
}

/// Block matrix `[[A, 0], [0, −Aᵀ]]` of the joint state/costate dynamics.
pub fn augmented_matrix(prob: &TimeOptimalProblem) -> SMatrix<f64, 8, 8> {
    let a = prob.system().a();
    let mut m = SMatrix::<f64, 8, 8>::zeros();
    m.fixed_view_mut::<4, 4>(0, 0).copy_from(a);
    m.fixed_view_mut::<4, 4>(4, 4).copy_from(&(-a.transpose()));
    m
}

/// `z' = A* z + B* u` for `z = (x, ψ)` with `u = bang(ψ1)`.
pub fn augmented_dynamics(prob: &TimeOptimalProblem, z: &SVector<f64, 8>) -> SVector<f64, 8> {
    let u = bang_control(z[4], prob.u_max());
    augmented_field(prob.system().a(), prob.system().b(), z, u)
}

fn augmented_field(a: &Matrix4<f64>, b: &Vector4<f64>, z: &SVector<f64, 8>, u: f64) -> SVector<f64, 8> {
    let x = z.fixed_rows::<4>(0);
    let psi = z.fixed_rows::<4>(4);
    let dx = a * x + b * u;
    let dpsi = -(a.transpose() * psi);
    SVector::<f64, 8>::from_fn(|i, _| if i < 4 { dx[i] } else { dpsi[i - 4] })
}

/// `1 + ψᵀ(A x + B u)`.
pub fn hamiltonian(prob: &TimeOptimalProblem, x: &Vector4<f64>, u: f64, psi: &Vector4<f64>) -> f64 {
    1.0 + psi.dot(&prob.system().vector_field(x, u))
}

/// An integrated extremal: 8-dimensional samples `(x, ψ)` with the control
/// in force at each sample, and the `ψ1` sign changes.
#[derive(Debug, Clone)]
pub struct Extremal {
    pub trajectory: Trajectory,
    pub switch_times: Vec<f64>,
    /// Control on each segment, one more entry than `switch_times`.
    pub levels: Vec<f64>,
}

impl Extremal {
    pub fn final_state(&self) -> (Vector4<f64>, Vector4<f64>) {
        let z = self.trajectory.last_state().expect("extremal has samples");
        split(z)
    }

    pub fn final_control(&self) -> f64 {
        *self.levels.last().expect("extremal has a segment")
    }

    /// `H` at every sample.
    pub fn hamiltonian_profile(&self, prob: &TimeOptimalProblem) -> Vec<f64> {
        self.trajectory
            .states
            .iter()
            .zip(&self.trajectory.controls)
            .map(|(z, &u)| {
                let (x, psi) = split(z);
                hamiltonian(prob, &x, u, &psi)
            })
            .collect()
    }
}

fn split(z: &DVector<f64>) -> (Vector4<f64>, Vector4<f64>) {
    (
        Vector4::new(z[0], z[1], z[2], z[3]),
        Vector4::new(z[4], z[5], z[6], z[7]),
    )
}

/// Integrates `(x, ψ)` from `(x0, ψ0)` over `[0, t_f]`, restarting at each
/// sign change of `ψ1`.
pub fn integrate_extremal(
    prob: &TimeOptimalProblem,
    psi0: &Vector4<f64>,
    t_f: f64,
    opts: &OdeOptions,
) -> Result<Extremal> {
    if !(t_f.is_finite() && t_f > 0.0) {
        return Err(Error::Domain(format!("t_f must be positive, got {t_f}")));
    }
    if psi0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("costate is not finite".into()));
    }
    let a = *prob.system().a();
    let b = *prob.system().b();
    let x0 = prob.x0();
    let mut z = DVector::from_iterator(8, x0.iter().chain(psi0.iter()).copied());
    let mut t = 0.0;
    let mut trajectory = Trajectory::default();
    let mut switch_times = Vec::new();
    let mut levels = Vec::new();

    for _ in 0..MAX_SEGMENTS {
        let u = bang_control(z[4], prob.u_max());
        levels.push(u);
        let field = |_t: f64, z: &DVector<f64>| {
            let zs = SVector::<f64, 8>::from_column_slice(z.as_slice());
            DVector::from_column_slice(augmented_field(&a, &b, &zs, u).as_slice())
        };
        let (segment, event) = integrate_until_sign_change(field, &z, t, t_f, 4, opts)?;
        let segment = segment.with_constant_control(u);
        z = segment.last_state().expect("segment has samples").clone();
        trajectory.append(segment);
        match event {
            Some(te) if te < t_f => {
                switch_times.push(te);
                t = te;
            }
            _ => {
                return Ok(Extremal {
                    trajectory,
                    switch_times,
                    levels,
                })
            }
        }
    }
    Err(Error::Domain(format!("costate switched more than {MAX_SEGMENTS} times")))
}

/// `(x1(t_f) − x_e1, x4(t_f) − x_e4, H(t_f))`.
pub fn shooting_residual(
    prob: &TimeOptimalProblem,
    psi0: &Vector4<f64>,
    t_f: f64,
    opts: &OdeOptions,
) -> Result<Vector3<f64>> {
    let ext = integrate_extremal(prob, psi0, t_f, opts)?;
    Ok(residual_of(prob, &ext))
}

fn residual_of(prob: &TimeOptimalProblem, ext: &Extremal) -> Vector3<f64> {
    let (x, psi) = ext.final_state();
    let fast = prob.fast_residual(&x);
    Vector3::new(fast[0], fast[1], hamiltonian(prob, &x, ext.final_control(), &psi))
}

/// Starting point for the root search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seed {
    pub psi0: Vector4<f64>,
    pub t_f: f64,
}

/// `ψ0 ∈ {−0.05, −0.01, 0.01, 0.05}⁴ × t_f ∈ {1, 2, 4}`, lexicographic with
/// `t_f` outermost.
pub fn default_seed_grid() -> Vec<Seed> {
    const LEVELS: [f64; 4] = [-0.05, -0.01, 0.01, 0.05];
    let mut seeds = Vec::with_capacity(3 * 256);
    for t_f in [1.0, 2.0, 4.0] {
        for i in 0..256 {
            let psi0 = Vector4::from_fn(|k, _| LEVELS[(i >> (2 * (3 - k))) & 3]);
            seeds.push(Seed { psi0, t_f });
        }
    }
    seeds
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingOptions {
    /// Accept when the Euclidean residual norm drops below this.
    pub tol: f64,
    pub max_iterations: usize,
    /// Relative central-difference step.
    pub fd_step: f64,
    pub ode: OdeOptions,
    /// Seeds evaluated per parallel batch; the first converged seed of the
    /// earliest batch wins.
    pub batch_size: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iterations: 100,
            fd_step: 1e-7,
            ode: OdeOptions::default(),
            batch_size: 16,
        }
    }
}

/// A converged PMP extremal.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalCertificate {
    pub psi0: Vector4<f64>,
    pub t_f: f64,
    pub switch_times: Vec<f64>,
    pub residual_norm: f64,
    pub schedule: ControlSchedule,
    /// Position of the winning seed in the seed list.
    pub seed_index: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
struct Outcome {
    p: SVector<f64, 5>,
    norm: f64,
    iterations: usize,
}

fn unpack(p: &SVector<f64, 5>) -> (Vector4<f64>, f64) {
    (Vector4::new(p[0], p[1], p[2], p[3]), p[4])
}

fn residual_at(prob: &TimeOptimalProblem, p: &SVector<f64, 5>, ode: &OdeOptions) -> Option<Vector3<f64>> {
    let (psi0, t_f) = unpack(p);
    shooting_residual(prob, &psi0, t_f, ode)
        .ok()
        .filter(|r| r.iter().all(|v| v.is_finite()))
}

fn jacobian(prob: &TimeOptimalProblem, p: &SVector<f64, 5>, opts: &ShootingOptions) -> Option<SMatrix<f64, 3, 5>> {
    let mut jac = SMatrix::<f64, 3, 5>::zeros();
    for j in 0..5 {
        let h = opts.fd_step * p[j].abs().max(1.0);
        let mut hi = *p;
        let mut lo = *p;
        hi[j] += h;
        lo[j] -= h;
        if j == 4 && lo[4] <= 0.0 {
            lo[4] = p[4];
        }
        let rp = residual_at(prob, &hi, &opts.ode)?;
        let rm = residual_at(prob, &lo, &opts.ode)?;
        jac.set_column(j, &((rp - rm) / (hi[j] - lo[j])));
    }
    Some(jac)
}

/// Levenberg–Marquardt on the underdetermined 3×5 system, minimum-norm steps.
fn levenberg_marquardt(prob: &TimeOptimalProblem, seed: &Seed, opts: &ShootingOptions) -> Outcome {
    let mut p = SVector::<f64, 5>::new(seed.psi0[0], seed.psi0[1], seed.psi0[2], seed.psi0[3], seed.t_f);
    let Some(mut r) = residual_at(prob, &p, &opts.ode) else {
        return Outcome {
            p,
            norm: f64::INFINITY,
            iterations: 0,
        };
    };
    let mut mu = 1e-3;
    let mut iterations = 0;
    // polish past the acceptance threshold while it is cheap to do so
    let target = 1e-2 * opts.tol;
    while iterations < opts.max_iterations && r.norm() >= target {
        iterations += 1;
        let Some(jac) = jacobian(prob, &p, opts) else { break };
        let gram = jac * jac.transpose();
        let mut accepted = false;
        for _ in 0..30 {
            let Some(inv) = (gram + Matrix3::identity() * mu).try_inverse() else {
                mu *= 4.0;
                continue;
            };
            let trial = p - jac.transpose() * (inv * r);
            if trial[4] > 0.0 {
                if let Some(rt) = residual_at(prob, &trial, &opts.ode) {
                    if rt.norm() < r.norm() {
                        p = trial;
                        r = rt;
                        mu = (mu / 5.0).max(1e-16);
                        accepted = true;
                        break;
                    }
                }
            }
            mu *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    Outcome {
        p,
        norm: r.norm(),
        iterations,
    }
}

/// Runs damped least squares from each seed in order and returns the first
/// certificate whose residual norm is below `opts.tol`.
pub fn solve_shooting(
    prob: &TimeOptimalProblem,
    seeds: &[Seed],
    opts: &ShootingOptions,
) -> Result<ExtremalCertificate> {
    if seeds.is_empty() {
        return Err(Error::Domain("no shooting seeds given".into()));
    }
    let mut best_residual = f64::INFINITY;
    let mut tried = 0;
    for (batch_index, batch) in seeds.chunks(opts.batch_size.max(1)).enumerate() {
        let outcomes: Vec<Outcome> = batch
            .par_iter()
            .map(|seed| levenberg_marquardt(prob, seed, opts))
            .collect();
        tried += batch.len();
        for (k, outcome) in outcomes.into_iter().enumerate() {
            best_residual = best_residual.min(outcome.norm);
            if outcome.norm < opts.tol {
                let seed_index = batch_index * opts.batch_size.max(1) + k;
                if let Ok(cert) = certify(prob, &outcome, seed_index, opts) {
                    return Ok(cert);
                }
            }
        }
    }
    Err(Error::NoConvergence {
        best_residual,
        seeds_tried: tried,
    })
}

fn certify(
    prob: &TimeOptimalProblem,
    outcome: &Outcome,
    seed_index: usize,
    opts: &ShootingOptions,
) -> Result<ExtremalCertificate> {
    let (psi0, t_f) = unpack(&outcome.p);
    let ext = integrate_extremal(prob, &psi0, t_f, &opts.ode)?;
    let durations: Vec<f64> = std::iter::once(0.0)
        .chain(ext.switch_times.iter().copied())
        .zip(ext.switch_times.iter().copied().chain(std::iter::once(t_f)))
        .map(|(s, e)| e - s)
        .collect();
    let schedule = ControlSchedule::from_durations(&ext.levels, &durations)?;
    let residual_norm = residual_of(prob, &ext).norm();
    Ok(ExtremalCertificate {
        psi0,
        t_f,
        switch_times: ext.switch_times,
        residual_norm,
        schedule,
        seed_index,
        iterations: outcome.iterations,
    })
}
