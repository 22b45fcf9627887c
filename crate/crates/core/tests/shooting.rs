use induction_core::lti::OdeOptions;
use induction_core::problem::REFERENCE_U_MAX;
use induction_core::shooting::{
    default_seed_grid, hamiltonian, integrate_extremal, shooting_residual, solve_shooting, Seed, ShootingOptions,
};
use induction_core::strategy::schedule_endpoint;
use induction_core::{Error, TimeOptimalProblem};
use nalgebra::Vector4;

fn certificate() -> induction_core::shooting::ExtremalCertificate {
    solve_shooting(&TimeOptimalProblem::reference(), &default_seed_grid(), &ShootingOptions::default()).unwrap()
}

#[test]
fn published_costate_is_not_a_root() {
    // H is conserved and x(0) = 0, so H(t_f) = 1 + psi1(0) u_max for any
    // costate starting with psi1 < 0; the published values give 0.1937.
    let prob = TimeOptimalProblem::reference();
    let psi0 = Vector4::new(-0.0076, 0.0031, -0.0393, -0.0374);
    let r = shooting_residual(&prob, &psi0, 1.8397, &OdeOptions::default()).unwrap();
    assert!((r[2] - (1.0 - 0.0076 * REFERENCE_U_MAX)).abs() < 1e-9);
    assert!((r[0] - 18.696).abs() < 1e-2, "{r:?}");
    assert!((r[1] - 2.674).abs() < 1e-2, "{r:?}");
    let ext = integrate_extremal(&prob, &psi0, 1.8397, &OdeOptions::default()).unwrap();
    assert_eq!(ext.switch_times.len(), 1);
    assert!((ext.switch_times[0] - 1.0037).abs() < 1e-3);
}

#[test]
fn every_root_pins_the_first_costate() {
    let cert = certificate();
    assert!((cert.psi0[0] + 1.0 / REFERENCE_U_MAX).abs() < 1e-8);
}

#[test]
fn grid_certificate() {
    let cert = certificate();
    assert!(cert.residual_norm < 1e-8);
    assert!((cert.t_f - 1.8397).abs() < 1e-3);
    assert_eq!(cert.switch_times.len(), 1);
    assert!((cert.switch_times[0] - 0.5467).abs() < 1e-3);
    assert!(cert.switch_times.iter().all(|&t| t > 0.0 && t < cert.t_f));
    assert_eq!(cert.schedule.levels(), &[REFERENCE_U_MAX, 0.0]);
    // deterministic: the same seed wins every time
    assert_eq!(cert.seed_index, certificate().seed_index);
}

#[test]
fn replayed_schedule_hits_target() {
    let prob = TimeOptimalProblem::reference();
    let cert = certificate();
    let x = schedule_endpoint(prob.system(), prob.x0(), &cert.schedule).unwrap();
    let r = prob.fast_residual(&x);
    assert!(r[0].abs() < 1e-6 && r[1].abs() < 1e-6, "{r:?}");
}

#[test]
fn hamiltonian_is_conserved_along_extremal() {
    let prob = TimeOptimalProblem::reference();
    let cert = certificate();
    let ext = integrate_extremal(&prob, &cert.psi0, cert.t_f, &OdeOptions::default()).unwrap();
    let h = ext.hamiltonian_profile(&prob);
    let h_end = *h.last().unwrap();
    assert!(h_end.abs() < 1e-8);
    assert!(h.iter().all(|v| (v - h_end).abs() < 1e-7));
    let (x, psi) = ext.final_state();
    assert!(hamiltonian(&prob, &x, ext.final_control(), &psi).abs() < 1e-8);
}

#[test]
fn conservation_off_the_root() {
    let prob = TimeOptimalProblem::reference();
    let psi0 = Vector4::new(-0.02, 0.01, 0.03, -0.04);
    let ext = integrate_extremal(&prob, &psi0, 6.0, &OdeOptions::default()).unwrap();
    let h = ext.hamiltonian_profile(&prob);
    let h_end = *h.last().unwrap();
    assert!(h.iter().all(|v| (v - h_end).abs() < 1e-7));
}

#[test]
fn zero_control_residual() {
    let prob = TimeOptimalProblem::reference();
    let psi0 = Vector4::new(0.05, 0.05, 0.05, 0.05);
    let ext = integrate_extremal(&prob, &psi0, 1.0, &OdeOptions::default()).unwrap();
    assert_eq!(ext.levels, vec![0.0]);
    let r = shooting_residual(&prob, &psi0, 1.0, &OdeOptions::default()).unwrap();
    let target = prob.target_fast();
    assert_eq!((r[0], r[1]), (-target[0], -target[1]));
    assert_eq!(r[2], 1.0);
}

#[test]
fn hopeless_seeds_report_no_convergence() {
    let prob = TimeOptimalProblem::reference();
    let seeds = [Seed {
        psi0: Vector4::new(0.05, 0.05, 0.05, 0.05),
        t_f: 1.0,
    }];
    let opts = ShootingOptions {
        max_iterations: 5,
        ..ShootingOptions::default()
    };
    match solve_shooting(&prob, &seeds, &opts) {
        Err(Error::NoConvergence {
            best_residual,
            seeds_tried,
        }) => {
            assert_eq!(seeds_tried, 1);
            assert!(best_residual > 1e-8);
        }
        other => panic!("expected no convergence, got {other:?}"),
    }
}

#[test]
fn other_patient_agrees_with_strategy_method() {
    use induction_core::patient::{BisParameters, PatientDemographics, Sex};
    use induction_core::strategy::{solve_time_optimal, StrategyOptions};
    let demo = PatientDemographics::new(Sex::Female, 35.0, 62.0, 165.0).unwrap();
    let prob = TimeOptimalProblem::for_patient(&demo, &BisParameters::default(), 50.0, 90.0).unwrap();
    let cert = solve_shooting(&prob, &default_seed_grid(), &ShootingOptions::default()).unwrap();
    let sol = solve_time_optimal(&prob, &StrategyOptions::default()).unwrap();
    let s = sol.best.schedule.unwrap();
    assert!((cert.t_f - s.t_f()).abs() < 1e-3);
    assert_eq!(cert.schedule.levels(), s.levels());
    for (a, b) in cert.switch_times.iter().zip(s.breakpoints()) {
        assert!((a - b).abs() < 1e-3);
    }
}
