use bpod::linops::{adjoint_residual, eig_dense, svd, Matrix, NonlinearPlant, Vector};
use bpod::spectral::{unstable_eigenspace_report, Side};
use bpod::steady::newton_gmres;
use bpod::testbed::{hopf_scan, random_lti, HopfPde, HopfPdeSpec};
use bpod::Error;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn sorted_pairs(v: &[nalgebra::Complex<f64>]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = v.iter().map(|z| (z.re, z.im)).collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

#[test]
fn random_lti_matches_the_prescribed_spectrum() {
    for seed in [1u64, 7, 42] {
        let (sys, truth) = random_lti(8, 3, 2, 2, 0.2, seed).unwrap();
        let a = sys.a_dense().unwrap();
        let got = sorted_pairs(&eig_dense(&a).unwrap().values);
        let want = sorted_pairs(&truth.eigenvalues);
        for (g, w) in got.iter().zip(&want) {
            assert!(
                (g.0 - w.0).abs() <= 1e-10 && (g.1 - w.1).abs() <= 1e-10,
                "seed {seed}: spectrum {got:?} vs {want:?}"
            );
        }
        let n_u = truth.eigenvalues.iter().filter(|z| z.re > 0.0).count();
        assert_eq!(n_u, 3);
    }
}

#[test]
fn random_lti_bases_are_biorthogonal_and_invariant() {
    let (sys, truth) = random_lti(10, 2, 1, 3, 0.3, 5).unwrap();
    let a = sys.a_dense().unwrap();

    let prod = truth.s_u.transpose() * &truth.t_u;
    assert!((prod - Matrix::identity(2, 2)).norm() <= 1e-10);

    // The unstable columns span an invariant subspace: A T_u = T_u Lambda_u.
    let lambda_u = truth.lambda.view((0, 0), (2, 2)).into_owned();
    assert!((a * &truth.t_u - &truth.t_u * lambda_u).norm() <= 1e-8);

    let sv = svd(&truth.v).unwrap();
    let cond = sv.sigma[0] / sv.sigma[sv.sigma.len() - 1];
    assert!(cond <= 50.0, "similarity condition {cond}");
}

#[test]
fn random_lti_without_unstable_modes_yields_an_empty_eigenspace() {
    let (sys, truth) = random_lti(8, 0, 1, 1, 0.3, 11).unwrap();
    assert!(truth.eigenvalues.iter().all(|z| z.re < 0.0));
    let report = unstable_eigenspace_report(&sys, Side::Right, 4, 0.05, None, 1e-8, 17).unwrap();
    assert_eq!(report.n_u, 0);
    assert_eq!(report.basis.ncols(), 0);
    assert!(report.ritz_values.is_empty());
}

#[test]
fn random_lti_rejects_bad_arguments() {
    assert!(matches!(random_lti(4, 4, 1, 1, 0.3, 0), Err(Error::InvalidArgument(_))));
    assert!(matches!(random_lti(4, 1, 1, 1, 0.0, 0), Err(Error::InvalidArgument(_))));
    assert!(matches!(random_lti(0, 0, 1, 1, 0.3, 0), Err(Error::InvalidArgument(_))));
}

fn small_spec() -> HopfPdeSpec {
    HopfPdeSpec {
        n_grid: 48,
        sensor_indices: vec![28, 35],
        ..HopfPdeSpec::default()
    }
}

/// Dense Newton on the steady equation itself (exact Jacobian, LU solves);
/// independent of the matrix-free path under test.
fn dense_steady_state(plant: &HopfPde) -> Vector {
    let n = plant.dim();
    let mut x = Vector::zeros(n);
    for _ in 0..40 {
        let f = plant.rhs(&x);
        if f.norm() <= 1e-13 * (n as f64).sqrt() {
            break;
        }
        let j = plant.jacobian(&x);
        let delta = j.lu().solve(&f).expect("steady Jacobian is singular");
        x -= delta;
    }
    assert!(
        plant.rhs(&x).norm() <= 1e-10,
        "dense Newton did not converge: residual {:.3e}",
        plant.rhs(&x).norm()
    );
    x
}

#[test]
fn pde_geometry_is_sane() {
    let plant = HopfPde::new(HopfPdeSpec::default()).unwrap();
    let grid = plant.grid();
    let length = plant.spec.length;
    assert_eq!(grid.len(), 64);
    assert!(grid[0] > 0.0 && grid[grid.len() - 1] < length);
    for i in 1..grid.len() {
        assert!(grid[i] > grid[i - 1]);
    }
    // Stretching compresses the mesh near the walls relative to the middle.
    let h_edge = grid[1] - grid[0];
    let h_mid = grid[33] - grid[32];
    assert!(h_edge < h_mid);

    assert_eq!(plant.weight().dim(), 128);
    let b = plant.actuator();
    assert_eq!(b.ncols(), 1);
    // Actuation enters the first field only.
    assert!(b.view((64, 0), (64, 1)).norm() == 0.0);
    assert!(b.view((0, 0), (64, 1)).norm() > 0.0);
    let c = plant.sensor_matrix();
    assert_eq!(c.nrows(), 2);
    for row in c.row_iter() {
        assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
    }
}

#[test]
fn pde_rejects_bad_specs() {
    let tiny = HopfPdeSpec { n_grid: 8, ..HopfPdeSpec::default() };
    assert!(matches!(HopfPde::new(tiny), Err(Error::InvalidArgument(_))));
    let warped = HopfPdeSpec { stretch: 1.0, ..HopfPdeSpec::default() };
    assert!(matches!(HopfPde::new(warped), Err(Error::InvalidArgument(_))));
    let blind = HopfPdeSpec { sensor_indices: vec![64], ..HopfPdeSpec::default() };
    assert!(matches!(HopfPde::new(blind), Err(Error::InvalidArgument(_))));
}

#[test]
fn linearized_operator_satisfies_the_adjoint_identity() {
    let plant = HopfPde::new(small_spec()).unwrap();
    let x_star = dense_steady_state(&plant);
    let sys = plant.linearized_system(&x_star).unwrap();
    let resid = adjoint_residual(sys.a.as_ref(), &sys.w, 20, 7).unwrap();
    assert!(resid <= 1e-10, "adjoint residual {resid:.3e}");
}

#[test]
fn jacobian_matches_directional_finite_differences() {
    let plant = HopfPde::new(small_spec()).unwrap();
    let n = plant.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)) * 0.5;
    let v = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let j = plant.jacobian(&x);
    let eps = 1e-6;
    let fd = (plant.rhs(&(&x + &v * eps)) - plant.rhs(&(&x - &v * eps))) / (2.0 * eps);
    let jv = &j * &v;
    assert!(
        (&jv - &fd).norm() <= 1e-5 * jv.norm().max(1.0),
        "relative defect {:.3e}",
        (&jv - &fd).norm() / jv.norm()
    );
}

#[test]
fn steady_states_are_exact_fixed_points_of_the_stepper() {
    let plant = HopfPde::new(small_spec()).unwrap();
    let x_star = dense_steady_state(&plant);
    assert!(x_star.norm() > 1e-3, "source term should make the steady state nontrivial");
    for dt in [0.05, 0.01] {
        let mut stepper = plant.make_stepper(dt);
        let mut y = x_star.clone();
        for _ in 0..10 {
            y = stepper.step(&y, None);
        }
        let drift = (&y - &x_star).norm() / x_star.norm().max(1.0);
        assert!(drift <= 1e-11, "dt = {dt}: drift {drift:.3e}");
    }
}

/// W-energy of the deviation from a reference state.
fn dev_energy(plant: &HopfPde, x: &Vector, x_ref: &Vector) -> f64 {
    let d = x - x_ref;
    plant.weight().apply(&d).dot(&d)
}

#[test]
fn below_the_crossing_perturbations_decay() {
    let spec = HopfPdeSpec { mu: 0.15, ..small_spec() };
    let plant = HopfPde::new(spec).unwrap();
    let x_star = dense_steady_state(&plant);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let kick = Vector::from_fn(plant.dim(), |_, _| rng.sample::<f64, _>(StandardNormal)) * 1e-2;
    let mut x = &x_star + &kick;
    let e0 = dev_energy(&plant, &x, &x_star);
    let mut stepper = plant.make_stepper(0.02);
    for _ in 0..3000 {
        x = stepper.step(&x, None);
    }
    let e_end = dev_energy(&plant, &x, &x_star);
    assert!(e_end <= 1e-2 * e0, "energy {e0:.3e} -> {e_end:.3e}");
}

#[test]
fn above_the_crossing_a_limit_cycle_forms() {
    let plant = HopfPde::new(small_spec()).unwrap();
    let x_star = dense_steady_state(&plant);

    // The linearization carries exactly one unstable conjugate pair.
    let sys = plant.linearized_system(&x_star).unwrap();
    let report = unstable_eigenspace_report(&sys, Side::Right, 6, 0.05, None, 1e-7, 13).unwrap();
    assert_eq!(report.n_u, 2, "ritz values {:?}", report.ritz_values);
    assert!(report.ritz_values.iter().all(|z| z.re > 0.0));
    assert!(report.ritz_values.iter().any(|z| z.im > 0.5));

    // Departure: a small kick grows by orders of magnitude...
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let kick = Vector::from_fn(plant.dim(), |_, _| rng.sample::<f64, _>(StandardNormal)) * 1e-4;
    let mut x = &x_star + &kick;
    let e0 = dev_energy(&plant, &x, &x_star);
    let mut stepper = plant.make_stepper(0.02);
    for _ in 0..5000 {
        x = stepper.step(&x, None);
    }
    let e_mid = dev_energy(&plant, &x, &x_star);
    assert!(e_mid >= 10.0 * e0, "no departure: {e0:.3e} -> {e_mid:.3e}");

    // ... and saturates into a bounded, sustained oscillation.
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for _ in 0..5000 {
        x = stepper.step(&x, None);
        let e = dev_energy(&plant, &x, &x_star);
        lo = lo.min(e);
        hi = hi.max(e);
    }
    assert!(hi.is_finite() && hi < 1e3, "amplitude blew up: {hi:.3e}");
    assert!(lo > 1e-6, "oscillation died: {lo:.3e}");
    assert!(hi / lo.max(1e-300) < 1e4, "not a steady oscillation: [{lo:.3e}, {hi:.3e}]");
}

#[test]
fn matrix_free_newton_agrees_with_the_dense_path() {
    let plant = HopfPde::new(small_spec()).unwrap();
    let x_dense = dense_steady_state(&plant);
    let mut problem = plant.fixed_point_problem(0.05, 50).unwrap();
    let (x_mf, report) = newton_gmres(&mut problem, &Vector::zeros(plant.dim())).unwrap();
    assert!(report.converged);
    assert!(report.iterations <= 50);
    assert!(*report.residuals.last().unwrap() <= 1e-10);
    let diff = (&x_mf - &x_dense).norm() / x_dense.norm();
    assert!(diff <= 1e-7, "steady states differ by {diff:.3e}");
}

#[test]
fn limit_cycle_amplitude_grows_with_the_parameter() {
    let mut amplitudes = Vec::new();
    for mu in [0.45, 0.6, 0.75] {
        let spec = HopfPdeSpec { mu, n_grid: 32, sensor_indices: vec![18, 25], ..HopfPdeSpec::default() };
        let plant = HopfPde::new(spec).unwrap();
        let x_star = dense_steady_state(&plant);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let kick = Vector::from_fn(plant.dim(), |_, _| rng.sample::<f64, _>(StandardNormal)) * 1e-3;
        let mut x = &x_star + &kick;
        let mut stepper = plant.make_stepper(0.02);
        for _ in 0..5000 {
            x = stepper.step(&x, None);
        }
        let mut peak: f64 = 0.0;
        for _ in 0..2500 {
            x = stepper.step(&x, None);
            peak = peak.max(dev_energy(&plant, &x, &x_star).sqrt());
        }
        amplitudes.push(peak);
    }
    assert!(
        amplitudes[0] < amplitudes[1] && amplitudes[1] < amplitudes[2],
        "amplitudes not increasing: {amplitudes:?}"
    );
}

#[test]
fn scan_brackets_the_hopf_point() {
    let spec = HopfPdeSpec { n_grid: 32, sensor_indices: vec![18, 25], ..HopfPdeSpec::default() };
    let branch = hopf_scan(&spec, 0.25, 0.55, 0.1, 0.05, 40, 3, true).unwrap();
    assert!(!branch.terminated_early);
    assert!(branch.points.iter().all(|p| p.converged));
    let (lo, hi) = branch.hopf_bracket.expect("no bracket found");
    assert!(hi - lo <= 0.1 + 1e-12);

    // Independent dense eigenvalue check at the bracket ends.
    for (mu, expect_unstable) in [(lo, false), (hi, true)] {
        let plant = HopfPde::new(HopfPdeSpec { mu, ..spec.clone() }).unwrap();
        let x_star = dense_steady_state(&plant);
        let sys = plant.linearized_system(&x_star).unwrap();
        let max_re = eig_dense(sys.a_dense().unwrap())
            .unwrap()
            .values
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(
            max_re > 0.0,
            expect_unstable,
            "mu = {mu}: leading real part {max_re:.3e}"
        );
    }

    // Same arguments reproduce the same branch.
    let again = hopf_scan(&spec, 0.25, 0.55, 0.1, 0.05, 40, 3, true).unwrap();
    assert_eq!(again.hopf_bracket, branch.hopf_bracket);
    for (p, q) in branch.points.iter().zip(&again.points) {
        assert_eq!(p.mu, q.mu);
        assert_eq!(p.state, q.state);
    }
}

#[test]
fn scan_branches_agree_across_horizons() {
    let spec = HopfPdeSpec { n_grid: 32, sensor_indices: vec![18, 25], ..HopfPdeSpec::default() };
    let b10 = hopf_scan(&spec, 0.25, 0.45, 0.1, 0.05, 10, 3, true).unwrap();
    let b50 = hopf_scan(&spec, 0.25, 0.45, 0.1, 0.05, 50, 3, true).unwrap();
    assert_eq!(b10.points.len(), b50.points.len());
    for (p, q) in b10.points.iter().zip(&b50.points) {
        let diff = (&p.state - &q.state).norm();
        assert!(diff <= 1e-8, "mu = {}: branches differ by {diff:.3e}", p.mu);
    }
}
