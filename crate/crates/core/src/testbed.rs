//! Desk-scale validation plants: random hyperbolic LTI systems with known
//! eigenstructure, and a two-component 1-D reaction-advection-diffusion
//! system that crosses a supercritical Hopf bifurcation. Both hand over
//! everything the pipeline needs (exact linearizations, exact W-adjoints,
//! actuator column, point sensors) at runtimes of seconds.

use crate::error::{Error, Result};
use crate::linops::{
    InnerProductWeight, Matrix, NonlinearPlant, PlantStepper, StateSpaceSystem, Vector,
};
use crate::spectral::leading_ritz_values;
use crate::steady::{continuation, FixedPointProblem, SteadyBranch};
use nalgebra::Complex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Exact structure behind a generated LTI testbed, for oracle comparisons.
#[derive(Clone, Debug)]
pub struct LtiGroundTruth {
    /// Prescribed eigenvalues (conjugate pairs listed explicitly).
    pub eigenvalues: Vec<Complex<f64>>,
    /// Right unstable basis (columns of the similarity).
    pub t_u: Matrix,
    /// Left unstable basis with `s_u' t_u = I`.
    pub s_u: Matrix,
    /// Real block-diagonal spectrum matrix, unstable blocks first.
    pub lambda: Matrix,
    /// The similarity `A = V Lambda V^{-1}`, condition below 50.
    pub v: Matrix,
}

/// Random hyperbolic system `A = V Lambda V^{-1}` with `n_u` prescribed
/// unstable eigenvalues (real parts in `[gap, 1]`), the rest stable (real
/// parts in `[-5, -max(0.2, gap)]`), a mild similarity, and random input /
/// output maps. `gap` keeps every eigenvalue at least that far from the
/// imaginary axis.
pub fn random_lti(
    n: usize,
    n_u: usize,
    p: usize,
    q: usize,
    gap: f64,
    seed: u64,
) -> Result<(StateSpaceSystem, LtiGroundTruth)> {
    if n == 0 || p == 0 || q == 0 {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    if n_u >= n {
        return Err(Error::InvalidArgument(format!(
            "n_u = {n_u} must be below the state dimension {n}"
        )));
    }
    if !(gap > 0.0 && gap < 1.0) {
        return Err(Error::InvalidArgument("gap must lie in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut lambda = Matrix::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    let mut col = 0usize;
    let place = |lam_re: f64, lam_im: f64, lambda: &mut Matrix, col: &mut usize| {
        if lam_im > 0.0 {
            lambda[(*col, *col)] = lam_re;
            lambda[(*col, *col + 1)] = lam_im;
            lambda[(*col + 1, *col)] = -lam_im;
            lambda[(*col + 1, *col + 1)] = lam_re;
            *col += 2;
        } else {
            lambda[(*col, *col)] = lam_re;
            *col += 1;
        }
    };
    let mut remaining = n_u;
    while remaining > 0 {
        let re = rng.gen_range(gap.max(0.1)..1.0);
        if remaining >= 2 && rng.gen_bool(0.6) {
            let im = rng.gen_range(0.3..2.0);
            place(re, im, &mut lambda, &mut col);
            eigenvalues.push(Complex::new(re, im));
            eigenvalues.push(Complex::new(re, -im));
            remaining -= 2;
        } else {
            place(re, 0.0, &mut lambda, &mut col);
            eigenvalues.push(Complex::new(re, 0.0));
            remaining -= 1;
        }
    }
    let mut remaining = n - n_u;
    while remaining > 0 {
        let re = -rng.gen_range(gap.max(0.2)..5.0);
        if remaining >= 2 && rng.gen_bool(0.6) {
            let im = rng.gen_range(0.3..3.0);
            place(re, im, &mut lambda, &mut col);
            eigenvalues.push(Complex::new(re, im));
            eigenvalues.push(Complex::new(re, -im));
            remaining -= 2;
        } else {
            place(re, 0.0, &mut lambda, &mut col);
            eigenvalues.push(Complex::new(re, 0.0));
            remaining -= 1;
        }
    }

    // Mild similarity, redrawn smaller until the condition bound holds
    // (virtually always on the first try).
    let mut scale = 0.3;
    let v = loop {
        let g = Matrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cand = Matrix::identity(n, n) + g * (scale / (n as f64).sqrt());
        let s = crate::linops::svd(&cand)?;
        if s.sigma[0] / s.sigma[n - 1] <= 50.0 {
            break cand;
        }
        scale *= 0.7;
    };
    let v_inv = v.clone().try_inverse().ok_or_else(|| {
        Error::Singular("similarity not invertible despite condition bound".into())
    })?;
    let a = &v * &lambda * &v_inv;
    let b = Matrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let c = Matrix::from_fn(q, n, |_, _| rng.sample::<f64, _>(StandardNormal));

    let truth = LtiGroundTruth {
        eigenvalues,
        t_u: v.columns(0, n_u).into_owned(),
        s_u: v_inv.transpose().columns(0, n_u).into_owned(),
        lambda,
        v: v.clone(),
    };
    let sys = StateSpaceSystem::dense_dynamics(a, b, c, InnerProductWeight::identity(n))?;
    Ok((sys, truth))
}

/// Configuration of the Hopf plant. The PDE on `(0, L)` with clamped ends:
///
/// ```text
/// u_t = d u_xx - c u_x + mu u - omega0 v - kappa (u^2+v^2) u + s(x) + b(x) f
/// v_t = d v_xx - c v_x + omega0 u + mu v - kappa (u^2+v^2) v
/// ```
///
/// A complex eigenvalue pair of the linearization crosses the imaginary
/// axis as `mu` grows, spawning a finite-amplitude limit cycle; the source
/// term makes the steady state nontrivial.
#[derive(Clone, Debug)]
pub struct HopfPdeSpec {
    /// Interior grid points per field (state dimension is twice this).
    pub n_grid: usize,
    pub length: f64,
    /// Bifurcation parameter.
    pub mu: f64,
    /// Cubic saturation coefficient.
    pub nonlin: f64,
    pub diffusion: f64,
    pub advection: f64,
    /// Rotation frequency coupling the two fields.
    pub omega0: f64,
    /// Amplitude of the steady forcing bump (position fixed at 0.4 L).
    pub source_amp: f64,
    /// Gaussian actuator bump center and width (physical units).
    pub actuator_center: f64,
    pub actuator_width: f64,
    /// Grid indices (0-based, u field) carrying point sensors.
    pub sensor_indices: Vec<usize>,
    /// Grid stretching strength in `x = L (xi - stretch sin(2 pi xi)/2 pi)`;
    /// 0 is uniform, must stay below 1.
    pub stretch: f64,
}

impl Default for HopfPdeSpec {
    fn default() -> Self {
        HopfPdeSpec {
            n_grid: 64,
            length: 10.0,
            mu: 0.5,
            nonlin: 1.0,
            diffusion: 1.0,
            advection: 1.0,
            omega0: 1.0,
            source_amp: 0.05,
            actuator_center: 2.5,
            actuator_width: 0.5,
            sensor_indices: vec![38, 47],
            stretch: 0.3,
        }
    }
}

/// The discretized Hopf plant: second-order finite differences on a
/// smoothly stretched grid, exact dense Jacobian, trapezoid-weight inner
/// product (mesh-independent energy), Gaussian actuator, point sensors.
#[derive(Clone)]
pub struct HopfPde {
    pub spec: HopfPdeSpec,
    /// Physical grid points (interior).
    grid: Vector,
    w: InnerProductWeight,
    /// Constant-coefficient linear part (diffusion, advection, rotation,
    /// and the mu term).
    lin: Matrix,
    /// Steady source bump (u rows only).
    source: Vector,
    b: Matrix,
    c_sensors: Matrix,
}

fn gaussian_bump(grid: &Vector, center: f64, width: f64) -> Vector {
    Vector::from_fn(grid.len(), |i, _| {
        let d = (grid[i] - center) / width;
        (-0.5 * d * d).exp()
    })
}

impl HopfPde {
    pub fn new(spec: HopfPdeSpec) -> Result<Self> {
        let n = spec.n_grid;
        if !(32..=256).contains(&n) {
            return Err(Error::InvalidArgument(format!(
                "grid size {n} outside the supported range 32..=256"
            )));
        }
        if !(spec.stretch >= 0.0 && spec.stretch < 1.0) {
            return Err(Error::InvalidArgument("stretch must lie in [0, 1)".into()));
        }
        if spec.length <= 0.0 || spec.diffusion <= 0.0 || spec.nonlin <= 0.0 {
            return Err(Error::InvalidArgument(
                "length, diffusion and nonlinearity must be positive".into(),
            ));
        }
        for &i in &spec.sensor_indices {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "sensor index {i} outside the grid 0..{n}"
                )));
            }
        }
        let l = spec.length;
        let dxi = 1.0 / (n as f64 + 1.0);
        let two_pi = std::f64::consts::TAU;
        let xi = |i: usize| (i as f64 + 1.0) * dxi;
        let x_of = |s: f64| l * (s - spec.stretch * (two_pi * s).sin() / two_pi);
        let grid = Vector::from_fn(n, |i, _| x_of(xi(i)));

        // Metric terms of the stretch map; both derivative stencils act on
        // the uniform computational grid.
        let x_xi = |s: f64| l * (1.0 - spec.stretch * (two_pi * s).cos());
        let x_xixi = |s: f64| l * spec.stretch * two_pi * (two_pi * s).sin();

        // Scalar transport operator d u_xx - c u_x with clamped ends.
        let mut d_op = Matrix::zeros(n, n);
        for i in 0..n {
            let s = xi(i);
            let m1 = x_xi(s);
            let m2 = x_xixi(s);
            let c2 = spec.diffusion / (m1 * m1);
            let c1 = -(spec.diffusion * m2 / (m1 * m1 * m1) + spec.advection / m1);
            // u_xixi stencil (1, -2, 1)/dxi^2; u_xi stencil (-1, 0, 1)/2dxi.
            d_op[(i, i)] += -2.0 * c2 / (dxi * dxi);
            if i > 0 {
                d_op[(i, i - 1)] += c2 / (dxi * dxi) - c1 / (2.0 * dxi);
            }
            if i + 1 < n {
                d_op[(i, i + 1)] += c2 / (dxi * dxi) + c1 / (2.0 * dxi);
            }
        }

        let mut lin = Matrix::zeros(2 * n, 2 * n);
        lin.view_mut((0, 0), (n, n)).copy_from(&d_op);
        lin.view_mut((n, n), (n, n)).copy_from(&d_op);
        for i in 0..n {
            lin[(i, i)] += spec.mu;
            lin[(n + i, n + i)] += spec.mu;
            lin[(i, n + i)] -= spec.omega0;
            lin[(n + i, i)] += spec.omega0;
        }

        // Trapezoid quadrature weights on the physical grid, one copy per
        // field; energies are then mesh-independent integrals.
        let mut wdiag = Vector::zeros(2 * n);
        for i in 0..n {
            let left = if i == 0 { 0.0 } else { grid[i - 1] };
            let right = if i + 1 == n { l } else { grid[i + 1] };
            wdiag[i] = 0.5 * (right - left);
            wdiag[n + i] = wdiag[i];
        }
        let w = InnerProductWeight::diagonal(wdiag)?;

        let mut source = Vector::zeros(2 * n);
        source
            .rows_mut(0, n)
            .copy_from(&(gaussian_bump(&grid, 0.4 * l, 0.1 * l) * spec.source_amp));

        let mut b = Matrix::zeros(2 * n, 1);
        b.view_mut((0, 0), (n, 1))
            .copy_from(&gaussian_bump(&grid, spec.actuator_center, spec.actuator_width));

        let mut c_sensors = Matrix::zeros(spec.sensor_indices.len(), 2 * n);
        for (row, &i) in spec.sensor_indices.iter().enumerate() {
            c_sensors[(row, i)] = 1.0;
        }

        Ok(HopfPde { spec, grid, w, lin, source, b, c_sensors })
    }

    pub fn grid(&self) -> &Vector {
        &self.grid
    }

    pub fn weight(&self) -> &InnerProductWeight {
        &self.w
    }

    /// Gaussian actuator column (single input).
    pub fn actuator(&self) -> &Matrix {
        &self.b
    }

    /// Point-sensor rows on the u field.
    pub fn sensor_matrix(&self) -> &Matrix {
        &self.c_sensors
    }

    fn cubic(&self, x: &Vector) -> Vector {
        let n = self.spec.n_grid;
        let kappa = self.spec.nonlin;
        Vector::from_fn(2 * n, |i, _| {
            let (u, v) = if i < n { (x[i], x[n + i]) } else { (x[i - n], x[i]) };
            let r2 = u * u + v * v;
            -kappa * r2 * x[i]
        })
    }

    fn cubic_jacobian(&self, x: &Vector) -> Matrix {
        let n = self.spec.n_grid;
        let kappa = self.spec.nonlin;
        let mut j = Matrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            let u = x[i];
            let v = x[n + i];
            j[(i, i)] = -kappa * (3.0 * u * u + v * v);
            j[(i, n + i)] = -2.0 * kappa * u * v;
            j[(n + i, i)] = -2.0 * kappa * u * v;
            j[(n + i, n + i)] = -kappa * (u * u + 3.0 * v * v);
        }
        j
    }

    /// Linear state-space system at the base state `x_star`, with the exact
    /// Jacobian as dynamics, the actuator as input, and the full state as
    /// output (point sensors stay separate; they address rows of this
    /// output). The nonlinear plant rides along for simulation harnesses.
    pub fn linearized_system(&self, x_star: &Vector) -> Result<StateSpaceSystem> {
        let n2 = 2 * self.spec.n_grid;
        if x_star.len() != n2 {
            return Err(Error::Dimension(format!(
                "base state length {} vs plant dimension {n2}",
                x_star.len()
            )));
        }
        let a = &self.lin + self.cubic_jacobian(x_star);
        let sys = StateSpaceSystem::dense_dynamics(
            a,
            self.b.clone(),
            Matrix::identity(n2, n2),
            self.w.clone(),
        )?;
        Ok(sys.with_nonlinear(std::sync::Arc::new(self.clone())))
    }

    /// Fixed-point problem for the unforced plant: `Phi_T` runs `t_steps`
    /// of a fresh semi-implicit stepper per evaluation (deterministic).
    pub fn fixed_point_problem(&self, dt: f64, t_steps: usize) -> Result<FixedPointProblem<'_>> {
        if dt <= 0.0 {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        FixedPointProblem::new(
            move |x: &Vector| {
                let mut stepper = self.make_stepper(dt);
                let mut y = stepper.step(x, None);
                for _ in 1..t_steps {
                    y = stepper.step(&y, None);
                }
                crate::linops::check_finite_vector("plant trajectory", &y)
                    .map_err(|_| Error::Diverged("time-stepping left the finite range".into()))?;
                Ok(y)
            },
            t_steps,
        )
    }
}

impl NonlinearPlant for HopfPde {
    fn dim(&self) -> usize {
        2 * self.spec.n_grid
    }

    fn rhs(&self, x: &Vector) -> Vector {
        &self.lin * x + self.cubic(x) + &self.source
    }

    fn jacobian(&self, x: &Vector) -> Matrix {
        &self.lin + self.cubic_jacobian(x)
    }

    fn make_stepper(&self, dt: f64) -> Box<dyn PlantStepper> {
        let n2 = 2 * self.spec.n_grid;
        let lhs = (Matrix::identity(n2, n2) - &self.lin * (dt / 2.0)).lu();
        let rhs = Matrix::identity(n2, n2) + &self.lin * (dt / 2.0);
        Box::new(CnAb2Stepper { plant: self.clone(), lhs, rhs, prev_nl: None, dt })
    }
}

/// Crank-Nicolson on the constant linear part, second-order
/// Adams-Bashforth on the cubic term and source (first step falls back to
/// forward Euler on those). Fixed points of one step are exactly the
/// steady states of the continuous system, forcing included.
struct CnAb2Stepper {
    plant: HopfPde,
    lhs: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    rhs: Matrix,
    prev_nl: Option<Vector>,
    dt: f64,
}

impl PlantStepper for CnAb2Stepper {
    fn step(&mut self, x: &Vector, forcing: Option<&Vector>) -> Vector {
        let nl_now = self.plant.cubic(x) + &self.plant.source;
        let nl_prev = self.prev_nl.as_ref().unwrap_or(&nl_now);
        let mut rhs_vec = &self.rhs * x + (&nl_now * 1.5 - nl_prev * 0.5) * self.dt;
        if let Some(f) = forcing {
            rhs_vec += f * self.dt;
        }
        let out = self
            .lhs
            .solve(&rhs_vec)
            .expect("Crank-Nicolson factor is nonsingular for dissipative dt");
        self.prev_nl = Some(nl_now);
        out
    }

    fn dt(&self) -> f64 {
        self.dt
    }
}

/// Traces the steady branch of the Hopf plant over `[mu_lo, mu_hi]` and
/// brackets the critical parameter where the leading eigenvalue pair of
/// the steady-state linearization crosses the imaginary axis. Leading
/// eigenvalues come from subspace iteration on the linearization; `seed`
/// fixes its starting block (the branch itself is deterministic).
/// `line_search = false` runs plain undamped Newton steps.
pub fn hopf_scan(
    spec: &HopfPdeSpec,
    mu_lo: f64,
    mu_hi: f64,
    step: f64,
    dt: f64,
    t_steps: usize,
    seed: u64,
    line_search: bool,
) -> Result<SteadyBranch> {
    let base = spec.clone();
    let make_problem = move |mu: f64| -> Result<FixedPointProblem<'static>> {
        let plant = HopfPde::new(HopfPdeSpec { mu, ..base.clone() })?;
        let mut problem = FixedPointProblem::new(
            move |x: &Vector| {
                let mut stepper = plant.make_stepper(dt);
                let mut y = stepper.step(x, None);
                for _ in 1..t_steps {
                    y = stepper.step(&y, None);
                }
                crate::linops::check_finite_vector("plant trajectory", &y)
                    .map_err(|_| Error::Diverged("time-stepping left the finite range".into()))?;
                Ok(y)
            },
            t_steps,
        )?;
        problem.line_search = line_search;
        Ok(problem)
    };
    let eig_spec = spec.clone();
    let leading = move |mu: f64, x_star: &Vector| -> Result<Vec<Complex<f64>>> {
        let plant = HopfPde::new(HopfPdeSpec { mu, ..eig_spec.clone() })?;
        let sys = plant.linearized_system(x_star)?;
        leading_ritz_values(&sys, 2, 0.05, None, 1e-7, seed)
    };
    let x0 = Vector::zeros(2 * spec.n_grid);
    continuation(make_problem, mu_lo, mu_hi, step, &x0, leading)
}
