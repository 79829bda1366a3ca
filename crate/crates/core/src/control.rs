//! LQR feedback and Kalman-filter observer synthesis on reduced models,
//! data-driven noise covariance estimation, and closed-loop simulation of
//! linear or nonlinear plants under the reduced compensator.
//!
//! Sign convention: the input is `u = K a` with `K = -R^{-1} B' P`, so
//! stabilization shows up as `spec(A + B K)` in the left half-plane.

use crate::balpod::ReducedModel;
use crate::error::{Error, Result};
use crate::linops::{
    eig_dense, solve_care, InnerProductWeight, Matrix, NonlinearPlant, StateSpaceSystem, Vector,
};
use nalgebra::Complex;

/// Default control-weight scale for `R = c I`.
pub const DEFAULT_CONTROL_WEIGHT: f64 = 1e5;

fn spectral_abscissa(m: &Matrix) -> Result<(f64, Vec<Complex<f64>>)> {
    if m.nrows() == 0 {
        return Ok((f64::NEG_INFINITY, Vec::new()));
    }
    let eig = eig_dense(m)?;
    let absc = eig.values.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    Ok((absc, eig.values))
}

/// Smallest singular value of `[A - lambda I, B]` (input side) or
/// `[A - lambda I; C]` (output side) at a possibly complex `lambda`,
/// computed through the real 2x-blown-up representation.
fn pbh_margin(a: &Matrix, other: &Matrix, lambda: Complex<f64>, input_side: bool) -> Result<f64> {
    let n = a.nrows();
    let mut shifted_re = a.clone();
    for i in 0..n {
        shifted_re[(i, i)] -= lambda.re;
    }
    let beta = lambda.im;
    let (rows, cols) = if input_side {
        (2 * n, 2 * (n + other.ncols()))
    } else {
        (2 * (n + other.nrows()), 2 * n)
    };
    let mut m = Matrix::zeros(rows, cols);
    // Complex M = M_re + i M_im maps to [[M_re, -M_im], [M_im, M_re]];
    // singular values come out doubled but extremes are preserved.
    m.view_mut((0, 0), (n, n)).copy_from(&shifted_re);
    m.view_mut((n, n), (n, n)).copy_from(&shifted_re);
    for i in 0..n {
        m[(i, n + i)] = beta;
        m[(n + i, i)] = -beta;
    }
    if input_side {
        let p = other.ncols();
        m.view_mut((0, 2 * n), (n, p)).copy_from(other);
        m.view_mut((n, 2 * n + p), (n, p)).copy_from(other);
    } else {
        let q = other.nrows();
        m.view_mut((2 * n, 0), (q, n)).copy_from(other);
        m.view_mut((2 * n + q, n), (q, n)).copy_from(other);
    }
    let s = crate::linops::svd(&m)?;
    Ok(s.sigma[s.sigma.len() - 1])
}

/// PBH margins of every eigenvalue in the closed right half-plane; errors
/// name the first direction whose margin is below `tol` relative to `||A||`.
fn check_pbh(
    a: &Matrix,
    other: &Matrix,
    input_side: bool,
    what: &str,
) -> Result<Vec<(Complex<f64>, f64)>> {
    let eig = eig_dense(a)?;
    let scale = a.norm().max(1.0);
    let mut margins = Vec::new();
    for l in eig.values.iter().filter(|l| l.re >= 0.0) {
        if l.im < 0.0 {
            continue; // conjugate partner has the same margin
        }
        let sigma = pbh_margin(a, other, *l, input_side)?;
        if sigma <= 1e-10 * scale {
            return Err(Error::InvalidArgument(format!(
                "unstable direction at eigenvalue {:.6e}{:+.6e}i is {what} \
                 (PBH margin {sigma:.3e})",
                l.re, l.im
            )));
        }
        margins.push((*l, sigma));
    }
    Ok(margins)
}

/// Full-output energy weighting `C' W_y C` for the LQR cost. When the output
/// dimension equals the model's state dimension the output is the state
/// itself and the model's inner product applies; otherwise the outputs are
/// plain channels and the weight is Euclidean.
pub fn energy_output_q(model: &ReducedModel) -> Matrix {
    let c = model.c_full();
    let w = &model.pair_u.w;
    if c.nrows() == w.dim() {
        let wc = w.apply_matrix(&c);
        c.transpose() * wc
    } else {
        c.transpose() * c
    }
}

/// A state-feedback gain with its closed-loop diagnostics.
#[derive(Clone, Debug)]
pub struct LqrGain {
    /// `u = K a`; acts on the full reduced state (columns zero-padded when
    /// synthesized from the unstable block alone).
    pub k: Matrix,
    pub closed_loop_eigs: Vec<Complex<f64>>,
    /// Max real part of `spec(A + B K)` on the full reduced model.
    pub abscissa: f64,
    /// PBH margins of the unstable eigenvalues used in the synthesis.
    pub pbh_margins: Vec<(Complex<f64>, f64)>,
}

/// LQR gain on the full reduced model: `K = -R^{-1} B' P` from the
/// stabilizing CARE solution. `q` defaults to the output-energy weighting
/// and `r` to `1e5 I`.
pub fn lqr_gain(model: &ReducedModel, q: Option<&Matrix>, r: Option<&Matrix>) -> Result<LqrGain> {
    let a = model.a_full();
    let b = model.b_full();
    let q_own;
    let q = match q {
        Some(m) => m,
        None => {
            q_own = energy_output_q(model);
            &q_own
        }
    };
    let r_own;
    let r = match r {
        Some(m) => m,
        None => {
            r_own = Matrix::identity(b.ncols(), b.ncols()) * DEFAULT_CONTROL_WEIGHT;
            &r_own
        }
    };
    let margins = check_pbh(&a, &b, true, "unreachable through the inputs")?;
    let p = solve_care(&a, &b, q, r)?;
    let k = -(r.clone().try_inverse().ok_or_else(|| {
        Error::Singular("control weight R is singular".into())
    })? * b.transpose()
        * &p);
    let (abscissa, eigs) = spectral_abscissa(&(&a + &b * &k))?;
    if abscissa >= 0.0 {
        return Err(Error::NotStable(format!(
            "closed-loop spectral abscissa {abscissa:.3e} after LQR synthesis"
        )));
    }
    Ok(LqrGain { k, closed_loop_eigs: eigs, abscissa, pbh_margins: margins })
}

/// LQR gain synthesized from the unstable block alone, zero-padded to the
/// full reduced width. The closed-loop check still runs on the full model:
/// `abscissa` is the spillover diagnostic (it may be positive, which is a
/// reportable finding rather than a synthesis failure).
pub fn lqr_gain_unstable_only(
    model: &ReducedModel,
    q_u: Option<&Matrix>,
    r: Option<&Matrix>,
) -> Result<LqrGain> {
    let n_u = model.n_u();
    if n_u == 0 {
        return Err(Error::InvalidArgument(
            "model has no unstable block to control".into(),
        ));
    }
    let a_u = model.a_u.clone();
    let b_u = model.b_u.clone();
    let q_own;
    let q_u = match q_u {
        Some(m) => m,
        None => {
            q_own = energy_output_q(model).view((0, 0), (n_u, n_u)).into_owned();
            &q_own
        }
    };
    let r_own;
    let r = match r {
        Some(m) => m,
        None => {
            r_own = Matrix::identity(b_u.ncols(), b_u.ncols()) * DEFAULT_CONTROL_WEIGHT;
            &r_own
        }
    };
    let margins = check_pbh(&a_u, &b_u, true, "unreachable through the inputs")?;
    let p = solve_care(&a_u, &b_u, q_u, r)?;
    let k_u = -(r.clone().try_inverse().ok_or_else(|| {
        Error::Singular("control weight R is singular".into())
    })? * b_u.transpose()
        * &p);
    let (absc_u, _) = spectral_abscissa(&(&a_u + &b_u * &k_u))?;
    if absc_u >= 0.0 {
        return Err(Error::NotStable(format!(
            "unstable-block closed loop has abscissa {absc_u:.3e}"
        )));
    }
    let mut k = Matrix::zeros(k_u.nrows(), model.order());
    k.view_mut((0, 0), (k_u.nrows(), n_u)).copy_from(&k_u);
    let (abscissa, eigs) = spectral_abscissa(&(model.a_full() + model.b_full() * &k))?;
    Ok(LqrGain { k, closed_loop_eigs: eigs, abscissa, pbh_margins: margins })
}

/// Sensor map `C-bar = M [C_u C_s]`: the selected rows of the full output
/// map, with PBH observability margins of the unstable eigenvalues. An
/// unstable mode invisible to the chosen sensors is a hard error.
pub fn sensor_map(model: &ReducedModel, sensor_rows: &[usize]) -> Result<(Matrix, Vec<f64>)> {
    let c = model.c_full();
    for &i in sensor_rows {
        if i >= c.nrows() {
            return Err(Error::InvalidArgument(format!(
                "sensor row {i} outside the output dimension {}",
                c.nrows()
            )));
        }
    }
    let mut c_bar = Matrix::zeros(sensor_rows.len(), c.ncols());
    for (dst, &src) in sensor_rows.iter().enumerate() {
        c_bar.set_row(dst, &c.row(src));
    }
    let margins = check_pbh(&model.a_full(), &c_bar, false, "unobservable through the sensors")?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    Ok((c_bar, margins))
}

/// Empirical process/sensor noise covariances.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    pub q_w: Matrix,
    pub r_v: Matrix,
    pub samples: usize,
    /// Shrinkage factor toward the diagonal (0 when samples cover the
    /// dimension).
    pub shrinkage: f64,
    /// `R_v` needed a PD-restoring ridge.
    pub regularized: bool,
}

/// Reduced coordinates of raw states: `a = Psi' W (x - baseline)`, one
/// column per snapshot.
pub fn measured_coefficients(
    model: &ReducedModel,
    states: &Matrix,
    baseline: Option<&Vector>,
) -> Result<Matrix> {
    let w = &model.pair_u.w;
    if states.nrows() != w.dim() {
        return Err(Error::Dimension(format!(
            "state rows {} vs plant dimension {}",
            states.nrows(),
            w.dim()
        )));
    }
    let mut dev = states.clone();
    if let Some(x0) = baseline {
        for j in 0..dev.ncols() {
            let col = dev.column(j) - x0;
            dev.set_column(j, &col);
        }
    }
    Ok(model.psi().transpose() * w.apply_matrix(&dev))
}

/// Raw (uncentered) second moments of the model-mismatch residuals
/// `w = f(a) - A a` and the sensor residuals `v = y - C-bar a` over a
/// representative trajectory in reduced coordinates.
///
/// `f_reduced` is the projected nonlinear right-hand side in reduced
/// coordinates. Fewer samples than the dimension triggers shrinkage toward
/// the diagonal; a singular `R_v` estimate is ridge-regularized.
pub fn estimate_noise<F>(
    model: &ReducedModel,
    a_meas: &Matrix,
    mut f_reduced: F,
    y: &Matrix,
    c_bar: &Matrix,
) -> Result<NoiseModel>
where
    F: FnMut(&Vector) -> Result<Vector>,
{
    let k = model.order();
    let n_samp = a_meas.ncols();
    if a_meas.nrows() != k {
        return Err(Error::Dimension(format!(
            "coefficient rows {} vs model order {k}",
            a_meas.nrows()
        )));
    }
    if y.ncols() != n_samp || y.nrows() != c_bar.nrows() {
        return Err(Error::Dimension(format!(
            "sensor data {}x{} vs {} samples and {} sensors",
            y.nrows(),
            y.ncols(),
            n_samp,
            c_bar.nrows()
        )));
    }
    if n_samp == 0 {
        return Err(Error::InvalidArgument("noise estimation needs samples".into()));
    }
    let a_tilde = model.a_full();
    let s = c_bar.nrows();
    let mut q_w = Matrix::zeros(k, k);
    let mut r_v = Matrix::zeros(s, s);
    for j in 0..n_samp {
        let a_j = a_meas.column(j).into_owned();
        let w_j = f_reduced(&a_j)? - &a_tilde * &a_j;
        let v_j = y.column(j) - c_bar * &a_j;
        q_w += &w_j * w_j.transpose();
        r_v += &v_j * v_j.transpose();
    }
    q_w /= n_samp as f64;
    r_v /= n_samp as f64;

    let mut shrinkage = 0.0;
    if n_samp < k.max(s) {
        shrinkage = 1.0 - n_samp as f64 / k.max(s) as f64;
        q_w = shrink_to_diagonal(&q_w, shrinkage);
        r_v = shrink_to_diagonal(&r_v, shrinkage);
    }

    let mut regularized = false;
    let sv = crate::linops::svd(&r_v)?;
    if sv.sigma[s - 1] <= 1e-12 * sv.sigma[0].max(1e-300) || sv.sigma[0] == 0.0 {
        let ridge = (1e-12 * r_v.trace() / s as f64).max(1e-12);
        r_v += Matrix::identity(s, s) * ridge;
        regularized = true;
    }
    Ok(NoiseModel { q_w, r_v, samples: n_samp, shrinkage, regularized })
}

fn shrink_to_diagonal(m: &Matrix, gamma: f64) -> Matrix {
    let mut out = m * (1.0 - gamma);
    for i in 0..m.nrows() {
        out[(i, i)] = m[(i, i)];
    }
    out
}

/// A Kalman observer gain with its spectrum diagnostics.
#[derive(Clone, Debug)]
pub struct KalmanGain {
    pub l: Matrix,
    pub observer_eigs: Vec<Complex<f64>>,
    /// Max real part of `spec(A - L C-bar)`.
    pub abscissa: f64,
    /// Residual norm of the filter Riccati equation.
    pub care_residual: f64,
}

/// Kalman gain `L = P C-bar' R_v^{-1}` from the stabilizing solution of the
/// filter (dual) Riccati equation.
pub fn kalman_gain(model: &ReducedModel, c_bar: &Matrix, noise: &NoiseModel) -> Result<KalmanGain> {
    let a = model.a_full();
    check_pbh(&a, c_bar, false, "undetectable through the sensors")?;
    let p = solve_care(&a.transpose(), &c_bar.transpose(), &noise.q_w, &noise.r_v)?;
    let r_inv = noise
        .r_v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("sensor covariance R_v is singular".into()))?;
    let l = &p * c_bar.transpose() * r_inv;
    let resid = (&a * &p + &p * a.transpose() - &l * &noise.r_v * l.transpose() + &noise.q_w)
        .norm()
        / noise.q_w.norm().max(p.norm()).max(1e-300);
    let (abscissa, eigs) = spectral_abscissa(&(&a - &l * c_bar))?;
    if abscissa >= 0.0 {
        return Err(Error::NotStable(format!(
            "observer spectral abscissa {abscissa:.3e} after Kalman synthesis"
        )));
    }
    Ok(KalmanGain { l, observer_eigs: eigs, abscissa, care_residual: resid })
}

/// Observer-controller pair on a reduced model. Construction re-verifies
/// both closed-loop spectra so a `Compensator` is stable by invariant.
#[derive(Clone, Debug)]
pub struct Compensator {
    pub a: Matrix,
    pub b: Matrix,
    pub k: Matrix,
    /// Observer gain; zero rows x 0 when running full-state feedback only.
    pub l: Matrix,
    pub c_bar: Matrix,
}

impl Compensator {
    /// Full-state-feedback compensator (no observer).
    pub fn full_state(model: &ReducedModel, gain: &LqrGain) -> Result<Self> {
        let a = model.a_full();
        let b = model.b_full();
        let (absc, _) = spectral_abscissa(&(&a + &b * &gain.k))?;
        if absc >= 0.0 {
            return Err(Error::NotStable(format!(
                "feedback does not stabilize the reduced model (abscissa {absc:.3e})"
            )));
        }
        Ok(Compensator {
            l: Matrix::zeros(a.nrows(), 0),
            c_bar: Matrix::zeros(0, a.ncols()),
            a,
            b,
            k: gain.k.clone(),
        })
    }

    /// Observer-based compensator; checks `spec(A + B K)` and
    /// `spec(A - L C-bar)` are both in the open left half-plane.
    pub fn observer_based(
        model: &ReducedModel,
        gain: &LqrGain,
        kalman: &KalmanGain,
        c_bar: &Matrix,
    ) -> Result<Self> {
        let a = model.a_full();
        let b = model.b_full();
        let (absc_k, _) = spectral_abscissa(&(&a + &b * &gain.k))?;
        if absc_k >= 0.0 {
            return Err(Error::NotStable(format!(
                "feedback does not stabilize the reduced model (abscissa {absc_k:.3e})"
            )));
        }
        let (absc_l, _) = spectral_abscissa(&(&a - &kalman.l * c_bar))?;
        if absc_l >= 0.0 {
            return Err(Error::NotStable(format!(
                "observer is unstable (abscissa {absc_l:.3e})"
            )));
        }
        Ok(Compensator { a, b, k: gain.k.clone(), l: kalman.l.clone(), c_bar: c_bar.clone() })
    }
}

/// The plant side of a closed loop: a linear state-space system stepped by
/// Crank-Nicolson, or a nonlinear plant with its own stepper and a steady
/// baseline that is subtracted from states and sensor readings.
pub enum PlantHandle<'a> {
    Linear { sys: &'a StateSpaceSystem, sensors: &'a Matrix },
    Nonlinear {
        plant: &'a dyn NonlinearPlant,
        input: &'a Matrix,
        sensors: &'a Matrix,
        baseline: &'a Vector,
        w: &'a InnerProductWeight,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedbackMode {
    FullState,
    Observer,
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub dt: f64,
    pub horizon: f64,
    /// Control is off (u = 0) before this time; the observer runs from 0.
    pub turn_on: f64,
    /// Record every `stride`-th step (1 = every step).
    pub stride: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { dt: 0.01, horizon: 100.0, turn_on: 0.0, stride: 1 }
    }
}

/// Time series of a closed-loop run. Columns of the matrices align with
/// `t`; `energy` is the W-norm squared of the plant deviation from its
/// baseline.
#[derive(Clone, Debug)]
pub struct TraceBundle {
    pub t: Vec<f64>,
    pub energy: Vec<f64>,
    pub a: Matrix,
    pub a_hat: Matrix,
    pub u: Matrix,
    pub y: Matrix,
    pub turn_on: f64,
}

/// Co-integrates the plant and the compensator. The plant advances with
/// zero-order-hold input; the observer ODE
/// `a-hat' = (A - L C-bar) a-hat + B u + L y` advances by Crank-Nicolson
/// with trapezoid sensor forcing at the same dt. The observer starts from
/// zero (no prior state information).
pub fn closed_loop_simulate(
    plant: &PlantHandle,
    comp: &Compensator,
    model: &ReducedModel,
    mode: FeedbackMode,
    x0: &Vector,
    opts: &SimOptions,
) -> Result<TraceBundle> {
    if opts.dt <= 0.0 || opts.horizon <= 0.0 || opts.stride == 0 {
        return Err(Error::InvalidArgument(
            "simulation needs dt > 0, horizon > 0, stride >= 1".into(),
        ));
    }
    if mode == FeedbackMode::Observer && comp.c_bar.nrows() == 0 {
        return Err(Error::InvalidArgument(
            "observer mode needs an observer-based compensator".into(),
        ));
    }
    let dt = opts.dt;
    let n_steps = (opts.horizon / dt).ceil() as usize;
    let k_dim = comp.a.nrows();
    let p_dim = comp.b.ncols();

    // Plant-side stepping machinery.
    let (w, baseline, sensors, mut lin_pieces, mut nl_stepper, input_map) = match plant {
        PlantHandle::Linear { sys, sensors } => {
            let a = sys.a_dense()?;
            let n = sys.n();
            let lhs = (Matrix::identity(n, n) - a * (dt / 2.0))
                .lu();
            let rhs = Matrix::identity(n, n) + a * (dt / 2.0);
            (
                sys.w.clone(),
                Vector::zeros(n),
                *sensors,
                Some((lhs, rhs)),
                None,
                sys.b.clone(),
            )
        }
        PlantHandle::Nonlinear { plant, input, sensors, baseline, w } => (
            (*w).clone(),
            (*baseline).clone(),
            *sensors,
            None,
            Some(plant.make_stepper(dt)),
            (*input).clone(),
        ),
    };
    if sensors.nrows() != comp.c_bar.nrows() && mode == FeedbackMode::Observer {
        return Err(Error::Dimension(format!(
            "plant sensor rows {} vs compensator sensor rows {}",
            sensors.nrows(),
            comp.c_bar.nrows()
        )));
    }

    // Observer CN factors: M = A - L C-bar.
    let m_obs = &comp.a - &comp.l * &comp.c_bar;
    let obs_lhs = (Matrix::identity(k_dim, k_dim) - &m_obs * (dt / 2.0)).lu();
    let obs_rhs = Matrix::identity(k_dim, k_dim) + &m_obs * (dt / 2.0);

    let y_base = sensors * &baseline;
    let mut x = x0.clone();
    let mut a_hat = Vector::zeros(k_dim);
    let mut dev = &x - &baseline;
    let mut y_now = sensors * &x - &y_base;
    let e0 = w.inner(&dev, &dev);
    let blowup = 1e6 * e0.max(1.0);

    let n_rec = n_steps / opts.stride + 1;
    let mut out = TraceBundle {
        t: Vec::with_capacity(n_rec),
        energy: Vec::with_capacity(n_rec),
        a: Matrix::zeros(k_dim, n_rec),
        a_hat: Matrix::zeros(k_dim, n_rec),
        u: Matrix::zeros(p_dim, n_rec),
        y: Matrix::zeros(sensors.nrows(), n_rec),
        turn_on: opts.turn_on,
    };
    let mut rec = 0usize;

    for step in 0..=n_steps {
        let t = step as f64 * dt;
        let a_true = model.psi().transpose() * w.apply(&dev);
        let u = if t + 1e-12 < opts.turn_on {
            Vector::zeros(p_dim)
        } else {
            match mode {
                FeedbackMode::FullState => &comp.k * &a_true,
                FeedbackMode::Observer => &comp.k * &a_hat,
            }
        };

        if step % opts.stride == 0 || step == n_steps {
            out.t.push(t);
            out.energy.push(w.inner(&dev, &dev));
            out.a.set_column(rec, &a_true);
            out.a_hat.set_column(rec, &a_hat);
            out.u.set_column(rec, &u);
            out.y.set_column(rec, &y_now);
            rec += 1;
        }
        if step == n_steps {
            break;
        }

        // Advance the plant under zero-order-hold input.
        let forcing = &input_map * &u;
        x = match (&mut lin_pieces, &mut nl_stepper) {
            (Some((lhs, rhs)), _) => {
                let rhs_vec = &*rhs * &x + &forcing * dt;
                lhs.solve(&rhs_vec).ok_or_else(|| {
                    Error::Singular("Crank-Nicolson plant factor is singular".into())
                })?
            }
            (None, Some(stepper)) => stepper.step(&x, Some(&forcing)),
            _ => unreachable!(),
        };
        crate::linops::check_finite_vector("closed-loop plant state", &x)?;
        dev = &x - &baseline;
        let energy = w.inner(&dev, &dev);
        if energy > blowup {
            return Err(Error::Diverged(format!(
                "plant energy {energy:.3e} exceeded 1e6 x initial at t = {:.3}",
                t + dt
            )));
        }

        let y_next = sensors * &x - &y_base;
        if mode == FeedbackMode::Observer {
            let rhs_vec = &obs_rhs * &a_hat
                + &comp.b * &u * dt
                + &comp.l * (&y_now + &y_next) * (dt / 2.0);
            a_hat = obs_lhs.solve(&rhs_vec).ok_or_else(|| {
                Error::Singular("Crank-Nicolson observer factor is singular".into())
            })?;
        }
        y_now = y_next;
    }

    // Trim any unused preallocated columns (stride rounding).
    if rec < out.a.ncols() {
        out.a = out.a.columns(0, rec).into_owned();
        out.a_hat = out.a_hat.columns(0, rec).into_owned();
        out.u = out.u.columns(0, rec).into_owned();
        out.y = out.y.columns(0, rec).into_owned();
    }
    Ok(out)
}

/// Coupled linear closed-loop matrix for observer feedback:
/// states `(x, a-hat)` evolve by
/// `[[A, B K], [L C_s, A_red - L C-bar + B_red K]]`.
pub fn coupled_closed_loop_matrix(
    a_plant: &Matrix,
    b_plant: &Matrix,
    sensors: &Matrix,
    comp: &Compensator,
) -> Matrix {
    let n = a_plant.nrows();
    let k = comp.a.nrows();
    let mut m = Matrix::zeros(n + k, n + k);
    m.view_mut((0, 0), (n, n)).copy_from(a_plant);
    m.view_mut((0, n), (n, k)).copy_from(&(b_plant * &comp.k));
    m.view_mut((n, 0), (k, n)).copy_from(&(&comp.l * sensors));
    m.view_mut((n, n), (k, k))
        .copy_from(&(&comp.a - &comp.l * &comp.c_bar + &comp.b * &comp.k));
    m
}

/// Closed-loop matrix for full-state feedback `u = K Psi' W x` on a linear
/// plant: `A + B K Psi' W`.
pub fn full_state_closed_loop_matrix(
    a_plant: &Matrix,
    b_plant: &Matrix,
    model: &ReducedModel,
    k: &Matrix,
) -> Matrix {
    let w = &model.pair_u.w;
    a_plant + b_plant * k * model.psi().transpose() * w.as_matrix()
}

/// Comma-separated trace table:
/// `t,energy,a1..ak,ahat1..ahatk,u1..up,y1..ys`.
pub fn trace_csv(bundle: &TraceBundle) -> String {
    let k = bundle.a.nrows();
    let p = bundle.u.nrows();
    let s = bundle.y.nrows();
    let mut head = String::from("t,energy");
    for i in 1..=k {
        head.push_str(&format!(",a{i}"));
    }
    for i in 1..=k {
        head.push_str(&format!(",ahat{i}"));
    }
    for i in 1..=p {
        head.push_str(&format!(",u{i}"));
    }
    for i in 1..=s {
        head.push_str(&format!(",y{i}"));
    }
    head.push('\n');
    let mut out = head;
    for (j, t) in bundle.t.iter().enumerate() {
        out.push_str(&format!("{t:.6e},{:.12e}", bundle.energy[j]));
        for i in 0..k {
            out.push_str(&format!(",{:.12e}", bundle.a[(i, j)]));
        }
        for i in 0..k {
            out.push_str(&format!(",{:.12e}", bundle.a_hat[(i, j)]));
        }
        for i in 0..p {
            out.push_str(&format!(",{:.12e}", bundle.u[(i, j)]));
        }
        for i in 0..s {
            out.push_str(&format!(",{:.12e}", bundle.y[(i, j)]));
        }
        out.push('\n');
    }
    out
}
