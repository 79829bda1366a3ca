//! Timestepper-based steady states: restarted GMRES with finite-difference
//! Jacobian-vector products, Newton iteration on `g(x) = x - Phi_T(x)`, and
//! natural-parameter continuation along a branch.
//!
//! The fixed points of `Phi_T` (T steps of the nonlinear integrator) are the
//! steady states of the flow, including unstable ones that plain
//! time-marching can never reach. Large `T` clusters the eigenvalues of
//! `Dg = I - DPhi_T` away from the origin, which is what keeps the inner
//! Krylov iteration count low; reports record those counts so the effect is
//! observable.

use crate::error::{Error, Result};
use crate::linops::{Matrix, Vector};
use nalgebra::Complex;

/// Default finite-difference increment scale: square root of machine
/// precision, balancing truncation against cancellation.
pub const DEFAULT_FD_EPS: f64 = 1.4901161193847656e-8;

/// Fixed-point formulation of a steady-state problem. The stored map is the
/// whole flight `Phi_T`: one call advances the nonlinear system by `t_steps`
/// time steps (multistep integrators keep their history private to a single
/// evaluation that way, so the map is deterministic).
pub struct FixedPointProblem<'a> {
    map: Box<dyn FnMut(&Vector) -> Result<Vector> + 'a>,
    /// Steps per map evaluation (the `T` in `Phi_T`), recorded for reports.
    pub t_steps: usize,
    /// Finite-difference increment scale.
    pub fd_eps: f64,
    /// Convergence threshold on `||g||/sqrt(n)`.
    pub newton_tol: f64,
    /// Relative residual target of the inner linear solves.
    pub gmres_tol: f64,
    pub max_newton: usize,
    pub gmres_restart: usize,
    pub max_gmres: usize,
    /// Damped line search on `||g||`; disable for plain Newton steps.
    pub line_search: bool,
}

impl<'a> FixedPointProblem<'a> {
    pub fn new(map: impl FnMut(&Vector) -> Result<Vector> + 'a, t_steps: usize) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::InvalidArgument("t_steps must be at least 1".into()));
        }
        Ok(FixedPointProblem {
            map: Box::new(map),
            t_steps,
            fd_eps: DEFAULT_FD_EPS,
            newton_tol: 1e-10,
            gmres_tol: 1e-6,
            max_newton: 50,
            gmres_restart: 50,
            max_gmres: 200,
            line_search: true,
        })
    }

    /// `Phi_T(x)`: the state after `t_steps` time steps from `x`.
    pub fn phi_t(&mut self, x: &Vector) -> Result<Vector> {
        (self.map)(x)
    }

    /// Residual map `g(x) = x - Phi_T(x)`; zeros are steady states.
    pub fn g(&mut self, x: &Vector) -> Result<Vector> {
        Ok(x - self.phi_t(x)?)
    }
}

/// Result of a (restarted) GMRES solve. `converged` means the relative
/// residual estimate reached the target; the cap and stagnation cases are
/// reported through their flags rather than errors so callers can still use
/// the partial solution.
#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: Vector,
    /// Relative residual estimates, one entry per iteration plus the
    /// initial residual; nonincreasing within each restart cycle.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The Krylov space became invariant and contains the exact solution.
    pub breakdown: bool,
    /// A full restart cycle failed to reduce the residual.
    pub stagnated: bool,
}

/// Restarted GMRES with modified Gram-Schmidt and one unconditional
/// reorthogonalization pass, for an operator given only by its action.
pub fn gmres<F>(
    mut apply_a: F,
    b: &Vector,
    tol: f64,
    max_iter: usize,
    restart: usize,
) -> Result<GmresOutcome>
where
    F: FnMut(&Vector) -> Result<Vector>,
{
    let n = b.len();
    if tol <= 0.0 || restart == 0 {
        return Err(Error::InvalidArgument("gmres needs tol > 0 and restart >= 1".into()));
    }
    crate::linops::check_finite_vector("gmres right-hand side", b)?;
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(GmresOutcome {
            x: Vector::zeros(n),
            residuals: vec![0.0],
            iterations: 0,
            converged: true,
            breakdown: false,
            stagnated: false,
        });
    }

    let mut x = Vector::zeros(n);
    let mut residuals = vec![1.0];
    let mut total_iter = 0;
    let mut breakdown = false;

    while total_iter < max_iter {
        // The first cycle starts from x = 0, where the residual is b itself;
        // skipping the operator there also keeps finite-difference operators
        // (undefined in the direction 0) usable.
        let r = if total_iter == 0 { b.clone() } else { b - apply_a(&x)? };
        let beta = r.norm();
        let cycle_start = beta / b_norm;
        if cycle_start <= tol {
            return Ok(GmresOutcome {
                x,
                residuals,
                iterations: total_iter,
                converged: true,
                breakdown,
                stagnated: false,
            });
        }

        let m = restart.min(max_iter - total_iter);
        let mut v: Vec<Vector> = vec![&r / beta];
        let mut h = Matrix::zeros(m + 1, m);
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut gvec = Vector::zeros(m + 1);
        gvec[0] = beta;
        let mut k_used = 0;
        let mut hit_tol = false;

        for j in 0..m {
            let mut w = apply_a(&v[j])?;
            total_iter += 1;
            let w_scale = w.norm();
            for i in 0..=j {
                let hij = v[i].dot(&w);
                h[(i, j)] = hij;
                w -= &v[i] * hij;
            }
            // One reorthogonalization pass keeps the basis orthonormal in
            // the stiff, badly scaled cases the finite-difference Jacobian
            // products produce.
            for i in 0..=j {
                let corr = v[i].dot(&w);
                h[(i, j)] += corr;
                w -= &v[i] * corr;
            }
            let hnext = w.norm();
            h[(j + 1, j)] = hnext;
            if hnext > 1e-14 * w_scale.max(f64::MIN_POSITIVE) {
                v.push(&w / hnext);
            } else {
                // Happy breakdown: the residual estimate below collapses to
                // (near) zero and the solve in this space is exact.
                breakdown = true;
            }

            for i in 0..j {
                let t = cs[i] * h[(i, j)] + sn[i] * h[(i + 1, j)];
                h[(i + 1, j)] = -sn[i] * h[(i, j)] + cs[i] * h[(i + 1, j)];
                h[(i, j)] = t;
            }
            let rho = h[(j, j)].hypot(h[(j + 1, j)]);
            if rho > 0.0 {
                cs[j] = h[(j, j)] / rho;
                sn[j] = h[(j + 1, j)] / rho;
            } else {
                cs[j] = 1.0;
                sn[j] = 0.0;
            }
            h[(j, j)] = rho;
            h[(j + 1, j)] = 0.0;
            gvec[j + 1] = -sn[j] * gvec[j];
            gvec[j] *= cs[j];

            k_used = j + 1;
            let est = gvec[j + 1].abs() / b_norm;
            residuals.push(est);
            if est <= tol || breakdown {
                hit_tol = est <= tol;
                break;
            }
        }

        // Back-substitute the rotated Hessenberg system and update x.
        let mut y = Vector::zeros(k_used);
        for i in (0..k_used).rev() {
            let mut s = gvec[i];
            for l in i + 1..k_used {
                s -= h[(i, l)] * y[l];
            }
            if h[(i, i)].abs() <= f64::MIN_POSITIVE {
                return Err(Error::Singular(
                    "gmres projected system is singular (operator not full rank on the Krylov space)"
                        .into(),
                ));
            }
            y[i] = s / h[(i, i)];
        }
        for (i, yi) in y.iter().enumerate() {
            x += &v[i] * *yi;
        }

        let cycle_end = residuals.last().copied().unwrap_or(cycle_start);
        if hit_tol || breakdown {
            return Ok(GmresOutcome {
                x,
                residuals,
                iterations: total_iter,
                converged: hit_tol || breakdown,
                breakdown,
                stagnated: false,
            });
        }
        if cycle_end >= cycle_start * (1.0 - 1e-10) && k_used == restart {
            return Ok(GmresOutcome {
                x,
                residuals,
                iterations: total_iter,
                converged: false,
                breakdown,
                stagnated: true,
            });
        }
    }

    Ok(GmresOutcome {
        x,
        residuals,
        iterations: total_iter,
        converged: false,
        breakdown,
        stagnated: false,
    })
}

/// First-order finite-difference directional derivative
/// `[g(x + eps v) - g(x)] / eps` with the cancellation-safe scaling
/// `eps = eps0 (1 + ||x||) / ||v||`.
pub fn jacobian_vector<G>(mut g: G, x: &Vector, v: &Vector, eps0: f64) -> Result<Vector>
where
    G: FnMut(&Vector) -> Result<Vector>,
{
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return Err(Error::InvalidArgument("jacobian_vector direction must be nonzero".into()));
    }
    if eps0 <= 0.0 {
        return Err(Error::InvalidArgument("finite-difference increment must be positive".into()));
    }
    let eps = eps0 * (1.0 + x.norm()) / v_norm;
    let gp = g(&(x + v * eps))?;
    let g0 = g(x)?;
    Ok((gp - g0) / eps)
}

/// Diagnostics of a Newton-GMRES run.
#[derive(Clone, Debug)]
pub struct NewtonReport {
    pub converged: bool,
    pub iterations: usize,
    /// `||g||/sqrt(n)` at the initial guess and after every accepted step.
    pub residuals: Vec<f64>,
    /// Inner Krylov iterations per Newton step.
    pub gmres_iterations: Vec<usize>,
    /// Line-search halvings per Newton step (all zero for plain Newton).
    pub halvings: Vec<usize>,
}

/// Newton iteration on `g(x) = x - Phi_T(x)` with GMRES inner solves on
/// finite-difference Jacobian products and a damped line search on `||g||`.
pub fn newton_gmres(
    problem: &mut FixedPointProblem,
    x_guess: &Vector,
) -> Result<(Vector, NewtonReport)> {
    crate::linops::check_finite_vector("newton initial guess", x_guess)?;
    let n = x_guess.len();
    let scale = (n as f64).sqrt();
    let mut x = x_guess.clone();
    let mut gx = problem.g(&x)?;
    let mut res = gx.norm() / scale;
    let mut report = NewtonReport {
        converged: false,
        iterations: 0,
        residuals: vec![res],
        gmres_iterations: Vec::new(),
        halvings: Vec::new(),
    };

    for it in 1..=problem.max_newton {
        if res <= problem.newton_tol {
            report.converged = true;
            return Ok((x, report));
        }

        let rhs = -&gx;
        let (tol, max_g, restart, eps0) =
            (problem.gmres_tol, problem.max_gmres, problem.gmres_restart, problem.fd_eps);
        let outcome = {
            let gx_ref = &gx;
            let x_ref = &x;
            let apply = |v: &Vector| -> Result<Vector> {
                let eps = eps0 * (1.0 + x_ref.norm()) / v.norm();
                let gp = problem_g_at(problem, &(x_ref + v * eps))?;
                Ok((gp - gx_ref) / eps)
            };
            gmres(apply, &rhs, tol, max_g, restart)?
        };
        report.gmres_iterations.push(outcome.iterations);
        let delta = outcome.x;
        crate::linops::check_finite_vector("newton step", &delta)?;

        let mut alpha = 1.0;
        let mut halvings = 0;
        let (x_new, g_new, res_new) = loop {
            let cand = &x + &delta * alpha;
            let g_cand = problem.g(&cand)?;
            let r_cand = g_cand.norm() / scale;
            if !problem.line_search
                || r_cand <= problem.newton_tol
                || r_cand < res * (1.0 - 1e-4 * alpha)
            {
                break (cand, g_cand, r_cand);
            }
            halvings += 1;
            if halvings > 8 {
                return Err(Error::NoConvergence(format!(
                    "newton line search failed at iteration {it}: residual {res:.3e} \
                     not reduced after 8 halvings"
                )));
            }
            alpha *= 0.5;
        };
        report.halvings.push(halvings);
        x = x_new;
        gx = g_new;
        res = res_new;
        report.iterations = it;
        report.residuals.push(res);
    }

    if res <= problem.newton_tol {
        report.converged = true;
        return Ok((x, report));
    }
    Err(Error::NoConvergence(format!(
        "newton: residual {res:.3e} after {} iterations (tol {:.1e})",
        problem.max_newton, problem.newton_tol
    )))
}

// The Newton loop borrows g(x) while building the Jacobian closure, so the
// map evaluation goes through a free function rather than a second `&mut
// problem` method call.
fn problem_g_at(problem: &mut FixedPointProblem, x: &Vector) -> Result<Vector> {
    problem.g(x)
}

/// One converged (or attempted) point of a steady-state branch.
#[derive(Clone, Debug)]
pub struct BranchPoint {
    pub mu: f64,
    pub state: Vector,
    pub converged: bool,
    /// `||g||/sqrt(n)` at the recorded state.
    pub residual: f64,
    /// Leading eigenvalue estimates of the linearization at the state.
    pub leading: Vec<Complex<f64>>,
}

/// A branch of steady states over a scalar parameter, with the first
/// detected crossing of the leading eigenvalue's real part.
#[derive(Clone, Debug)]
pub struct SteadyBranch {
    /// Points in traversal order; parameter values are monotone.
    pub points: Vec<BranchPoint>,
    /// `(low, high)` interval bracketing the first sign change of the
    /// leading real part, when one occurs inside the range.
    pub hopf_bracket: Option<(f64, f64)>,
    /// The branch stopped before the end of the range (Newton failure that
    /// step halving could not rescue); the points so far are still valid.
    pub terminated_early: bool,
}

/// Natural-parameter continuation: solve at `mu_start` from `x0`, then walk
/// toward `mu_end` in steps of `step`, warm-starting each solve from the
/// previous state. A failed solve retries with a halved step (down to
/// `step/32`) before terminating the branch early.
///
/// `make_problem` builds the fixed-point problem at a parameter value;
/// `leading_eigs` estimates the leading eigenvalues of the linearization at
/// a converged state (its real parts locate the Hopf crossing).
pub fn continuation<'a, P, E>(
    mut make_problem: P,
    mu_start: f64,
    mu_end: f64,
    step: f64,
    x0: &Vector,
    mut leading_eigs: E,
) -> Result<SteadyBranch>
where
    P: FnMut(f64) -> Result<FixedPointProblem<'a>>,
    E: FnMut(f64, &Vector) -> Result<Vec<Complex<f64>>>,
{
    if !(step > 0.0) || mu_end == mu_start {
        return Err(Error::InvalidArgument(
            "continuation needs step > 0 and a nondegenerate range".into(),
        ));
    }
    let dir = (mu_end - mu_start).signum();
    let span = (mu_end - mu_start).abs();

    let mut solve_at = |mu: f64, guess: &Vector| -> Result<(Vector, f64)> {
        let mut problem = make_problem(mu)?;
        let (x, rep) = newton_gmres(&mut problem, guess)?;
        Ok((x, *rep.residuals.last().unwrap()))
    };

    let (x_first, res_first) = solve_at(mu_start, x0).map_err(|e| {
        Error::NoConvergence(format!("continuation could not converge at the range start: {e}"))
    })?;
    let mut branch = SteadyBranch {
        points: vec![BranchPoint {
            mu: mu_start,
            leading: leading_eigs(mu_start, &x_first)?,
            state: x_first,
            converged: true,
            residual: res_first,
        }],
        hopf_bracket: None,
        terminated_early: false,
    };

    let mut mu = mu_start;
    while (mu - mu_start).abs() < span - 1e-12 * span {
        let remaining = (mu_end - mu).abs();
        let mut h = step.min(remaining);
        let last_state = branch.points.last().unwrap().state.clone();
        loop {
            let mu_try = mu + dir * h;
            match solve_at(mu_try, &last_state) {
                Ok((x, res)) => {
                    let leading = leading_eigs(mu_try, &x)?;
                    if branch.hopf_bracket.is_none() {
                        let prev = &branch.points.last().unwrap().leading;
                        let re_prev = max_re(prev);
                        let re_now = max_re(&leading);
                        if re_prev != 0.0 && re_now != 0.0 && re_prev.signum() != re_now.signum() {
                            branch.hopf_bracket =
                                Some((mu.min(mu_try), mu.max(mu_try)));
                        }
                    }
                    branch.points.push(BranchPoint {
                        mu: mu_try,
                        state: x,
                        converged: true,
                        residual: res,
                        leading,
                    });
                    mu = mu_try;
                    break;
                }
                Err(_) if h > step / 32.0 => h *= 0.5,
                Err(_) => {
                    branch.terminated_early = true;
                    return Ok(branch);
                }
            }
        }
    }
    Ok(branch)
}

fn max_re(eigs: &[Complex<f64>]) -> f64 {
    eigs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Branch table with one row per point: parameter, residual, leading
/// eigenvalue, and an optional per-point state file reference.
pub fn branch_csv(branch: &SteadyBranch, state_refs: Option<&[String]>) -> Result<String> {
    if let Some(refs) = state_refs {
        if refs.len() != branch.points.len() {
            return Err(Error::Dimension(format!(
                "{} state references for {} branch points",
                refs.len(),
                branch.points.len()
            )));
        }
    }
    let mut out = String::from("mu,residual,lead_re,lead_im,state_ref\n");
    for (i, p) in branch.points.iter().enumerate() {
        let lead = p
            .leading
            .iter()
            .max_by(|a, b| a.re.partial_cmp(&b.re).unwrap())
            .copied()
            .unwrap_or(Complex::new(f64::NAN, f64::NAN));
        let r = state_refs.map(|rs| rs[i].as_str()).unwrap_or("");
        out.push_str(&format!(
            "{:.12e},{:.3e},{:.12e},{:.12e},{r}\n",
            p.mu, p.residual, lead.re, lead.im
        ));
    }
    Ok(out)
}
