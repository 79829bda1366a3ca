//! Impulse-response and adjoint-response snapshot ensembles restricted to
//! the stable subspace, POD modes, and output projections.
//!
//! Snapshot columns are scaled by the square root of their quadrature
//! weight, so the empirical Gramian is plainly `X X'` and the W-pairing
//! `Z' W X` has the Hankel singular values as its singular values.

use crate::error::{Error, Result};
use crate::linops::{
    check_finite_vector, svd, CnStepper, InnerProductWeight, Matrix, StateSpaceSystem, Vector,
};
use crate::par;
use crate::spectral::StableProjector;

/// Quadrature rule assigning time weights to snapshot columns.
///
/// `Rectangle` gives every snapshot the full spacing `dt_snap` (first-order
/// accurate in the spacing); `Trapezoid` halves the first and last weights
/// (second order). Rectangle is the default throughout; trapezoid exists
/// for quantitative Gramian comparisons where first-order spacing error
/// dominates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadratureRule {
    Rectangle,
    Trapezoid,
}

impl QuadratureRule {
    fn weights(&self, n_snap: usize, dt_snap: f64) -> Vec<f64> {
        let mut w = vec![dt_snap; n_snap];
        if *self == QuadratureRule::Trapezoid && n_snap > 1 {
            w[0] = 0.5 * dt_snap;
            w[n_snap - 1] = 0.5 * dt_snap;
        }
        w
    }
}

/// Time-stamped state columns with quadrature weights: the empirical
/// Gramian factors. Column `k * n_snap + i` holds run `k` at time
/// `times[i]`, scaled by `sqrt(weights[i])`.
#[derive(Clone, Debug)]
pub struct SnapshotMatrix {
    pub columns: Matrix,
    /// Sample times within one run; shared by all runs.
    pub times: Vec<f64>,
    /// Quadrature weight per sample time; the scaling already applied.
    pub weights: Vec<f64>,
    /// Run (input or mode) index of each column.
    pub run_of_column: Vec<usize>,
    pub w: InnerProductWeight,
}

impl SnapshotMatrix {
    pub fn n_runs(&self) -> usize {
        self.run_of_column.last().map_or(0, |&r| r + 1)
    }

    pub fn snapshots_per_run(&self) -> usize {
        self.times.len()
    }
}

enum Stepper {
    Cn(CnStepper),
    Rk4 { dt: f64 },
}

/// Forward or adjoint marching of the linear part, dense CN when a dense
/// realization exists, classical RK4 otherwise (caller's dt must then lie
/// in the RK4 stability region of the fastest mode).
struct Marcher<'a> {
    sys: &'a StateSpaceSystem,
    adjoint: bool,
    stepper: Stepper,
}

impl<'a> Marcher<'a> {
    fn new(sys: &'a StateSpaceSystem, adjoint: bool, dt: f64) -> Result<Self> {
        let stepper = match sys.a.dense() {
            Some(a) => {
                let m = if adjoint {
                    sys.w.solve_matrix(&sys.w.apply_matrix(a).transpose())
                } else {
                    a.clone()
                };
                Stepper::Cn(CnStepper::new(&m, dt)?)
            }
            None => Stepper::Rk4 { dt },
        };
        Ok(Marcher { sys, adjoint, stepper })
    }

    fn apply_generator(&self, x: &Vector) -> Vector {
        if self.adjoint {
            self.sys.a.apply_adjoint(x)
        } else {
            self.sys.a.apply(x)
        }
    }

    fn step(&self, x: &Vector) -> Vector {
        match &self.stepper {
            Stepper::Cn(cn) => cn.step(x),
            Stepper::Rk4 { dt } => {
                let dt = *dt;
                let k1 = self.apply_generator(x);
                let k2 = self.apply_generator(&(x + &k1 * (dt / 2.0)));
                let k3 = self.apply_generator(&(x + &k2 * (dt / 2.0)));
                let k4 = self.apply_generator(&(x + &k3 * dt));
                x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
            }
        }
    }
}

struct RunSpec<'a> {
    sys: &'a StateSpaceSystem,
    projector: Option<&'a StableProjector>,
    adjoint: bool,
    dt: f64,
    n_steps: usize,
    spacing: usize,
    rule: QuadratureRule,
}

fn run_ensemble(spec: &RunSpec, initials: &Matrix) -> Result<SnapshotMatrix> {
    let sys = spec.sys;
    let n = sys.n();
    if spec.dt <= 0.0 {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    if spec.spacing == 0 {
        return Err(Error::InvalidArgument("spacing must be >= 1".into()));
    }
    if spec.n_steps < spec.spacing {
        return Err(Error::InvalidArgument(
            "n_steps must cover at least one snapshot interval".into(),
        ));
    }
    if initials.nrows() != n {
        return Err(Error::Dimension(format!(
            "initial-condition rows {} vs state dim {n}",
            initials.nrows()
        )));
    }
    let marcher = Marcher::new(sys, spec.adjoint, spec.dt)?;
    let n_snap = spec.n_steps / spec.spacing + 1;
    let dt_snap = spec.spacing as f64 * spec.dt;
    let weights = spec.rule.weights(n_snap, dt_snap);
    let times: Vec<f64> = (0..n_snap).map(|i| i as f64 * dt_snap).collect();

    let project = |x: &Vector| -> Vector {
        match (spec.projector, spec.adjoint) {
            (Some(p), false) => p.apply(x),
            (Some(p), true) => p.apply_adjoint(x),
            (None, _) => x.clone(),
        }
    };

    let n_runs = initials.ncols();
    let runs: Vec<Result<Vec<Vector>>> = par::map_collect((0..n_runs).collect(), |j| {
        let mut x = project(&initials.column(j).into_owned());
        let scale0 = sys.w.norm(&x).max(f64::MIN_POSITIVE);
        let mut snaps = Vec::with_capacity(n_snap);
        snaps.push(x.clone());
        for step in 1..=(n_snap - 1) * spec.spacing {
            x = marcher.step(&x);
            if spec.projector.is_some() {
                x = project(&x);
                let growth = sys.w.norm(&x) / scale0;
                if growth > 1e6 {
                    return Err(Error::ProjectorLeakage(format!(
                        "run {j}: state grew {growth:.1e}x by t = {:.2} despite projection \
                         (unstable eigenspace not converged?)",
                        step as f64 * spec.dt
                    )));
                }
            }
            check_finite_vector("snapshot state", &x).map_err(|_| {
                Error::Diverged(format!(
                    "run {j}: state became non-finite at t = {:.2}",
                    step as f64 * spec.dt
                ))
            })?;
            if step % spec.spacing == 0 {
                snaps.push(x.clone());
            }
        }
        Ok(snaps)
    });

    let mut columns = Matrix::zeros(n, n_snap * n_runs);
    let mut run_of_column = Vec::with_capacity(n_snap * n_runs);
    for (j, run) in runs.into_iter().enumerate() {
        let snaps = run?;
        for (i, snap) in snaps.iter().enumerate() {
            columns.set_column(j * n_snap + i, &(snap * weights[i].sqrt()));
            run_of_column.push(j);
        }
    }
    Ok(SnapshotMatrix { columns, times, weights, run_of_column, w: sys.w.clone() })
}

/// Impulse-response ensemble: one run per input column of `B`, initial
/// state `P B e_j` when a projector is given (`B e_j` otherwise), projected
/// every step, sampled every `spacing` steps, columns scaled by
/// `sqrt(spacing * dt)` per the quadrature rule.
///
/// Errors with `ProjectorLeakage` when the W-norm grows by more than 1e6
/// over a projected run.
pub fn impulse_response(
    sys: &StateSpaceSystem,
    projector: Option<&StableProjector>,
    dt: f64,
    n_steps: usize,
    spacing: usize,
    rule: QuadratureRule,
) -> Result<SnapshotMatrix> {
    let spec = RunSpec { sys, projector, adjoint: false, dt, n_steps, spacing, rule };
    run_ensemble(&spec, &sys.b.clone())
}

/// Adjoint-response ensemble: one run of the W-adjoint dynamics per column
/// of `initial_modes` (output-projection POD modes, or the columns of
/// `W^{-1} C'` when the output count is small), with per-step adjoint
/// projection.
pub fn adjoint_response(
    sys: &StateSpaceSystem,
    projector: Option<&StableProjector>,
    initial_modes: &Matrix,
    dt: f64,
    n_steps: usize,
    spacing: usize,
    rule: QuadratureRule,
) -> Result<SnapshotMatrix> {
    let spec = RunSpec { sys, projector, adjoint: true, dt, n_steps, spacing, rule };
    run_ensemble(&spec, initial_modes)
}

/// Adjoint initial conditions for an unprojected output map: the columns of
/// `W^{-1} C'`, one per output channel.
pub fn adjoint_initial_conditions(sys: &StateSpaceSystem) -> Matrix {
    sys.w.solve_matrix(&sys.c.transpose())
}

/// Leading W-orthonormal modes of a snapshot ensemble with their energies.
#[derive(Clone, Debug)]
pub struct PODBasis {
    /// n x m modes, `Theta' W Theta = I`.
    pub theta: Matrix,
    /// All squared singular values of the weighted ensemble, nonincreasing;
    /// the retained modes are the first `theta.ncols()`.
    pub energies: Vector,
    pub w: InnerProductWeight,
}

impl PODBasis {
    pub fn m(&self) -> usize {
        self.theta.ncols()
    }

    /// Fraction of total snapshot energy captured by the first `k` modes.
    pub fn energy_fraction(&self, k: usize) -> f64 {
        let total: f64 = self.energies.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        self.energies.iter().take(k).sum::<f64>() / total
    }
}

/// Proper orthogonal decomposition of a snapshot ensemble: the leading `m`
/// left singular vectors of the weighted snapshot matrix `F X`, mapped back
/// through the factor. Errors when `m` exceeds the numerical rank
/// (singular values below `1e-12 sigma_1`), listing the attainable count.
pub fn pod(x: &SnapshotMatrix, m: usize) -> Result<PODBasis> {
    if m == 0 {
        return Err(Error::InvalidArgument("mode count must be >= 1".into()));
    }
    let weighted = x.w.factor_apply_matrix(&x.columns);
    let s = svd(&weighted)?;
    let sigma1 = s.sigma[0].max(f64::MIN_POSITIVE);
    let rank = s.sigma.iter().take_while(|&&v| v > 1e-12 * sigma1).count();
    if m > rank {
        return Err(Error::RankDeficient(format!(
            "requested {m} modes but the ensemble has numerical rank {rank}"
        )));
    }
    let u1 = s.u.view((0, 0), (s.u.nrows(), m)).into_owned();
    let theta = x.w.factor_solve_matrix(&u1);
    let energies = s.sigma.map(|v| v * v);
    Ok(PODBasis { theta, energies, w: x.w.clone() })
}

/// Rank-m output projection `y -> Theta Theta* y` together with the
/// coefficient map `Theta* C` used as the model output.
#[derive(Clone, Debug)]
pub struct OutputProjection {
    /// Modes spanning the retained output subspace (rows match C's rows).
    pub theta: Matrix,
    /// Inner-product weight of the output space.
    pub w: InnerProductWeight,
    /// The original output map.
    pub c: Matrix,
}

impl OutputProjection {
    pub fn m(&self) -> usize {
        self.theta.ncols()
    }

    /// `Theta (Theta' W y)`.
    pub fn project(&self, y: &Vector) -> Vector {
        &self.theta * (self.theta.transpose() * self.w.apply(y))
    }

    /// POD coefficients `Theta' W y` of an output vector.
    pub fn coefficients(&self, y: &Vector) -> Vector {
        self.theta.transpose() * self.w.apply(y)
    }

    /// Full-rank projected output map `Theta Theta' W C`.
    pub fn projected_c(&self) -> Matrix {
        &self.theta * self.coefficient_c()
    }

    /// Rank-m coefficient output map `Theta' W C`.
    pub fn coefficient_c(&self) -> Matrix {
        self.theta.transpose() * self.w.apply_matrix(&self.c)
    }
}

/// Builds the output projection from POD modes of the output ensemble.
pub fn output_projection(c: &Matrix, modes: &PODBasis) -> Result<OutputProjection> {
    if c.nrows() != modes.theta.nrows() {
        return Err(Error::Dimension(format!(
            "output map has {} rows but modes live in dimension {}",
            c.nrows(),
            modes.theta.nrows()
        )));
    }
    Ok(OutputProjection { theta: modes.theta.clone(), w: modes.w.clone(), c: c.clone() })
}
