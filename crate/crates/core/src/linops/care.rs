//! Continuous algebraic Riccati equation via the Hamiltonian Schur method.

use super::schur::{real_schur, reorder_schur, schur_eigenvalues};
use super::{Matrix, DENSE_CAP};
use crate::error::{Error, Result};
use nalgebra::{Cholesky, LU};

/// Solves `A' P + P A - P B R^-1 B' P + Q = 0` for the stabilizing solution.
///
/// Builds the Hamiltonian `[[A, -B R^-1 B'], [-Q, -A']]`, reorders its real
/// Schur form so the n stable eigenvalues lead, and recovers
/// `P = X2 X1^-1` from the invariant-subspace basis `[X1; X2]`.
///
/// Errors: `NotSpd` when `R` has no Cholesky factor, `NotStabilizable` when
/// the Hamiltonian has eigenvalues on the imaginary axis or the stable
/// subspace does not yield a solution, `NoConvergence` from the Schur
/// iteration.
pub fn solve_care(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension("riccati: A must be square".into()));
    }
    let m = b.ncols();
    if b.nrows() != n || q.nrows() != n || q.ncols() != n || r.nrows() != m || r.ncols() != m {
        return Err(Error::Dimension(
            "riccati: B must be n x m, Q n x n, R m x m".into(),
        ));
    }
    if 2 * n > DENSE_CAP {
        return Err(Error::InvalidArgument(format!(
            "dense riccati solve capped at {}, got n = {n}",
            DENSE_CAP / 2
        )));
    }
    let qsym = (q - q.transpose()).norm();
    if qsym > 1e-10 * q.norm().max(1.0) {
        return Err(Error::InvalidArgument("riccati: Q must be symmetric".into()));
    }
    let rchol = Cholesky::new(r.clone())
        .ok_or_else(|| Error::NotSpd("riccati: R must be symmetric positive definite".into()))?;
    // G = B R^-1 B'
    let rinv_bt = rchol.solve(&b.transpose());
    let g = b * rinv_bt;
    let g = (&g + g.transpose()) * 0.5;

    let mut h = Matrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut schur = real_schur(&h)?;
    let hnorm = h.norm().max(1.0);
    for ev in schur_eigenvalues(&schur.t) {
        if ev.re.abs() <= 1e-9 * hnorm {
            return Err(Error::NotStabilizable(format!(
                "hamiltonian eigenvalue {:.3e} + {:.3e}i on the imaginary axis",
                ev.re, ev.im
            )));
        }
    }
    let selected = reorder_schur(&mut schur, &|re, _im| re < 0.0)?;
    if selected != n {
        return Err(Error::NotStabilizable(format!(
            "hamiltonian has {selected} stable eigenvalues, expected {n}"
        )));
    }

    let x1 = schur.q.view((0, 0), (n, n)).into_owned();
    let x2 = schur.q.view((n, 0), (n, n)).into_owned();
    let lu = LU::new(x1.transpose());
    if !lu.is_invertible() {
        return Err(Error::NotStabilizable(
            "stable hamiltonian subspace has singular leading block".into(),
        ));
    }
    // P = X2 X1^-1 solved as X1' P' = X2'.
    let pt = lu
        .solve(&x2.transpose())
        .ok_or_else(|| Error::Singular("riccati subspace solve failed".into()))?;
    let p = (pt.transpose() + pt) * 0.5;

    // The stabilizing solution leaves A - G P with spectrum in the open
    // left half-plane; anything else means the selected subspace was wrong.
    let closed = a - &g * &p;
    let cschur = real_schur(&closed)?;
    let worst = schur_eigenvalues(&cschur.t)
        .into_iter()
        .map(|ev| ev.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if worst >= 0.0 {
        return Err(Error::NotStabilizable(format!(
            "closed-loop spectral abscissa {worst:.3e} >= 0 (undetectable mode?)"
        )));
    }
    Ok(p)
}
