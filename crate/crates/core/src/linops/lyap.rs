//! Bartels-Stewart solvers for Lyapunov and Sylvester equations.
//!
//! Both reduce to real Schur form and back-substitute block columns of the
//! transformed unknown; diagonal blocks couple through Kronecker systems of
//! size at most 4.

use super::schur::{block_layout, real_schur, schur_eigenvalues};
use super::{Matrix, DENSE_CAP};
use crate::error::{Error, Result};
use nalgebra::LU;

/// Solves the continuous Lyapunov equation `A W + W A' + Q = 0` for stable
/// `A` (all eigenvalues in the open left half-plane). `Q` must be symmetric;
/// the result is symmetrized. Errors with `NotStable` when `A` has an
/// eigenvalue with nonnegative real part.
pub fn solve_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if n != a.ncols() || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension(format!(
            "lyapunov: A is {}x{}, Q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    if n > DENSE_CAP {
        return Err(Error::InvalidArgument(format!(
            "dense lyapunov solve capped at {DENSE_CAP}, got {n}"
        )));
    }
    let asym = (q - q.transpose()).norm();
    if asym > 1e-10 * q.norm().max(1.0) {
        return Err(Error::InvalidArgument(
            "lyapunov right-hand side must be symmetric".into(),
        ));
    }
    let schur = real_schur(a)?;
    for ev in schur_eigenvalues(&schur.t) {
        if ev.re >= 0.0 {
            return Err(Error::NotStable(format!(
                "lyapunov solve requires a stable matrix; found eigenvalue {:.6e} + {:.6e}i",
                ev.re, ev.im
            )));
        }
    }
    // A = U T U'; with W = U Y U' the equation becomes T Y + Y T' = -U' Q U.
    let c = -(schur.q.transpose() * q * &schur.q);
    let y = solve_lyapunov_schur(&schur.t, &c)?;
    let w = &schur.q * y * schur.q.transpose();
    Ok((&w + w.transpose()) * 0.5)
}

/// Solves `T Y + Y T' = C` for quasi-triangular `T` by block
/// back-substitution, sweeping block columns and rows from last to first.
fn solve_lyapunov_schur(t: &Matrix, c: &Matrix) -> Result<Matrix> {
    let n = t.nrows();
    let blocks = block_layout(t);
    let mut y = Matrix::zeros(n, n);
    for &(jb, sj) in blocks.iter().rev() {
        for &(ib, si) in blocks.iter().rev() {
            let mut rhs = c.view((ib, jb), (si, sj)).into_owned();
            let kb = ib + si;
            if kb < n {
                // Contributions T_ik Y_kj from rows below block i.
                rhs.gemm(-1.0, &t.view((ib, kb), (si, n - kb)), &y.view((kb, jb), (n - kb, sj)), 1.0);
            }
            let lb = jb + sj;
            if lb < n {
                // Contributions Y_il (T_jl)' from columns right of block j.
                rhs.gemm(
                    -1.0,
                    &y.view((ib, lb), (si, n - lb)),
                    &t.view((jb, lb), (sj, n - lb)).transpose(),
                    1.0,
                );
            }
            let tii = t.view((ib, ib), (si, si)).into_owned();
            let tjj = t.view((jb, jb), (sj, sj)).into_owned();
            let sol = small_block_solve(&tii, &tjj, &rhs, false)?;
            y.view_mut((ib, jb), (si, sj)).copy_from(&sol);
        }
    }
    Ok(y)
}

/// Solves `A1 X - X A2 = Q` via two real Schur forms and the
/// quasi-triangular kernel. Errors with `Singular` when the spectra of `A1`
/// and `A2` overlap.
pub fn solve_sylvester(a1: &Matrix, a2: &Matrix, q: &Matrix) -> Result<Matrix> {
    if a1.nrows() != a1.ncols() || a2.nrows() != a2.ncols() {
        return Err(Error::Dimension("sylvester coefficient matrices must be square".into()));
    }
    if q.nrows() != a1.nrows() || q.ncols() != a2.nrows() {
        return Err(Error::Dimension(format!(
            "sylvester: right-hand side is {}x{}, expected {}x{}",
            q.nrows(),
            q.ncols(),
            a1.nrows(),
            a2.nrows()
        )));
    }
    let s1 = real_schur(a1)?;
    let s2 = real_schur(a2)?;
    let c = s1.q.transpose() * q * &s2.q;
    let y = solve_sylvester_schur(&s1.t, &s2.t, &c)?;
    Ok(&s1.q * y * s2.q.transpose())
}

/// Solves `T1 Y - Y T2 = C` for quasi-triangular `T1`, `T2`: block columns
/// first to last, block rows last to first.
pub fn solve_sylvester_schur(t1: &Matrix, t2: &Matrix, c: &Matrix) -> Result<Matrix> {
    let n1 = t1.nrows();
    let n2 = t2.nrows();
    let rows = block_layout(t1);
    let cols = block_layout(t2);
    let mut y = Matrix::zeros(n1, n2);
    for &(jb, sj) in cols.iter() {
        for &(ib, si) in rows.iter().rev() {
            let mut rhs = c.view((ib, jb), (si, sj)).into_owned();
            let kb = ib + si;
            if kb < n1 {
                rhs.gemm(-1.0, &t1.view((ib, kb), (si, n1 - kb)), &y.view((kb, jb), (n1 - kb, sj)), 1.0);
            }
            if jb > 0 {
                rhs.gemm(1.0, &y.view((ib, 0), (si, jb)), &t2.view((0, jb), (jb, sj)), 1.0);
            }
            let tii = t1.view((ib, ib), (si, si)).into_owned();
            let tjj = t2.view((jb, jb), (sj, sj)).into_owned();
            let sol = small_block_solve(&tii, &tjj, &rhs, true)?;
            y.view_mut((ib, jb), (si, sj)).copy_from(&sol);
        }
    }
    Ok(y)
}

/// Solves the coupled diagonal-block equation `T1 Y + s Y T2' = R` with
/// `s = +1` (Lyapunov) or, when `minus` is set, `T1 Y - Y T2 = R`
/// (Sylvester), through the Kronecker system on vec(Y).
fn small_block_solve(t1: &Matrix, t2: &Matrix, rhs: &Matrix, minus: bool) -> Result<Matrix> {
    let (p, q) = (t1.nrows(), t2.nrows());
    let eye_p = Matrix::identity(p, p);
    let eye_q = Matrix::identity(q, q);
    // Column-major vec: vec(T1 Y) = (I (x) T1) vec Y; vec(Y M) = (M' (x) I) vec Y.
    let m = if minus {
        eye_q.kronecker(t1) - t2.transpose().kronecker(&eye_p)
    } else {
        // Y T2' term: M = T2', so M' = T2.
        eye_q.kronecker(t1) + t2.kronecker(&eye_p)
    };
    let b = Matrix::from_iterator(p * q, 1, rhs.iter().copied());
    let lu = LU::new(m);
    let sol = lu.solve(&b).ok_or_else(|| {
        Error::Singular("sylvester/lyapunov block system singular (shared eigenvalues)".into())
    })?;
    Ok(Matrix::from_iterator(p, q, sol.iter().copied()))
}
