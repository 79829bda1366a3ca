//! Weighted inner products, adjoint-consistency checking, and SVD/QR
//! wrappers with deterministic conventions.

use super::{check_finite_matrix, check_finite_vector, InnerProductWeight, LinearOperator, Matrix, Vector};
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `<x, y>_W = x' W y`.
pub fn weighted_inner(x: &Vector, y: &Vector, w: &InnerProductWeight) -> Result<f64> {
    check_finite_vector("x", x)?;
    check_finite_vector("y", y)?;
    if x.len() != y.len() || x.len() != w.dim() {
        return Err(Error::Dimension(format!(
            "inner product dims {} / {} / weight {}",
            x.len(),
            y.len(),
            w.dim()
        )));
    }
    Ok(w.inner(x, y))
}

/// Max over random pairs of the normalized adjoint-pairing defect
/// `|<Ax,z>_W - <x,A*z>_W| / (||x||_W ||z||_W ||A||_est)`.
/// Deterministic for a fixed seed.
pub fn adjoint_residual(
    a: &dyn LinearOperator,
    w: &InnerProductWeight,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let n = a.dim();
    if n != w.dim() {
        return Err(Error::Dimension("operator vs weight dim".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
    };
    // Operator norm estimate from the same sample set keeps the residual
    // scale-invariant without a separate power iteration.
    let mut a_est: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = draw(&mut rng);
        let z = draw(&mut rng);
        let ax = a.apply(&x);
        let az = a.apply_adjoint(&z);
        let nx = w.norm(&x);
        let nz = w.norm(&z);
        if nx == 0.0 || nz == 0.0 {
            continue;
        }
        a_est = a_est.max(w.norm(&ax) / nx).max(w.norm(&az) / nz);
        let defect = (w.inner(&ax, &z) - w.inner(&x, &az)).abs() / (nx * nz);
        worst = worst.max(defect);
    }
    if a_est == 0.0 {
        return Ok(0.0);
    }
    Ok(worst / a_est)
}

/// Thin SVD with singular values sorted nonincreasing and a deterministic
/// sign convention (largest-magnitude entry of each left vector positive).
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vector,
    pub v: Matrix,
}

/// `M = U diag(sigma) V'`; reports non-convergence instead of returning
/// silently wrong factors.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    check_finite_matrix("svd input", m)?;
    let decomp = nalgebra::linalg::SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::NoConvergence("SVD iteration cap exceeded".into()))?;
    let u_raw = decomp.u.ok_or_else(|| Error::NoConvergence("SVD missing U".into()))?;
    let vt_raw = decomp.v_t.ok_or_else(|| Error::NoConvergence("SVD missing V".into()))?;
    let s_raw = decomp.singular_values;
    let k = s_raw.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s_raw[j].partial_cmp(&s_raw[i]).unwrap());
    let mut u = Matrix::zeros(u_raw.nrows(), k);
    let mut v = Matrix::zeros(vt_raw.ncols(), k);
    let mut sigma = Vector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = s_raw[src];
        let mut ucol = u_raw.column(src).into_owned();
        let mut vcol = vt_raw.row(src).transpose();
        // Deterministic sign: the largest-magnitude entry of u is positive.
        let mut pivot = 0;
        for i in 0..ucol.len() {
            if ucol[i].abs() > ucol[pivot].abs() {
                pivot = i;
            }
        }
        if ucol.len() > 0 && ucol[pivot] < 0.0 {
            ucol.neg_mut();
            vcol.neg_mut();
        }
        u.set_column(dst, &ucol);
        v.set_column(dst, &vcol);
    }
    Ok(SvdResult { u, sigma, v })
}

/// W-orthonormalizes the columns of `m` (left to right, spans of leading
/// columns preserved) by reducing to a Euclidean Gram-Schmidt on `F m` and
/// mapping back through the factor. Two orthogonalization passes keep the
/// result orthonormal to round-off. Errors with `RankDeficient` when a
/// column collapses below `1e-10` of its original norm.
pub fn w_orthonormalize(m: &Matrix, w: &InnerProductWeight) -> Result<Matrix> {
    check_finite_matrix("orthonormalization input", m)?;
    if m.nrows() != w.dim() {
        return Err(Error::Dimension(format!(
            "basis rows {} vs weight dim {}",
            m.nrows(),
            w.dim()
        )));
    }
    let mut f = w.factor_apply_matrix(m);
    let cols = f.ncols();
    for j in 0..cols {
        let original = f.column(j).norm();
        for _pass in 0..2 {
            for i in 0..j {
                let r = f.column(i).dot(&f.column(j));
                let update = f.column(j) - f.column(i) * r;
                f.set_column(j, &update);
            }
        }
        let nrm = f.column(j).norm();
        if nrm <= 1e-10 * original.max(f64::MIN_POSITIVE) {
            return Err(Error::RankDeficient(format!(
                "column {j} lies in the span of the preceding columns"
            )));
        }
        let scaled = f.column(j) / nrm;
        f.set_column(j, &scaled);
    }
    Ok(w.factor_solve_matrix(&f))
}

/// Largest principal angle between the column spans of two W-orthonormal
/// bases of equal rank, reported as its sine. Zero means identical spans.
pub fn subspace_gap(u1: &Matrix, u2: &Matrix, w: &InnerProductWeight) -> Result<f64> {
    if u1.ncols() != u2.ncols() || u1.nrows() != u2.nrows() {
        return Err(Error::Dimension("subspace bases must have equal shape".into()));
    }
    if u1.ncols() == 0 {
        return Ok(0.0);
    }
    let gram = w.pairing(u1, u2);
    let s = svd(&gram)?;
    let cos = s.sigma[s.sigma.len() - 1].clamp(0.0, 1.0);
    Ok((1.0 - cos * cos).max(0.0).sqrt())
}

/// Full Householder QR: returns orthogonal `Q` (m-by-m) and `R` (m-by-n)
/// with `M = Q R`. Needed where thin factors are not enough (orthogonal
/// complements, block swaps).
pub fn full_qr(m: &Matrix) -> (Matrix, Matrix) {
    let rows = m.nrows();
    let cols = m.ncols();
    let mut r = m.clone();
    let mut q = Matrix::identity(rows, rows);
    for j in 0..cols.min(rows.saturating_sub(1)) {
        // Householder vector for column j below the diagonal.
        let x = r.view((j, j), (rows - j, 1)).into_owned();
        let alpha = -x[(0, 0)].signum() * x.norm();
        if alpha == 0.0 {
            continue;
        }
        let mut v = x;
        v[(0, 0)] -= alpha;
        let vnorm = v.norm();
        if vnorm < f64::MIN_POSITIVE.sqrt() {
            continue;
        }
        v /= vnorm;
        // r <- (I - 2vv') r ; q <- q (I - 2vv')
        let vt_r = v.transpose() * r.view((j, 0), (rows - j, cols));
        let mut rv = r.view_mut((j, 0), (rows - j, cols));
        rv.gemm(-2.0, &v, &vt_r, 1.0);
        let q_v = q.view((0, j), (rows, rows - j)) * &v;
        let mut qv = q.view_mut((0, j), (rows, rows - j));
        qv.gemm(-2.0, &q_v, &v.transpose(), 1.0);
    }
    // Clean the strictly-lower part of R.
    for j in 0..cols {
        for i in (j + 1)..rows {
            r[(i, j)] = 0.0;
        }
    }
    (q, r)
}
