//! Real Schur form with standardized 2x2 blocks, direct adjacent block
//! swapping, and selection-based eigenvalue reordering.
//!
//! Standard form: every nonzero subdiagonal entry belongs to a 2x2 block
//! `[[a, b], [c, a]]` with `b*c < 0`, holding the complex pair
//! `a +- i sqrt(-b c)`. Reordering bubbles selected blocks to the top by
//! orthogonal swaps of adjacent blocks (Sylvester solve + small QR), each
//! verified against a backward-error bound before being accepted.

use super::ops::full_qr;
use super::{check_finite_matrix, Matrix};
use crate::error::{Error, Result};
use nalgebra::Complex;

pub struct RealSchur {
    /// Orthogonal transform with `A = Q T Q'`.
    pub q: Matrix,
    /// Quasi-upper-triangular factor with standardized 2x2 blocks.
    pub t: Matrix,
}

/// Computes the standardized real Schur form of a dense square matrix.
pub fn real_schur(a: &Matrix) -> Result<RealSchur> {
    check_finite_matrix("schur input", a)?;
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension("schur input must be square".into()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(RealSchur { q: Matrix::identity(0, 0), t: Matrix::identity(0, 0) });
    }
    let max_iter = 100 * n.max(10);
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, max_iter)
        .ok_or_else(|| Error::NoConvergence("real Schur iteration cap exceeded".into()))?;
    let (q, t) = schur.unpack();
    let mut out = RealSchur { q, t };
    standardize(&mut out);
    Ok(out)
}

/// Eigenvalues read off a standardized quasi-triangular factor. Complex
/// pairs are emitted with the positive imaginary part first.
pub fn schur_eigenvalues(t: &Matrix) -> Vec<Complex<f64>> {
    let n = t.nrows();
    let mut vals = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            let a = 0.5 * (t[(i, i)] + t[(i + 1, i + 1)]);
            let prod = t[(i, i + 1)] * t[(i + 1, i)];
            let im = (-prod).max(0.0).sqrt();
            vals.push(Complex::new(a, im));
            vals.push(Complex::new(a, -im));
            i += 2;
        } else {
            vals.push(Complex::new(t[(i, i)], 0.0));
            i += 1;
        }
    }
    vals
}

/// Block starts and sizes of a standardized quasi-triangular factor.
pub(crate) fn block_layout(t: &Matrix) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Applies the 2x2 rotation `g` on rows/cols `(i, i+1)` of `t` and the
/// columns of `q`: `t <- G' t G`, `q <- q G`.
fn apply_rotation(s: &mut RealSchur, i: usize, g: &Matrix) {
    let n = s.t.nrows();
    let gt = g.transpose();
    // Rows i..i+2, columns i..n (entries left of the diagonal are zero).
    let block = s.t.view((i, i), (2, n - i)).into_owned();
    s.t.view_mut((i, i), (2, n - i)).copy_from(&(&gt * block));
    // Columns i..i+2, rows 0..i+2.
    let block = s.t.view((0, i), (i + 2, 2)).into_owned();
    s.t.view_mut((0, i), (i + 2, 2)).copy_from(&(block * g));
    let block = s.q.view((0, i), (s.q.nrows(), 2)).into_owned();
    s.q.view_mut((0, i), (s.q.nrows(), 2)).copy_from(&(block * g));
}

/// Splits real-eigenvalue 2x2 blocks and rotates complex blocks into the
/// equal-diagonal standard form.
fn standardize(s: &mut RealSchur) {
    let n = s.t.nrows();
    let mut i = 0;
    while i + 1 < n {
        if s.t[(i + 1, i)] == 0.0 {
            i += 1;
            continue;
        }
        let (a, b) = (s.t[(i, i)], s.t[(i, i + 1)]);
        let (c, d) = (s.t[(i + 1, i)], s.t[(i + 1, i + 1)]);
        let half_diff = 0.5 * (a - d);
        let disc = half_diff * half_diff + b * c;
        if disc >= 0.0 {
            // Real eigenvalues: rotate an eigenvector into e1 to split.
            let mean = 0.5 * (a + d);
            let sd = disc.sqrt();
            let lambda = if mean >= 0.0 { mean + sd } else { mean - sd };
            // Candidate eigenvectors from either row of (M - lambda I).
            let v1 = (b, lambda - a);
            let v2 = (lambda - d, c);
            let (vx, vy) = if v1.0.hypot(v1.1) >= v2.0.hypot(v2.1) { v1 } else { v2 };
            let norm = vx.hypot(vy);
            if norm > 0.0 {
                let g = Matrix::from_row_slice(2, 2, &[vx / norm, -vy / norm, vy / norm, vx / norm]);
                apply_rotation(s, i, &g);
            }
            s.t[(i + 1, i)] = 0.0;
            i += 1;
        } else {
            // Complex pair: equalize the diagonal.
            let num = a - d;
            let den = b + c;
            if num != 0.0 {
                let theta = 0.5 * num.atan2(-den);
                let (sn, cs) = theta.sin_cos();
                let g = Matrix::from_row_slice(2, 2, &[cs, -sn, sn, cs]);
                apply_rotation(s, i, &g);
                let mean = 0.5 * (s.t[(i, i)] + s.t[(i + 1, i + 1)]);
                s.t[(i, i)] = mean;
                s.t[(i + 1, i + 1)] = mean;
            }
            i += 2;
        }
    }
}

/// Swaps the adjacent diagonal blocks at `i` (sizes `p1`, then `p2`) by an
/// orthogonal similarity, verifying the backward error.
fn swap_adjacent(s: &mut RealSchur, i: usize, p1: usize, p2: usize) -> Result<()> {
    let n = s.t.nrows();
    let e = i + p1 + p2;
    let a11 = s.t.view((i, i), (p1, p1)).into_owned();
    let a12 = s.t.view((i, i + p1), (p1, p2)).into_owned();
    let a22 = s.t.view((i + p1, i + p1), (p2, p2)).into_owned();
    let t_scale = s.t.norm();

    // Solve A11 X - X A22 = A12 through the Kronecker form.
    let k = Matrix::identity(p2, p2).kronecker(&a11) - a22.transpose().kronecker(&Matrix::identity(p1, p1));
    let rhs = nalgebra::DVector::from_iterator(p1 * p2, a12.iter().copied());
    let lu = nalgebra::linalg::LU::new(k);
    let x_vec = lu.solve(&rhs).ok_or_else(|| {
        Error::NoConvergence("block swap: coincident eigenvalues across blocks".into())
    })?;
    let x = Matrix::from_iterator(p1, p2, x_vec.iter().copied());

    // Columns of [X; -I] span the A22-invariant subspace; rotate it first.
    let mut m = Matrix::zeros(p1 + p2, p2);
    m.view_mut((0, 0), (p1, p2)).copy_from(&x);
    m.view_mut((p1, 0), (p2, p2)).copy_from(&(-Matrix::identity(p2, p2)));
    let (g, _) = full_qr(&m);

    // Candidate window after the swap; reject if the zero block does not
    // vanish to round-off (swap would be numerically unstable).
    let window = s.t.view((i, i), (p1 + p2, p1 + p2)).into_owned();
    let swapped = g.transpose() * &window * &g;
    let resid = swapped.view((p2, 0), (p1, p2)).norm();
    if resid > 1e3 * f64::EPSILON * t_scale.max(1e-300) {
        return Err(Error::NoConvergence(format!(
            "block swap rejected: backward error {resid:.3e} vs scale {t_scale:.3e}"
        )));
    }

    // Apply globally: rows i..e (cols i..n), cols i..e (rows 0..e), Q cols.
    let gt = g.transpose();
    let rows = s.t.view((i, i), (p1 + p2, n - i)).into_owned();
    s.t.view_mut((i, i), (p1 + p2, n - i)).copy_from(&(&gt * rows));
    let cols = s.t.view((0, i), (e, p1 + p2)).into_owned();
    s.t.view_mut((0, i), (e, p1 + p2)).copy_from(&(cols * &g));
    let qcols = s.q.view((0, i), (s.q.nrows(), p1 + p2)).into_owned();
    s.q.view_mut((0, i), (s.q.nrows(), p1 + p2)).copy_from(&(qcols * &g));

    // Enforce the structural zeros, then re-standardize the window.
    for col in i..(i + p2) {
        for row in (i + p2)..e {
            s.t[(row, col)] = 0.0;
        }
    }
    if p2 == 2 {
        restandardize_block(s, i);
    }
    if p1 == 2 {
        restandardize_block(s, i + p2);
    }
    Ok(())
}

/// Re-standardizes the 2x2 block starting at `i` after a swap.
fn restandardize_block(s: &mut RealSchur, i: usize) {
    let (a, b) = (s.t[(i, i)], s.t[(i, i + 1)]);
    let (c, d) = (s.t[(i + 1, i)], s.t[(i + 1, i + 1)]);
    if c == 0.0 {
        return;
    }
    let half_diff = 0.5 * (a - d);
    let disc = half_diff * half_diff + b * c;
    if disc >= 0.0 {
        let mean = 0.5 * (a + d);
        let sd = disc.sqrt();
        let lambda = if mean >= 0.0 { mean + sd } else { mean - sd };
        let v1 = (b, lambda - a);
        let v2 = (lambda - d, c);
        let (vx, vy) = if v1.0.hypot(v1.1) >= v2.0.hypot(v2.1) { v1 } else { v2 };
        let norm = vx.hypot(vy);
        if norm > 0.0 {
            let g = Matrix::from_row_slice(2, 2, &[vx / norm, -vy / norm, vy / norm, vx / norm]);
            apply_rotation(s, i, &g);
        }
        s.t[(i + 1, i)] = 0.0;
    } else {
        let num = a - d;
        let den = b + c;
        if num != 0.0 {
            let theta = 0.5 * num.atan2(-den);
            let (sn, cs) = theta.sin_cos();
            let g = Matrix::from_row_slice(2, 2, &[cs, -sn, sn, cs]);
            apply_rotation(s, i, &g);
            let mean = 0.5 * (s.t[(i, i)] + s.t[(i + 1, i + 1)]);
            s.t[(i, i)] = mean;
            s.t[(i + 1, i + 1)] = mean;
        }
    }
}

/// Block eigenvalue used for selection (representative of the pair).
fn block_eigenvalue(t: &Matrix, start: usize, size: usize) -> Complex<f64> {
    if size == 1 {
        Complex::new(t[(start, start)], 0.0)
    } else {
        let a = 0.5 * (t[(start, start)] + t[(start + 1, start + 1)]);
        let prod = t[(start, start + 1)] * t[(start + 1, start)];
        Complex::new(a, (-prod).max(0.0).sqrt())
    }
}

/// Reorders the Schur form so every block whose eigenvalue satisfies
/// `select(re, im)` comes first. Returns the dimension of the selected
/// leading invariant subspace.
pub fn reorder_schur(s: &mut RealSchur, select: &dyn Fn(f64, f64) -> bool) -> Result<usize> {
    loop {
        let blocks = block_layout(&s.t);
        let flags: Vec<bool> = blocks
            .iter()
            .map(|&(start, size)| {
                let ev = block_eigenvalue(&s.t, start, size);
                select(ev.re, ev.im)
            })
            .collect();
        // First unselected block that has a selected block somewhere below.
        let mut swap_at: Option<usize> = None;
        for k in 0..blocks.len() {
            if !flags[k] {
                if let Some(j) = (k + 1..blocks.len()).find(|&j| flags[j]) {
                    // Bubble block j upward by one position: swap (j-1, j).
                    swap_at = Some(j - 1);
                    break;
                }
            }
        }
        match swap_at {
            None => {
                let dim = blocks
                    .iter()
                    .zip(flags.iter())
                    .filter(|(_, &f)| f)
                    .map(|(&(_, size), _)| size)
                    .sum();
                return Ok(dim);
            }
            Some(jm1) => {
                let (start, p1) = block_layout(&s.t)[jm1];
                let p2 = block_layout(&s.t)[jm1 + 1].1;
                swap_adjacent(s, start, p1, p2)?;
            }
        }
    }
}
