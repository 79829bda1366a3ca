//! Dense nonsymmetric eigendecomposition: eigenvalues plus right and left
//! eigenvector bases in real block form, obtained from one real Schur form
//! by quasi-triangular back-substitution.
//!
//! A complex pair `alpha +- i beta` (beta > 0) occupies two real columns
//! `[vr vi]` with `A [vr vi] = [vr vi] [[alpha, beta], [-beta, alpha]]`,
//! i.e. `A V = V lambda`. Left columns hold real and imaginary parts of the
//! classical left eigenvectors (eigenvectors of `A'` at the conjugate
//! eigenvalue), so `A' L = L lambda'`; that orientation is what makes the
//! cross Gram `L' V` block-commute with `lambda`, and when it is invertible
//! the left basis is rescaled so `L' V = I`.

use super::schur::{block_layout, real_schur};
use super::{Matrix, Vector, DENSE_CAP};
use crate::error::{Error, Result};
use nalgebra::Complex;

type C = Complex<f64>;

pub struct EigDecomposition {
    /// Eigenvalues in Schur block order; pairs emit `+im` then `-im`.
    pub values: Vec<C>,
    /// Real block-diagonal eigenvalue matrix.
    pub lambda: Matrix,
    /// Right eigenvector basis, `A V = V lambda`.
    pub right: Matrix,
    /// Left eigenvector basis, `A' L = L lambda'`, scaled so `L' V = I`
    /// when `biorthonormal` is true.
    pub left: Matrix,
    pub biorthonormal: bool,
}

/// Complex eigenvector of the standardized 2x2 block `[[a, b], [c, a]]`
/// for the eigenvalue `a + i sqrt(-bc)`; picks the better-conditioned of
/// the two closed forms.
fn block2_eigvec(b: f64, c: f64) -> (C, C) {
    let delta = (-b * c).max(0.0).sqrt();
    if b.abs() >= c.abs() {
        (C::new(b, 0.0), C::new(0.0, delta))
    } else {
        (C::new(0.0, delta), C::new(c, 0.0))
    }
}

/// Solves the 1x1 or 2x2 complex shifted diagonal system
/// `(T_block - lambda I) y = rhs`, perturbing near-singular pivots.
fn solve_shifted_block(t: &Matrix, start: usize, size: usize, lambda: C, rhs: &[C], smin: f64) -> Vec<C> {
    if size == 1 {
        let mut d = C::new(t[(start, start)], 0.0) - lambda;
        if d.norm() < smin {
            d = C::new(smin, 0.0);
        }
        vec![rhs[0] / d]
    } else {
        let m00 = C::new(t[(start, start)], 0.0) - lambda;
        let m01 = C::new(t[(start, start + 1)], 0.0);
        let m10 = C::new(t[(start + 1, start)], 0.0);
        let m11 = C::new(t[(start + 1, start + 1)], 0.0) - lambda;
        let mut det = m00 * m11 - m01 * m10;
        if det.norm() < smin * smin {
            det = C::new(smin * smin, 0.0);
        }
        vec![
            (rhs[0] * m11 - rhs[1] * m01) / det,
            (rhs[1] * m00 - rhs[0] * m10) / det,
        ]
    }
}

/// Normalizes a complex vector to unit norm with the largest-modulus entry
/// rotated onto the positive real axis (deterministic output).
fn normalize_phase(y: &mut [C]) {
    let mut pivot = 0;
    for (i, v) in y.iter().enumerate() {
        if v.norm() > y[pivot].norm() {
            pivot = i;
        }
    }
    let p = y[pivot];
    if p.norm() == 0.0 {
        return;
    }
    let phase = p.conj() / p.norm();
    let scale: f64 = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    for v in y.iter_mut() {
        *v = *v * phase / scale;
    }
}

pub fn eig_dense(a: &Matrix) -> Result<EigDecomposition> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension("eig input must be square".into()));
    }
    if n > DENSE_CAP {
        return Err(Error::InvalidArgument(format!(
            "dense eigendecomposition capped at {DENSE_CAP}, got {n}"
        )));
    }
    let schur = real_schur(a)?;
    let t = &schur.t;
    let blocks = block_layout(t);
    let smin = f64::EPSILON * t.norm().max(f64::MIN_POSITIVE);

    let mut values = Vec::with_capacity(n);
    let mut lambda = Matrix::zeros(n, n);
    let mut right = Matrix::zeros(n, n);
    let mut left = Matrix::zeros(n, n);

    for (bi, &(jb, sj)) in blocks.iter().enumerate() {
        let (lam, init): (C, Vec<C>) = if sj == 1 {
            (C::new(t[(jb, jb)], 0.0), vec![C::new(1.0, 0.0)])
        } else {
            let alpha = t[(jb, jb)];
            let (b, c) = (t[(jb, jb + 1)], t[(jb + 1, jb)]);
            let delta = (-b * c).max(0.0).sqrt();
            let (v0, v1) = block2_eigvec(b, c);
            (C::new(alpha, delta), vec![v0, v1])
        };

        // Right eigenvector of T: support on rows 0..jb+sj, backward sweep.
        let mut y = vec![C::new(0.0, 0.0); n];
        y[jb..jb + sj].copy_from_slice(&init);
        for &(ib, si) in blocks[..bi].iter().rev() {
            let mut rhs = vec![C::new(0.0, 0.0); si];
            for r in 0..si {
                let mut acc = C::new(0.0, 0.0);
                for k in (ib + si)..(jb + sj) {
                    acc += C::new(t[(ib + r, k)], 0.0) * y[k];
                }
                rhs[r] = -acc;
            }
            let sol = solve_shifted_block(t, ib, si, lam, &rhs, smin);
            y[ib..ib + si].copy_from_slice(&sol);
        }
        normalize_phase(&mut y[..jb + sj]);

        // Left eigenvector of T: eigenvector of T' at the conjugate
        // eigenvalue, so the real block relation reads T' Z = Z lambda'.
        // Support jb.., forward sweep.
        let lamc = lam.conj();
        let mut z = vec![C::new(0.0, 0.0); n];
        if sj == 1 {
            z[jb] = C::new(1.0, 0.0);
        } else {
            // T_block' = [[a, c], [b, a]]; conjugate of the +delta formula.
            let (b, c) = (t[(jb, jb + 1)], t[(jb + 1, jb)]);
            let (w0, w1) = block2_eigvec(c, b);
            z[jb] = w0.conj();
            z[jb + 1] = w1.conj();
        }
        for &(kb, sk) in blocks[bi + 1..].iter() {
            let mut rhs = vec![C::new(0.0, 0.0); sk];
            for r in 0..sk {
                let mut acc = C::new(0.0, 0.0);
                for m in jb..kb {
                    // (T')[kb+r, m] = T[m, kb+r]
                    acc += C::new(t[(m, kb + r)], 0.0) * z[m];
                }
                rhs[r] = -acc;
            }
            // Solve (T_kk' - conj(lambda) I) w = rhs; transpose swaps the
            // off-diagonal entries of the 2x2 block.
            let sol = if sk == 1 {
                solve_shifted_block(t, kb, 1, lamc, &rhs, smin)
            } else {
                let m00 = C::new(t[(kb, kb)], 0.0) - lamc;
                let m01 = C::new(t[(kb + 1, kb)], 0.0);
                let m10 = C::new(t[(kb, kb + 1)], 0.0);
                let m11 = C::new(t[(kb + 1, kb + 1)], 0.0) - lamc;
                let mut det = m00 * m11 - m01 * m10;
                if det.norm() < smin * smin {
                    det = C::new(smin * smin, 0.0);
                }
                vec![
                    (rhs[0] * m11 - rhs[1] * m01) / det,
                    (rhs[1] * m00 - rhs[0] * m10) / det,
                ]
            };
            z[kb..kb + sk].copy_from_slice(&sol);
        }
        normalize_phase(&mut z[jb..]);

        // Map back through Q and store in real block form.
        let qy = map_complex(&schur.q, &y);
        let qz = map_complex(&schur.q, &z);
        if sj == 1 {
            values.push(lam);
            lambda[(jb, jb)] = lam.re;
            right.set_column(jb, &qy.0);
            left.set_column(jb, &qz.0);
        } else {
            values.push(lam);
            values.push(lam.conj());
            lambda[(jb, jb)] = lam.re;
            lambda[(jb + 1, jb + 1)] = lam.re;
            lambda[(jb, jb + 1)] = lam.im;
            lambda[(jb + 1, jb)] = -lam.im;
            right.set_column(jb, &qy.0);
            right.set_column(jb + 1, &qy.1);
            left.set_column(jb, &qz.0);
            left.set_column(jb + 1, &qz.1);
        }
    }

    // Rescale the left basis so L' V = I, block by block.
    let mut biorthonormal = true;
    for &(jb, sj) in blocks.iter() {
        if sj == 1 {
            let s = left.column(jb).dot(&right.column(jb));
            if s.abs() < 1e-300 {
                biorthonormal = false;
                continue;
            }
            let scaled = left.column(jb) / s;
            left.set_column(jb, &scaled);
        } else {
            let lb = left.view((0, jb), (n, 2)).into_owned();
            let vb = right.view((0, jb), (n, 2)).into_owned();
            let s = lb.transpose() * &vb;
            let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
            if det.abs() < 1e-300 {
                biorthonormal = false;
                continue;
            }
            let sinv_t = Matrix::from_row_slice(
                2,
                2,
                &[s[(1, 1)] / det, -s[(1, 0)] / det, -s[(0, 1)] / det, s[(0, 0)] / det],
            );
            let scaled = lb * sinv_t;
            left.view_mut((0, jb), (n, 2)).copy_from(&scaled);
        }
    }

    Ok(EigDecomposition { values, lambda, right, left, biorthonormal })
}

/// Real and imaginary parts of `Q y` for complex `y`.
fn map_complex(q: &Matrix, y: &[C]) -> (Vector, Vector) {
    let n = q.nrows();
    let yr = Vector::from_iterator(y.len(), y.iter().map(|v| v.re));
    let yi = Vector::from_iterator(y.len(), y.iter().map(|v| v.im));
    let mut re = Vector::zeros(n);
    let mut im = Vector::zeros(n);
    re.gemv(1.0, q, &yr, 0.0);
    im.gemv(1.0, q, &yi, 0.0);
    (re, im)
}
