//! Dense linear-algebra kernels and the operator/state-space abstraction
//! with weighted inner products.
//!
//! All state-space computations downstream are phrased in an inner product
//! `<x, y>_W = x' W y` for a symmetric positive-definite `W`. The adjoint of
//! an operator `A` in that product is `A* = W^{-1} A' W`; weighted
//! computations reduce to Euclidean ones through a factor `F` with
//! `W = F' F`.

mod care;
mod eig;
mod lyap;
mod ops;
mod propagate;
mod schur;

pub use care::solve_care;
pub use eig::{eig_dense, EigDecomposition};
pub use lyap::{solve_lyapunov, solve_sylvester, solve_sylvester_schur};
pub use ops::{
    adjoint_residual, full_qr, subspace_gap, svd, w_orthonormalize, weighted_inner, SvdResult,
};
pub use propagate::{propagate, CnStepper, ExpmStepper, Scheme};
pub use schur::{real_schur, reorder_schur, schur_eigenvalues, RealSchur};

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Dense real vector. All kernels work in double precision.
pub type Vector = DVector<f64>;
/// Dense real matrix, row-major semantics in the exchange format.
pub type Matrix = DMatrix<f64>;

/// Default cap on dense decompositions (Schur, eigenvectors, Riccati).
pub const DENSE_CAP: usize = 400;

pub(crate) fn check_finite_matrix(name: &str, m: &Matrix) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.into()))
    }
}

pub(crate) fn check_finite_vector(name: &str, v: &Vector) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.into()))
    }
}

/// Symmetric positive-definite weight defining the state-space inner
/// product. Carries a factor `F` with `W = F' F` so weighted computations
/// can be reduced to Euclidean ones.
#[derive(Clone, Debug)]
pub enum InnerProductWeight {
    /// Euclidean product on an n-dimensional space.
    Identity(usize),
    /// Diagonal weight with strictly positive entries.
    Diagonal(Vector),
    /// General SPD weight with a cached upper-triangular Cholesky factor.
    Spd { w: Matrix, factor: Matrix },
}

impl InnerProductWeight {
    pub fn identity(n: usize) -> Self {
        InnerProductWeight::Identity(n)
    }

    pub fn diagonal(d: Vector) -> Result<Self> {
        check_finite_vector("diagonal weight", &d)?;
        if d.iter().any(|&x| x <= 0.0) {
            return Err(Error::NotSpd("diagonal weight has nonpositive entry".into()));
        }
        Ok(InnerProductWeight::Diagonal(d))
    }

    /// General SPD weight; symmetry is required to `1e-12 * ||W||` and
    /// positive definiteness is established by the Cholesky factorization.
    pub fn spd(w: Matrix) -> Result<Self> {
        check_finite_matrix("weight", &w)?;
        if w.nrows() != w.ncols() {
            return Err(Error::Dimension("weight must be square".into()));
        }
        let asym = (&w - w.transpose()).norm();
        if asym > 1e-12 * w.norm().max(f64::MIN_POSITIVE) {
            return Err(Error::NotSpd(format!(
                "asymmetry {asym:.3e} exceeds 1e-12 * ||W||"
            )));
        }
        let sym = 0.5 * (&w + w.transpose());
        let chol = nalgebra::linalg::Cholesky::new(sym.clone())
            .ok_or_else(|| Error::NotSpd("Cholesky factorization failed".into()))?;
        let factor = chol.l().transpose();
        Ok(InnerProductWeight::Spd { w: sym, factor })
    }

    pub fn dim(&self) -> usize {
        match self {
            InnerProductWeight::Identity(n) => *n,
            InnerProductWeight::Diagonal(d) => d.len(),
            InnerProductWeight::Spd { w, .. } => w.nrows(),
        }
    }

    /// `<x, y>_W`.
    pub fn inner(&self, x: &Vector, y: &Vector) -> f64 {
        match self {
            InnerProductWeight::Identity(_) => x.dot(y),
            InnerProductWeight::Diagonal(d) => {
                x.iter().zip(y.iter()).zip(d.iter()).map(|((a, b), w)| a * b * w).sum()
            }
            InnerProductWeight::Spd { w, .. } => x.dot(&(w * y)),
        }
    }

    /// `||x||_W`.
    pub fn norm(&self, x: &Vector) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    /// `W x`.
    pub fn apply(&self, x: &Vector) -> Vector {
        match self {
            InnerProductWeight::Identity(_) => x.clone(),
            InnerProductWeight::Diagonal(d) => x.component_mul(d),
            InnerProductWeight::Spd { w, .. } => w * x,
        }
    }

    /// `W M` for matrix columns.
    pub fn apply_matrix(&self, m: &Matrix) -> Matrix {
        match self {
            InnerProductWeight::Identity(_) => m.clone(),
            InnerProductWeight::Diagonal(d) => {
                let mut out = m.clone();
                for (i, w) in d.iter().enumerate() {
                    out.row_mut(i).scale_mut(*w);
                }
                out
            }
            InnerProductWeight::Spd { w, .. } => w * m,
        }
    }

    /// `W^{-1} x`, via two triangular solves with the cached factor.
    pub fn solve(&self, x: &Vector) -> Vector {
        let m = Matrix::from_column_slice(x.len(), 1, x.as_slice());
        let s = self.solve_matrix(&m);
        Vector::from_iterator(x.len(), s.iter().copied())
    }

    /// `W^{-1} M` for matrix columns.
    pub fn solve_matrix(&self, m: &Matrix) -> Matrix {
        match self {
            InnerProductWeight::Identity(_) => m.clone(),
            InnerProductWeight::Diagonal(d) => {
                let mut out = m.clone();
                for (i, w) in d.iter().enumerate() {
                    out.row_mut(i).scale_mut(1.0 / w);
                }
                out
            }
            InnerProductWeight::Spd { factor, .. } => {
                // W = F'F: solve F' y = m (lower), then F x = y (upper).
                let y = factor
                    .transpose()
                    .solve_lower_triangular(m)
                    .expect("Cholesky factor is nonsingular");
                factor
                    .solve_upper_triangular(&y)
                    .expect("Cholesky factor is nonsingular")
            }
        }
    }

    /// The factor `F` with `W = F' F`, as a dense matrix.
    pub fn factor_matrix(&self) -> Matrix {
        let n = self.dim();
        match self {
            InnerProductWeight::Identity(_) => Matrix::identity(n, n),
            InnerProductWeight::Diagonal(d) => {
                Matrix::from_diagonal(&d.map(|x| x.sqrt()))
            }
            InnerProductWeight::Spd { factor, .. } => factor.clone(),
        }
    }

    /// `F M`, reducing weighted Gram computations to Euclidean ones.
    pub fn factor_apply_matrix(&self, m: &Matrix) -> Matrix {
        match self {
            InnerProductWeight::Identity(_) => m.clone(),
            InnerProductWeight::Diagonal(d) => {
                let mut out = m.clone();
                for (i, w) in d.iter().enumerate() {
                    out.row_mut(i).scale_mut(w.sqrt());
                }
                out
            }
            InnerProductWeight::Spd { factor, .. } => factor * m,
        }
    }

    /// `F^{-1} M` (used to map Euclidean-orthonormal bases back).
    pub fn factor_solve_matrix(&self, m: &Matrix) -> Matrix {
        match self {
            InnerProductWeight::Identity(_) => m.clone(),
            InnerProductWeight::Diagonal(d) => {
                let mut out = m.clone();
                for (i, w) in d.iter().enumerate() {
                    out.row_mut(i).scale_mut(1.0 / w.sqrt());
                }
                out
            }
            InnerProductWeight::Spd { factor, .. } => factor
                .solve_upper_triangular(m)
                .expect("Cholesky factor is nonsingular"),
        }
    }

    /// Dense `W`.
    pub fn as_matrix(&self) -> Matrix {
        let n = self.dim();
        match self {
            InnerProductWeight::Identity(_) => Matrix::identity(n, n),
            InnerProductWeight::Diagonal(d) => Matrix::from_diagonal(d),
            InnerProductWeight::Spd { w, .. } => w.clone(),
        }
    }

    /// `M' W N` without forming `W` densely for structured weights.
    pub fn pairing(&self, m: &Matrix, n: &Matrix) -> Matrix {
        m.transpose() * self.apply_matrix(n)
    }
}

/// Linear operator with a weighted adjoint.
///
/// `apply_adjoint` must realize the adjoint in the weight carried by the
/// surrounding system: `<A x, z>_W = <x, A* z>_W`.
pub trait LinearOperator: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &Vector) -> Vector;
    fn apply_adjoint(&self, z: &Vector) -> Vector;
    /// Dense realization when one exists; matrix-free operators return None.
    fn dense(&self) -> Option<&Matrix> {
        None
    }
    fn apply_matrix(&self, m: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.dim(), m.ncols());
        for j in 0..m.ncols() {
            out.set_column(j, &self.apply(&m.column(j).into_owned()));
        }
        out
    }
    fn apply_adjoint_matrix(&self, m: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.dim(), m.ncols());
        for j in 0..m.ncols() {
            out.set_column(j, &self.apply_adjoint(&m.column(j).into_owned()));
        }
        out
    }
}

/// Dense operator caching its W-adjoint `W^{-1} A' W`.
pub struct DenseOperator {
    a: Matrix,
    adj: Matrix,
}

impl DenseOperator {
    pub fn new(a: Matrix, w: &InnerProductWeight) -> Result<Self> {
        check_finite_matrix("operator", &a)?;
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension("operator must be square".into()));
        }
        if a.nrows() != w.dim() {
            return Err(Error::Dimension(format!(
                "operator dim {} vs weight dim {}",
                a.nrows(),
                w.dim()
            )));
        }
        let adj = w.solve_matrix(&w.apply_matrix(&a).transpose());
        Ok(DenseOperator { a, adj })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    /// Dense W-adjoint `W^{-1} A' W`.
    pub fn adjoint_matrix(&self) -> &Matrix {
        &self.adj
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn apply(&self, x: &Vector) -> Vector {
        &self.a * x
    }
    fn apply_adjoint(&self, z: &Vector) -> Vector {
        &self.adj * z
    }
    fn dense(&self) -> Option<&Matrix> {
        Some(&self.a)
    }
    fn apply_matrix(&self, m: &Matrix) -> Matrix {
        &self.a * m
    }
    fn apply_adjoint_matrix(&self, m: &Matrix) -> Matrix {
        &self.adj * m
    }
}

type ApplyFn = dyn Fn(&Vector) -> Vector + Send + Sync;

/// Matrix-free operator defined by forward and adjoint callbacks.
pub struct CallbackOperator {
    n: usize,
    fwd: Arc<ApplyFn>,
    adj: Arc<ApplyFn>,
}

impl CallbackOperator {
    pub fn new<F, G>(n: usize, fwd: F, adj: G) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
        G: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        CallbackOperator { n, fwd: Arc::new(fwd), adj: Arc::new(adj) }
    }
}

impl LinearOperator for CallbackOperator {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &Vector) -> Vector {
        (self.fwd)(x)
    }
    fn apply_adjoint(&self, z: &Vector) -> Vector {
        (self.adj)(z)
    }
}

/// Nonlinear plant interface: right-hand side, exact Jacobian, and a
/// time-stepper factory. Steppers may carry history (multistep schemes),
/// hence the mutable receiver.
pub trait NonlinearPlant: Send + Sync {
    fn dim(&self) -> usize;
    fn rhs(&self, x: &Vector) -> Vector;
    fn jacobian(&self, x: &Vector) -> Matrix;
    fn make_stepper(&self, dt: f64) -> Box<dyn PlantStepper>;
}

/// One-step integrator for a nonlinear plant. `forcing` is held constant
/// over the step (zero-order hold).
pub trait PlantStepper: Send {
    fn step(&mut self, x: &Vector, forcing: Option<&Vector>) -> Vector;
    fn dt(&self) -> f64;
}

/// Linear(izable) state-space system `x' = A x + B u`, `y = C x`, with a
/// weighted state inner product and an optional nonlinear plant behind it.
#[derive(Clone)]
pub struct StateSpaceSystem {
    pub a: Arc<dyn LinearOperator>,
    pub b: Matrix,
    pub c: Matrix,
    pub w: InnerProductWeight,
    pub nonlinear: Option<Arc<dyn NonlinearPlant>>,
}

impl StateSpaceSystem {
    pub fn new(
        a: Arc<dyn LinearOperator>,
        b: Matrix,
        c: Matrix,
        w: InnerProductWeight,
    ) -> Result<Self> {
        let n = a.dim();
        check_finite_matrix("input map", &b)?;
        check_finite_matrix("output map", &c)?;
        if b.nrows() != n {
            return Err(Error::Dimension(format!(
                "input map rows {} vs state dim {n}",
                b.nrows()
            )));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!(
                "output map cols {} vs state dim {n}",
                c.ncols()
            )));
        }
        if w.dim() != n {
            return Err(Error::Dimension(format!(
                "weight dim {} vs state dim {n}",
                w.dim()
            )));
        }
        Ok(StateSpaceSystem { a, b, c, w, nonlinear: None })
    }

    pub fn with_nonlinear(mut self, plant: Arc<dyn NonlinearPlant>) -> Self {
        self.nonlinear = Some(plant);
        self
    }

    pub fn dense_dynamics(a: Matrix, b: Matrix, c: Matrix, w: InnerProductWeight) -> Result<Self> {
        let op = DenseOperator::new(a, &w)?;
        StateSpaceSystem::new(Arc::new(op), b, c, w)
    }

    pub fn n(&self) -> usize {
        self.a.dim()
    }
    pub fn p(&self) -> usize {
        self.b.ncols()
    }
    pub fn q(&self) -> usize {
        self.c.nrows()
    }

    /// Dense dynamics matrix, required by the dense-only kernels.
    pub fn a_dense(&self) -> Result<&Matrix> {
        self.a
            .dense()
            .ok_or_else(|| Error::InvalidArgument("operation requires a dense realization".into()))
    }
}
