//! Unstable eigenspace extraction by time-stepped subspace iteration,
//! bi-orthonormalization of right/left bases, and the stable-subspace
//! projector.
//!
//! The iteration advances a random block through the (linearized) dynamics,
//! W-orthonormalizes it each cycle, and reads off Ritz values of the
//! generator on the block. The number of unstable directions is detected as
//! the count of Ritz values with positive real part, and convergence is
//! declared when the unstable Ritz subspace stops moving (sine of the
//! largest principal angle between successive cycles below `tol`) after the
//! slowest detected instability has had time to dominate.

use crate::error::{Error, Result};
use crate::linops::{
    eig_dense, subspace_gap, w_orthonormalize, InnerProductWeight, Matrix, StateSpaceSystem,
    Vector,
};
use crate::par;
use nalgebra::Complex;

/// Which eigenspace to extract: `Right` iterates the system operator,
/// `Left` its W-adjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Right,
    Left,
}

/// Right/left basis pair scaled so the W-pairing `Psi' W Phi` is the
/// identity. Convention: `phi` columns are W-orthonormal and all scaling is
/// absorbed into `psi`.
#[derive(Clone, Debug)]
pub struct BiorthogonalPair {
    pub phi: Matrix,
    pub psi: Matrix,
    pub w: InnerProductWeight,
}

impl BiorthogonalPair {
    pub fn k(&self) -> usize {
        self.phi.ncols()
    }

    /// `||Psi' W Phi - I||`, the defect of the bi-orthonormality contract.
    pub fn pairing_defect(&self) -> f64 {
        let k = self.k();
        (self.w.pairing(&self.psi, &self.phi) - Matrix::identity(k, k)).norm()
    }

    /// Pair with no columns; its projector is the identity (stable system).
    pub fn empty(n: usize, w: InnerProductWeight) -> Self {
        BiorthogonalPair { phi: Matrix::zeros(n, 0), psi: Matrix::zeros(n, 0), w }
    }
}

/// Scales a right/left basis pair so `Psi' W Phi = I`: `Phi` is
/// W-orthonormalized and `Psi` is multiplied by the inverse transpose of the
/// cross Gramian. Column spans are unchanged. Errors with `Singular` when
/// the cross Gramian is numerically singular (the spaces are W-orthogonal or
/// the ranks disagree).
pub fn biorthonormalize(phi: &Matrix, psi: &Matrix, w: &InnerProductWeight) -> Result<BiorthogonalPair> {
    if phi.nrows() != psi.nrows() || phi.ncols() != psi.ncols() {
        return Err(Error::Dimension(format!(
            "pair shapes {}x{} vs {}x{}",
            phi.nrows(),
            phi.ncols(),
            psi.nrows(),
            psi.ncols()
        )));
    }
    if phi.ncols() == 0 {
        return Ok(BiorthogonalPair::empty(phi.nrows(), w.clone()));
    }
    let phi_on = w_orthonormalize(phi, w)?;
    let cross = w.pairing(psi, &phi_on);
    let svd = crate::linops::svd(&cross)?;
    let smax = svd.sigma[0];
    let smin = svd.sigma[svd.sigma.len() - 1];
    if smin <= 1e-12 * smax.max(f64::MIN_POSITIVE) {
        return Err(Error::Singular(format!(
            "cross Gramian of the pair is singular (sigma_min/sigma_max = {:.3e})",
            smin / smax.max(f64::MIN_POSITIVE)
        )));
    }
    // psi_hat = psi M^{-T} with M = psi' W phi_on, so psi_hat' W phi_on = I.
    let lu = nalgebra::LU::new(cross);
    let solved = lu
        .solve(&psi.transpose())
        .ok_or_else(|| Error::Singular("cross Gramian solve failed".into()))?;
    Ok(BiorthogonalPair { phi: phi_on, psi: solved.transpose(), w: w.clone() })
}

/// Oblique projector onto the complement of the unstable right eigenspace:
/// `P x = x - Phi (Psi' W x)`. Applied without forming the n-by-n matrix.
#[derive(Clone)]
pub struct StableProjector {
    pair: BiorthogonalPair,
}

impl StableProjector {
    pub fn k(&self) -> usize {
        self.pair.k()
    }

    pub fn pair(&self) -> &BiorthogonalPair {
        &self.pair
    }

    /// `P x = x - Phi (Psi' W x)`.
    pub fn apply(&self, x: &Vector) -> Vector {
        if self.k() == 0 {
            return x.clone();
        }
        let coeff = self.pair.psi.transpose() * self.pair.w.apply(x);
        x - &self.pair.phi * coeff
    }

    /// `P* z = z - Psi (Phi' W z)`, the adjoint in the W-inner product.
    pub fn apply_adjoint(&self, z: &Vector) -> Vector {
        if self.k() == 0 {
            return z.clone();
        }
        let coeff = self.pair.phi.transpose() * self.pair.w.apply(z);
        z - &self.pair.psi * coeff
    }

    pub fn apply_matrix(&self, m: &Matrix) -> Matrix {
        if self.k() == 0 {
            return m.clone();
        }
        let coeff = self.pair.w.pairing(&self.pair.psi, m);
        m - &self.pair.phi * coeff
    }

    pub fn apply_adjoint_matrix(&self, m: &Matrix) -> Matrix {
        if self.k() == 0 {
            return m.clone();
        }
        let coeff = self.pair.w.pairing(&self.pair.phi, m);
        m - &self.pair.psi * coeff
    }

    /// Dense `P = I - Phi Psi' W`, for oracle-scale checks only.
    pub fn dense(&self) -> Matrix {
        let n = self.pair.phi.nrows();
        let mut p = Matrix::identity(n, n);
        if self.k() > 0 {
            let wpsi_t = self.pair.w.apply_matrix(&self.pair.psi).transpose();
            p.gemm(-1.0, &self.pair.phi, &wpsi_t, 1.0);
        }
        p
    }
}

/// Builds the stable projector from a bi-orthonormal pair. The pair is
/// validated (`Psi' W Phi = I` to 1e-8) because a skewed pair silently
/// breaks idempotence.
pub fn stable_projector(pair: BiorthogonalPair) -> Result<StableProjector> {
    let defect = pair.pairing_defect();
    if defect > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "pair is not bi-orthonormal: ||Psi' W Phi - I|| = {defect:.3e}"
        )));
    }
    Ok(StableProjector { pair })
}

/// Convergence report of a subspace-iteration run.
#[derive(Clone, Debug)]
pub struct EigenspaceReport {
    /// W-orthonormal basis of the extracted eigenspace (n x n_u), ordered
    /// by descending real part of the Ritz values.
    pub basis: Matrix,
    /// Ritz values of the iterated generator with positive real part. For
    /// `Side::Left` these belong to the W-adjoint (conjugates of the
    /// system's eigenvalues; equal real parts).
    pub ritz_values: Vec<Complex<f64>>,
    pub n_u: usize,
    /// Sine of the largest principal angle between the last two unstable
    /// subspace iterates.
    pub subspace_gap: f64,
    /// Relative invariance defect `||(I - U U' W) G U||_F / ||G U||_F` of
    /// the returned basis under the generator.
    pub residual: f64,
    pub cycles: usize,
    pub total_time: f64,
}

struct Generator<'a> {
    sys: &'a StateSpaceSystem,
    side: Side,
    dense: Option<Matrix>,
}

impl<'a> Generator<'a> {
    fn new(sys: &'a StateSpaceSystem, side: Side) -> Self {
        let dense = sys.a.dense().map(|a| match side {
            Side::Right => a.clone(),
            // W-adjoint W^{-1} A' W realized densely.
            Side::Left => sys.w.solve_matrix(&sys.w.apply_matrix(a).transpose()),
        });
        Generator { sys, side, dense }
    }

    fn apply(&self, x: &Vector) -> Vector {
        match (&self.dense, self.side) {
            (Some(m), _) => m * x,
            (None, Side::Right) => self.sys.a.apply(x),
            (None, Side::Left) => self.sys.a.apply_adjoint(x),
        }
    }

    fn apply_matrix(&self, m: &Matrix) -> Matrix {
        match (&self.dense, self.side) {
            (Some(g), _) => g * m,
            (None, Side::Right) => self.sys.a.apply_matrix(m),
            (None, Side::Left) => self.sys.a.apply_adjoint_matrix(m),
        }
    }
}

enum CycleMap {
    /// Precomputed `exp(G tau)` for dense generators.
    Expm(Matrix),
    /// `steps` classical RK4 steps of size dt per cycle. The caller's dt
    /// must lie inside the RK4 stability region of the fastest mode.
    Rk4 { steps: usize, dt: f64 },
}

impl CycleMap {
    fn advance(&self, gen: &Generator, v: &Matrix) -> Matrix {
        match self {
            CycleMap::Expm(e) => e * v,
            CycleMap::Rk4 { steps, dt } => {
                let cols: Vec<Vector> = par::map_collect((0..v.ncols()).collect(), |j| {
                    let mut x = v.column(j).into_owned();
                    for _ in 0..*steps {
                        x = rk4_step(gen, &x, *dt);
                    }
                    x
                });
                let mut out = Matrix::zeros(v.nrows(), v.ncols());
                for (j, c) in cols.iter().enumerate() {
                    out.set_column(j, c);
                }
                out
            }
        }
    }
}

fn rk4_step(gen: &Generator, x: &Vector, dt: f64) -> Vector {
    let k1 = gen.apply(x);
    let k2 = gen.apply(&(x + &k1 * (dt / 2.0)));
    let k3 = gen.apply(&(x + &k2 * (dt / 2.0)));
    let k4 = gen.apply(&(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Extracts the unstable right (or left) eigenspace of a hyperbolic system
/// by block subspace iteration, with full convergence diagnostics.
///
/// `settle_time`: minimum simulated time before convergence may be
/// declared; `None` selects `20 / min Re(unstable Ritz values)` adaptively.
/// `tol`: threshold on the sine of the largest principal angle between
/// successive unstable subspaces. `seed` fixes the random starting block.
///
/// Errors: `NoConvergence` past the cycle cap, `NotHyperbolic` when a Ritz
/// value sits within 1e-8 of the imaginary axis at convergence time, and
/// `InvalidArgument` when all `k_max` directions grow (n_u may exceed the
/// block size).
pub fn unstable_eigenspace_report(
    sys: &StateSpaceSystem,
    side: Side,
    k_max: usize,
    dt: f64,
    settle_time: Option<f64>,
    tol: f64,
    seed: u64,
) -> Result<EigenspaceReport> {
    use rand::Rng;
    use rand::SeedableRng;

    let n = sys.n();
    if k_max == 0 || k_max > n {
        return Err(Error::InvalidArgument(format!(
            "k_max must be in 1..={n}, got {k_max}"
        )));
    }
    if dt <= 0.0 || tol <= 0.0 {
        return Err(Error::InvalidArgument("dt and tol must be positive".into()));
    }

    let gen = Generator::new(sys, side);
    // One cycle advances roughly one time unit; the expm path folds all
    // steps of a cycle into a single precomputed matrix.
    let steps_per_cycle = ((1.0 / dt).round() as usize).max(1);
    let cycle_time = steps_per_cycle as f64 * dt;
    let map = match &gen.dense {
        Some(g) => CycleMap::Expm((g * cycle_time).exp()),
        None => CycleMap::Rk4 { steps: steps_per_cycle, dt },
    };

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let v0 = Matrix::from_fn(n, k_max, |_, _| rng.gen_range(-1.0..1.0));
    let mut v = w_orthonormalize(&v0, &sys.w)?;

    let max_cycles = 5000usize;
    let mut prev_lead: Option<Matrix> = None;
    let mut total_time = 0.0;
    let mut gap = f64::INFINITY;

    for cycle in 1..=max_cycles {
        v = map.advance(&gen, &v);
        crate::linops::check_finite_matrix("subspace iterate", &v).map_err(|_| {
            Error::Diverged(format!(
                "subspace iterate became non-finite at cycle {cycle} (dt {dt} outside the \
                 integrator's stability region?)"
            ))
        })?;
        v = w_orthonormalize(&v, &sys.w)?;
        total_time += cycle_time;

        // Rayleigh-Ritz on the block: H = V' W (G V).
        let h = sys.w.pairing(&v, &gen.apply_matrix(&v));
        let eig = eig_dense(&h)?;
        let mut unstable_cols: Vec<usize> = Vec::new();
        let mut ritz: Vec<(f64, Complex<f64>)> = Vec::new();
        {
            let mut col = 0;
            let mut i = 0;
            while i < eig.values.len() {
                let lam = eig.values[i];
                let width = if lam.im != 0.0 { 2 } else { 1 };
                if lam.re > 0.0 {
                    for wcol in 0..width {
                        unstable_cols.push(col + wcol);
                    }
                    ritz.push((lam.re, lam));
                    if width == 2 {
                        ritz.push((lam.re, lam.conj()));
                    }
                }
                col += width;
                i += width;
            }
        }
        let n_u = unstable_cols.len();
        // Ritz values of the first few cycles reflect the random start, not
        // the spectrum; structural verdicts wait a few cycles.
        if n_u == k_max && k_max < n && cycle >= 5 {
            return Err(Error::InvalidArgument(format!(
                "all {k_max} iterated directions grow; raise k_max to bound the unstable count"
            )));
        }
        if n_u == 0 {
            // Nothing grows; report stability once a weak instability would
            // have had time to surface.
            if total_time >= settle_time.unwrap_or(40.0) {
                return Ok(EigenspaceReport {
                    basis: Matrix::zeros(n, 0),
                    ritz_values: Vec::new(),
                    n_u: 0,
                    subspace_gap: 0.0,
                    residual: 0.0,
                    cycles: cycle,
                    total_time,
                });
            }
            prev_lead = None;
            continue;
        }
        if n_u == k_max && k_max < n {
            prev_lead = None;
            continue;
        }

        // Basis of the unstable Ritz subspace, W-orthonormalized.
        let mut lead_raw = Matrix::zeros(n, n_u);
        for (dst, &src) in unstable_cols.iter().enumerate() {
            lead_raw.set_column(dst, &(&v * eig.right.column(src)));
        }
        let lead = match w_orthonormalize(&lead_raw, &sys.w) {
            Ok(b) => b,
            Err(_) => {
                // Ritz vectors momentarily dependent; keep iterating.
                prev_lead = None;
                continue;
            }
        };

        gap = match &prev_lead {
            Some(p) if p.ncols() == n_u => subspace_gap(p, &lead, &sys.w)?,
            _ => f64::INFINITY,
        };
        prev_lead = Some(lead.clone());

        let slowest = ritz.iter().map(|(re, _)| *re).fold(f64::INFINITY, f64::min);
        let required = settle_time.unwrap_or(20.0 / slowest.max(1e-6));
        if gap < tol && total_time >= required {
            for (_, lam) in &ritz {
                if lam.re.abs() <= 1e-8 {
                    return Err(Error::NotHyperbolic(format!(
                        "Ritz value {:.3e} + {:.3e}i within 1e-8 of the imaginary axis",
                        lam.re, lam.im
                    )));
                }
            }
            ritz.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let gu = gen.apply_matrix(&lead);
            let h_small = sys.w.pairing(&lead, &gu);
            let defect = &gu - &lead * &h_small;
            let num = sys.w.factor_apply_matrix(&defect).norm();
            let den = sys.w.factor_apply_matrix(&gu).norm().max(f64::MIN_POSITIVE);
            return Ok(EigenspaceReport {
                basis: lead,
                ritz_values: ritz.into_iter().map(|(_, l)| l).collect(),
                n_u,
                subspace_gap: gap,
                residual: num / den,
                cycles: cycle,
                total_time,
            });
        }
    }
    Err(Error::NoConvergence(format!(
        "subspace iteration: gap {gap:.3e} after {max_cycles} cycles (tol {tol:.1e})"
    )))
}

/// Leading Ritz values (largest real part, any sign) of the system
/// generator by the same block iteration as
/// [`unstable_eigenspace_report`]. This is the branch-tracking diagnostic:
/// across a Hopf crossing the leading pair is what changes sign, and it
/// exists on both sides, where the unstable-eigenspace extraction would
/// come back empty below criticality.
///
/// Returns at least `k` values (one extra when a conjugate pair straddles
/// the cut), sorted by descending real part.
pub fn leading_ritz_values(
    sys: &StateSpaceSystem,
    k: usize,
    dt: f64,
    settle_time: Option<f64>,
    tol: f64,
    seed: u64,
) -> Result<Vec<Complex<f64>>> {
    use rand::Rng;
    use rand::SeedableRng;

    let n = sys.n();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k must be in 1..={n}, got {k}")));
    }
    if dt <= 0.0 || tol <= 0.0 {
        return Err(Error::InvalidArgument("dt and tol must be positive".into()));
    }
    let block = (k + 2).min(n);
    let gen = Generator::new(sys, Side::Right);
    let steps_per_cycle = ((1.0 / dt).round() as usize).max(1);
    let cycle_time = steps_per_cycle as f64 * dt;
    let map = match &gen.dense {
        Some(g) => CycleMap::Expm((g * cycle_time).exp()),
        None => CycleMap::Rk4 { steps: steps_per_cycle, dt },
    };

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let v0 = Matrix::from_fn(n, block, |_, _| rng.gen_range(-1.0..1.0));
    let mut v = w_orthonormalize(&v0, &sys.w)?;
    let required = settle_time.unwrap_or(40.0);

    let max_cycles = 5000usize;
    let mut prev_lead: Option<Matrix> = None;
    let mut total_time = 0.0;
    let mut gap = f64::INFINITY;

    for _cycle in 1..=max_cycles {
        v = map.advance(&gen, &v);
        crate::linops::check_finite_matrix("subspace iterate", &v).map_err(|_| {
            Error::Diverged(
                "subspace iterate became non-finite (dt outside the integrator's \
                 stability region?)"
                    .into(),
            )
        })?;
        v = w_orthonormalize(&v, &sys.w)?;
        total_time += cycle_time;

        let h = sys.w.pairing(&v, &gen.apply_matrix(&v));
        let eig = eig_dense(&h)?;
        // Eigen-blocks (start column, width, value) of the small problem;
        // conjugate pairs share a 2-column real block.
        let mut blocks: Vec<(usize, usize, Complex<f64>)> = Vec::new();
        {
            let mut col = 0;
            let mut i = 0;
            while i < eig.values.len() {
                let lam = eig.values[i];
                let width = if lam.im != 0.0 { 2 } else { 1 };
                blocks.push((col, width, lam));
                col += width;
                i += width;
            }
        }
        blocks.sort_by(|a, b| b.2.re.partial_cmp(&a.2.re).unwrap());
        let mut cols: Vec<usize> = Vec::new();
        let mut ritz: Vec<Complex<f64>> = Vec::new();
        for (start, width, lam) in &blocks {
            if ritz.len() >= k {
                break;
            }
            for w_col in 0..*width {
                cols.push(start + w_col);
            }
            ritz.push(*lam);
            if *width == 2 {
                ritz.push(lam.conj());
            }
        }

        let mut lead_raw = Matrix::zeros(n, cols.len());
        for (dst, &src) in cols.iter().enumerate() {
            lead_raw.set_column(dst, &(&v * eig.right.column(src)));
        }
        let lead = match w_orthonormalize(&lead_raw, &sys.w) {
            Ok(b) => b,
            Err(_) => {
                prev_lead = None;
                continue;
            }
        };
        gap = match &prev_lead {
            Some(p) if p.ncols() == lead.ncols() => subspace_gap(p, &lead, &sys.w)?,
            _ => f64::INFINITY,
        };
        prev_lead = Some(lead);

        if gap < tol && total_time >= required {
            ritz.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap());
            return Ok(ritz);
        }
    }
    Err(Error::NoConvergence(format!(
        "leading Ritz values: gap {gap:.3e} after {max_cycles} cycles (tol {tol:.1e})"
    )))
}

/// Basis-only variant of [`unstable_eigenspace_report`].
pub fn unstable_eigenspace(
    sys: &StateSpaceSystem,
    side: Side,
    k_max: usize,
    dt: f64,
    settle_time: Option<f64>,
    tol: f64,
    seed: u64,
) -> Result<Matrix> {
    unstable_eigenspace_report(sys, side, k_max, dt, settle_time, tol, seed).map(|r| r.basis)
}
