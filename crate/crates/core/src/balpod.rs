//! Approximate balancing from snapshot ensembles and assembly of the
//! block-diagonal reduced-order model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::linops::{
    solve_lyapunov, svd, CnStepper, InnerProductWeight, Matrix, StateSpaceSystem, Vector,
};
use crate::snapshots::{PODBasis, SnapshotMatrix};
use crate::spectral::{stable_projector, BiorthogonalPair};

/// All singular values of the weighted pairing `Z' W X`: the empirical
/// Hankel singular values of the (projected) system.
pub fn hankel_values(x: &SnapshotMatrix, z: &SnapshotMatrix) -> Result<Vector> {
    if x.w.dim() != z.w.dim() {
        return Err(Error::Dimension(format!(
            "snapshot ensembles live in dims {} and {}",
            x.w.dim(),
            z.w.dim()
        )));
    }
    let pairing = x.w.pairing(&z.columns, &x.columns);
    Ok(svd(&pairing)?.sigma)
}

/// Balancing modes from the SVD of the weighted pairing `Z' W X`:
/// `Phi_s = X V_1 S^{-1/2}`, `Psi_s = Z U_1 S^{-1/2}`, bi-orthonormal by
/// construction. When the cut falls inside a near-degenerate pair
/// (relative gap below 1e-6) `r` is bumped so mode pairs are never split.
pub fn balance(
    x: &SnapshotMatrix,
    z: &SnapshotMatrix,
    r: usize,
) -> Result<(Matrix, Matrix, Vector)> {
    if r == 0 {
        return Err(Error::InvalidArgument("retained order must be >= 1".into()));
    }
    if x.w.dim() != z.w.dim() {
        return Err(Error::Dimension(format!(
            "snapshot ensembles live in dims {} and {}",
            x.w.dim(),
            z.w.dim()
        )));
    }
    let pairing = x.w.pairing(&z.columns, &x.columns);
    let s = svd(&pairing)?;
    let sigma1 = s.sigma[0].max(f64::MIN_POSITIVE);
    let rank = s.sigma.iter().take_while(|&&v| v > 1e-12 * sigma1).count();
    if r > rank {
        return Err(Error::RankDeficient(format!(
            "requested {r} balanced modes but the Hankel pairing has numerical rank {rank}"
        )));
    }
    let mut r_eff = r;
    while r_eff < rank
        && (s.sigma[r_eff - 1] - s.sigma[r_eff]).abs() <= 1e-6 * s.sigma[r_eff - 1]
    {
        r_eff += 1;
    }
    let sigma = Vector::from_iterator(r_eff, s.sigma.iter().take(r_eff).copied());
    let scale = Matrix::from_diagonal(&sigma.map(|v| v.powf(-0.5)));
    let v1 = s.v.view((0, 0), (s.v.nrows(), r_eff)).into_owned();
    let u1 = s.u.view((0, 0), (s.u.nrows(), r_eff)).into_owned();
    let phi = &x.columns * (v1 * &scale);
    let psi = &z.columns * (u1 * &scale);
    Ok((phi, psi, sigma))
}

/// Measured diagnostics kept alongside the stored (zeroed) model blocks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RomProvenance {
    /// Frobenius norm of the measured `Psi_u* A Phi_s` block before zeroing.
    pub cross_us_norm: f64,
    /// Frobenius norm of the measured `Psi_s* A Phi_u` block before zeroing.
    pub cross_su_norm: f64,
    /// Scale the cross norms are judged against (estimate of the A norm).
    pub a_scale: f64,
    /// True when a cross block exceeded `1e-6 * a_scale`: the unstable
    /// eigenspace is probably not converged.
    pub cross_warning: bool,
    /// Free-form labels/hashes of the snapshot inputs.
    pub snapshot_meta: Vec<String>,
}

/// Block-diagonal reduced model: decoupled unstable and stable parts with
/// both output conventions (full maps and POD coefficients).
#[derive(Clone, Debug)]
pub struct ReducedModel {
    pub a_u: Matrix,
    pub a_s: Matrix,
    pub b_u: Matrix,
    pub b_s: Matrix,
    /// Full-output map of the unstable part, `C Phi_u`.
    pub c_u: Matrix,
    /// Full-output map of the stable part, output-projected:
    /// `Theta Theta* C Phi_s`.
    pub c_s: Matrix,
    /// Coefficient output map of the stable part, `Theta* C Phi_s`
    /// (the unstable coefficient map is the identity).
    pub c_hat_s: Matrix,
    /// Retained Hankel singular values.
    pub hsv: Vector,
    pub pair_u: BiorthogonalPair,
    pub pair_s: BiorthogonalPair,
    pub provenance: RomProvenance,
}

impl ReducedModel {
    pub fn n_u(&self) -> usize {
        self.a_u.nrows()
    }

    pub fn r(&self) -> usize {
        self.a_s.nrows()
    }

    pub fn order(&self) -> usize {
        self.n_u() + self.r()
    }

    /// Block-diagonal reduced dynamics matrix.
    pub fn a_full(&self) -> Matrix {
        let (nu, r) = (self.n_u(), self.r());
        let mut a = Matrix::zeros(nu + r, nu + r);
        a.view_mut((0, 0), (nu, nu)).copy_from(&self.a_u);
        a.view_mut((nu, nu), (r, r)).copy_from(&self.a_s);
        a
    }

    pub fn b_full(&self) -> Matrix {
        let (nu, r) = (self.n_u(), self.r());
        let p = self.b_u.ncols();
        let mut b = Matrix::zeros(nu + r, p);
        b.view_mut((0, 0), (nu, p)).copy_from(&self.b_u);
        b.view_mut((nu, 0), (r, p)).copy_from(&self.b_s);
        b
    }

    /// Full-output map `[C Phi_u, Theta Theta* C Phi_s]`.
    pub fn c_full(&self) -> Matrix {
        let q = self.c_u.nrows();
        let (nu, r) = (self.n_u(), self.r());
        let mut c = Matrix::zeros(q, nu + r);
        c.view_mut((0, 0), (q, nu)).copy_from(&self.c_u);
        c.view_mut((0, nu), (q, r)).copy_from(&self.c_s);
        c
    }

    /// Coefficient output map: identity on the unstable coordinates
    /// stacked over `Theta* C Phi_s`.
    pub fn c_coeff(&self) -> Matrix {
        let (nu, r) = (self.n_u(), self.r());
        let m = self.c_hat_s.nrows();
        let mut c = Matrix::zeros(nu + m, nu + r);
        c.view_mut((0, 0), (nu, nu)).copy_from(&Matrix::identity(nu, nu));
        c.view_mut((nu, nu), (m, r)).copy_from(&self.c_hat_s);
        c
    }

    /// Direct modes `[Phi_u, Phi_s]` (n x order).
    pub fn phi(&self) -> Matrix {
        let n = self.pair_u.w.dim();
        let mut m = Matrix::zeros(n, self.order());
        m.view_mut((0, 0), (n, self.n_u())).copy_from(&self.pair_u.phi);
        m.view_mut((0, self.n_u()), (n, self.r())).copy_from(&self.pair_s.phi);
        m
    }

    /// Adjoint modes `[Psi_u, Psi_s]` (n x order).
    pub fn psi(&self) -> Matrix {
        let n = self.pair_u.w.dim();
        let mut m = Matrix::zeros(n, self.order());
        m.view_mut((0, 0), (n, self.n_u())).copy_from(&self.pair_u.psi);
        m.view_mut((0, self.n_u()), (n, self.r())).copy_from(&self.pair_s.psi);
        m
    }

    /// Attaches the Hankel values from `balance` and snapshot labels.
    pub fn with_provenance(mut self, hsv: Vector, snapshot_meta: Vec<String>) -> Self {
        self.hsv = hsv;
        self.provenance.snapshot_meta = snapshot_meta;
        self
    }

    /// Lift reduced coordinates back to the full state.
    pub fn reconstruct(&self, a: &Vector) -> Result<Vector> {
        if a.len() != self.order() {
            return Err(Error::Dimension(format!(
                "coordinate dim {} vs model order {}",
                a.len(),
                self.order()
            )));
        }
        Ok(self.phi() * a)
    }
}

/// Petrov-Galerkin assembly of the reduced model. Cross-coupling blocks
/// are measured (their norms land in provenance, with a warning flag when
/// they exceed `1e-6` relative to the A scale) and then zeroed: the exact
/// decoupling holds for exact invariant subspaces, so the measured norm is
/// a convergence diagnostic, not an assumption.
pub fn assemble_rom(
    sys: &StateSpaceSystem,
    pair_u: &BiorthogonalPair,
    phi_s: &Matrix,
    psi_s: &Matrix,
    theta_s: &PODBasis,
) -> Result<ReducedModel> {
    let n = sys.n();
    if pair_u.phi.nrows() != n || phi_s.nrows() != n || psi_s.nrows() != n {
        return Err(Error::Dimension("mode rows do not match the state dimension".into()));
    }
    if phi_s.ncols() != psi_s.ncols() {
        return Err(Error::Dimension(format!(
            "stable mode counts differ: {} direct vs {} adjoint",
            phi_s.ncols(),
            psi_s.ncols()
        )));
    }
    if theta_s.theta.nrows() != sys.q() {
        return Err(Error::Dimension(format!(
            "output modes live in dimension {} but the system has {} outputs",
            theta_s.theta.nrows(),
            sys.q()
        )));
    }
    let defect = pair_u.pairing_defect();
    if defect > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "unstable pair bi-orthogonality defect {defect:.2e}"
        )));
    }
    let w = &sys.w;

    let a_phi_u = sys.a.apply_matrix(&pair_u.phi);
    let a_phi_s = sys.a.apply_matrix(phi_s);
    let a_u = w.pairing(&pair_u.psi, &a_phi_u);
    let a_s = w.pairing(psi_s, &a_phi_s);
    let cross_su = w.pairing(psi_s, &a_phi_u);
    let cross_us = w.pairing(&pair_u.psi, &a_phi_s);

    let a_scale = match sys.a.dense() {
        Some(a) => a.norm(),
        None => {
            let s1 = matrix_scale(&a_phi_u, &pair_u.phi);
            let s2 = matrix_scale(&a_phi_s, phi_s);
            s1.max(s2).max(f64::MIN_POSITIVE)
        }
    };
    let cross_us_norm = cross_us.norm();
    let cross_su_norm = cross_su.norm();
    let cross_warning = cross_us_norm.max(cross_su_norm) > 1e-6 * a_scale;

    let b_u = w.pairing(&pair_u.psi, &sys.b);
    let b_s = w.pairing(psi_s, &sys.b);

    let c_phi_u = &sys.c * &pair_u.phi;
    let c_phi_s = &sys.c * phi_s;
    let c_hat_s = theta_s.theta.transpose() * theta_s.w.apply_matrix(&c_phi_s);
    let c_s = &theta_s.theta * &c_hat_s;

    let pair_s = BiorthogonalPair { phi: phi_s.clone(), psi: psi_s.clone(), w: w.clone() };
    Ok(ReducedModel {
        a_u,
        a_s,
        b_u,
        b_s,
        c_u: c_phi_u,
        c_s,
        c_hat_s,
        hsv: Vector::zeros(0),
        pair_u: pair_u.clone(),
        pair_s,
        provenance: RomProvenance {
            cross_us_norm,
            cross_su_norm,
            a_scale,
            cross_warning,
            snapshot_meta: Vec::new(),
        },
    })
}

fn matrix_scale(num: &Matrix, den: &Matrix) -> f64 {
    let d = den.norm();
    if d == 0.0 {
        0.0
    } else {
        num.norm() / d
    }
}

/// Reduced coordinates of a known initial state: `a0 = Psi' W x0`.
pub fn project_initial_state(x0: &Vector, model: &ReducedModel) -> Result<Vector> {
    if x0.len() != model.pair_u.w.dim() {
        return Err(Error::Dimension(format!(
            "state dim {} vs model state dim {}",
            x0.len(),
            model.pair_u.w.dim()
        )));
    }
    Ok(model.psi().transpose() * model.pair_u.w.apply(x0))
}

/// Diagonals of the Lyapunov-solved controllability and observability
/// Gramians of the reduced stable block `(A_s, B_s, C_hat_s)`. For an
/// exactly balanced model both diagonals equal the Hankel values. A finite
/// `horizon` truncates the Gramians to match finite-time snapshot
/// ensembles.
pub fn empirical_gramians(
    model: &ReducedModel,
    horizon: Option<f64>,
) -> Result<(Vector, Vector)> {
    let a = &model.a_s;
    let wc = solve_lyapunov(a, &(&model.b_s * model.b_s.transpose())).map_err(|e| match e {
        Error::NotStable(m) => Error::NotStable(format!("reduced stable block: {m}")),
        other => other,
    })?;
    let wo = solve_lyapunov(&a.transpose(), &(model.c_hat_s.transpose() * &model.c_hat_s))?;
    let (wc, wo) = match horizon {
        None => (wc, wo),
        Some(t) => {
            if t <= 0.0 {
                return Err(Error::InvalidArgument("horizon must be positive".into()));
            }
            let e = (a * t).exp();
            let et = e.transpose();
            (&wc - &e * &wc * &et, &wo - &et * &wo * &e)
        }
    };
    Ok((wc.diagonal(), wo.diagonal()))
}

/// Per-output-channel L2 and peak errors of the reduced model's impulse
/// response against the (projected) full simulation, both marched with the
/// same scheme and step so time-discretization error cancels.
#[derive(Clone, Debug)]
pub struct ImpulseErrorReport {
    pub l2_abs: Vector,
    pub l2_rel: Vector,
    pub peak_abs: Vector,
    pub peak_rel: Vector,
}

pub fn rom_impulse_compare(
    sys: &StateSpaceSystem,
    model: &ReducedModel,
    dt: f64,
    horizon: f64,
) -> Result<ImpulseErrorReport> {
    if dt <= 0.0 || horizon <= dt {
        return Err(Error::InvalidArgument("need 0 < dt < horizon".into()));
    }
    let a_dense = sys.a_dense()?;
    let n_steps = (horizon / dt).round() as usize;
    let q = sys.q();
    let p = sys.p();

    let projector = if model.n_u() > 0 {
        Some(stable_projector(model.pair_u.clone())?)
    } else {
        None
    };
    let full_step = CnStepper::new(&a_dense, dt)?;
    let rom_step = CnStepper::new(&model.a_s, dt)?;

    let mut l2_abs = Vector::zeros(q);
    let mut l2_ref = Vector::zeros(q);
    let mut peak_abs = Vector::zeros(q);
    let mut peak_ref = Vector::zeros(q);

    for j in 0..p {
        let b_j = sys.b.column(j).into_owned();
        let mut x = match &projector {
            Some(pr) => pr.apply(&b_j),
            None => b_j.clone(),
        };
        let mut a_s = model.pair_s.psi.transpose() * sys.w.apply(&x);
        for _ in 0..n_steps {
            x = full_step.step(&x);
            if let Some(pr) = &projector {
                x = pr.apply(&x);
            }
            a_s = rom_step.step(&a_s);
            let y_full = &sys.c * &x;
            let y_rom = &model.c_s * &a_s;
            for i in 0..q {
                let d = (y_full[i] - y_rom[i]).abs();
                l2_abs[i] += d * d * dt;
                l2_ref[i] += y_full[i] * y_full[i] * dt;
                peak_abs[i] = peak_abs[i].max(d);
                peak_ref[i] = peak_ref[i].max(y_full[i].abs());
            }
        }
    }
    let l2_abs = l2_abs.map(|v| v.sqrt());
    let l2_ref = l2_ref.map(|v| v.sqrt().max(f64::MIN_POSITIVE));
    let peak_ref = peak_ref.map(|v| v.max(f64::MIN_POSITIVE));
    Ok(ImpulseErrorReport {
        l2_rel: l2_abs.component_div(&l2_ref),
        peak_rel: peak_abs.component_div(&peak_ref),
        l2_abs,
        peak_abs,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelMetadata {
    format_version: u32,
    n_u: usize,
    r: usize,
    n: usize,
    hsv: Vec<f64>,
    weight: WeightMetadata,
    provenance: RomProvenance,
}

#[derive(Serialize, Deserialize)]
enum WeightMetadata {
    Identity(usize),
    Diagonal,
    Spd,
}

/// Writes the model as a directory of matrix files plus a JSON metadata
/// record.
pub fn save_model(model: &ReducedModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let blocks: [(&str, &Matrix); 9] = [
        ("a_u", &model.a_u),
        ("a_s", &model.a_s),
        ("b_u", &model.b_u),
        ("b_s", &model.b_s),
        ("c_u", &model.c_u),
        ("c_s", &model.c_s),
        ("c_hat_s", &model.c_hat_s),
        ("phi_u", &model.pair_u.phi),
        ("psi_u", &model.pair_u.psi),
    ];
    for (name, m) in blocks {
        io::write_matrix(&dir.join(format!("{name}.mat")), m)?;
    }
    io::write_matrix(&dir.join("phi_s.mat"), &model.pair_s.phi)?;
    io::write_matrix(&dir.join("psi_s.mat"), &model.pair_s.psi)?;
    let w = &model.pair_u.w;
    let weight = match w {
        InnerProductWeight::Identity(_) => WeightMetadata::Identity(w.dim()),
        InnerProductWeight::Diagonal(d) => {
            io::write_vector(&dir.join("weight_diag.vec"), d)?;
            WeightMetadata::Diagonal
        }
        InnerProductWeight::Spd { .. } => {
            io::write_matrix(&dir.join("weight.mat"), &w.as_matrix())?;
            WeightMetadata::Spd
        }
    };
    let meta = ModelMetadata {
        format_version: 1,
        n_u: model.n_u(),
        r: model.r(),
        n: w.dim(),
        hsv: model.hsv.iter().copied().collect(),
        weight,
        provenance: model.provenance.clone(),
    };
    let text = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Parse(format!("metadata encode: {e}")))?;
    std::fs::write(dir.join("model.json"), text)?;
    Ok(())
}

/// Reads a model directory written by `save_model`.
pub fn load_model(dir: &Path) -> Result<ReducedModel> {
    let text = std::fs::read_to_string(dir.join("model.json"))?;
    let meta: ModelMetadata =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("metadata decode: {e}")))?;
    if meta.format_version != 1 {
        return Err(Error::Parse(format!(
            "unsupported model format version {}",
            meta.format_version
        )));
    }
    let read = |name: &str| io::read_matrix(&dir.join(format!("{name}.mat")));
    let w = match meta.weight {
        WeightMetadata::Identity(n) => InnerProductWeight::identity(n),
        WeightMetadata::Diagonal => {
            InnerProductWeight::diagonal(io::read_vector(&dir.join("weight_diag.vec"))?)?
        }
        WeightMetadata::Spd => InnerProductWeight::spd(read("weight")?)?,
    };
    let pair_u = BiorthogonalPair { phi: read("phi_u")?, psi: read("psi_u")?, w: w.clone() };
    let pair_s = BiorthogonalPair { phi: read("phi_s")?, psi: read("psi_s")?, w };
    Ok(ReducedModel {
        a_u: read("a_u")?,
        a_s: read("a_s")?,
        b_u: read("b_u")?,
        b_s: read("b_s")?,
        c_u: read("c_u")?,
        c_s: read("c_s")?,
        c_hat_s: read("c_hat_s")?,
        hsv: Vector::from_vec(meta.hsv),
        pair_u,
        pair_s,
        provenance: meta.provenance,
    })
}
