//! One function per subcommand. Stages communicate only through stamped
//! artifact tables in the output directory, each guarded by the producing
//! stage's manifest.

use std::path::Path;

use bpod::balpod::{
    assemble_rom, balance, empirical_gramians, hankel_values, load_model, save_model,
};
use bpod::control::{
    closed_loop_simulate, kalman_gain, lqr_gain, sensor_map, trace_csv, Compensator,
    FeedbackMode, KalmanGain, LqrGain, NoiseModel, PlantHandle, SimOptions,
};
use bpod::linops::{Matrix, NonlinearPlant, Vector};
use bpod::snapshots::{
    adjoint_initial_conditions, adjoint_response, impulse_response, pod, QuadratureRule,
    SnapshotMatrix,
};
use bpod::spectral::{
    biorthonormalize, stable_projector, unstable_eigenspace_report, BiorthogonalPair, Side,
};
use bpod::steady::{branch_csv, newton_gmres};
use bpod::testbed::{hopf_scan, random_lti, HopfPde};
use bpod::{par, Error};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::artifact::{
    column_header, full, matrix_rows, read_table_matrix, read_table_vector, Failure, StageRun,
};
use crate::config::PipelineConfig;

pub struct StageContext<'a> {
    pub cfg: &'a PipelineConfig,
    pub out_dir: &'a Path,
    pub force: bool,
    /// Plain undamped Newton steps (safeguards off).
    pub strict: bool,
}

impl<'a> StageContext<'a> {
    fn begin(&self, stage: &str) -> Result<StageRun, Failure> {
        StageRun::begin(
            self.out_dir,
            stage,
            self.cfg.seed,
            &self.cfg.canonical_toml(),
            self.force,
        )
    }

    fn plant(&self) -> Result<HopfPde, Failure> {
        Ok(HopfPde::new(self.cfg.plant.to_spec())?)
    }
}

// ---------------------------------------------------------------- steady

pub fn steady(ctx: &StageContext) -> Result<(), Failure> {
    let mut run = ctx.begin("steady")?;
    let plant = ctx.plant()?;
    let s = &ctx.cfg.steady;
    let mut problem = plant.fixed_point_problem(s.dt, s.t_steps)?;
    problem.newton_tol = s.newton_tol;
    problem.gmres_tol = s.gmres_tol;
    problem.line_search = !ctx.strict;
    let guess = Vector::zeros(plant.dim());
    let (x_star, report) = newton_gmres(&mut problem, &guess)?;
    if !report.converged {
        return Err(Error::NoConvergence("steady state not found".into()).into());
    }

    run.write_table("steady_state.csv", "value", &matrix_rows(&Matrix::from_column_slice(x_star.len(), 1, x_star.as_slice())))?;
    let residual_rows: Vec<String> = report
        .residuals
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{i},{}", full(*r)))
        .collect();
    run.write_table("steady_history.csv", "iteration,residual", &residual_rows)?;
    println!(
        "steady: residual {:.3e} after {} Newton iterations -> steady_state.csv",
        report.residuals.last().unwrap(),
        report.iterations
    );
    run.finish()
}

fn load_steady(run: &mut StageRun) -> Result<Vector, Failure> {
    let path = run.require_input("steady_state.csv", "steady")?;
    read_table_vector(&path)
}

// ------------------------------------------------------------------ eigs

pub fn eigs(ctx: &StageContext) -> Result<(), Failure> {
    let mut run = ctx.begin("eigs")?;
    let x_star = load_steady(&mut run)?;
    let plant = ctx.plant()?;
    let sys = plant.linearized_system(&x_star)?;
    let e = &ctx.cfg.eigs;

    let right =
        unstable_eigenspace_report(&sys, Side::Right, e.k_max, e.dt, None, e.tol, ctx.cfg.seed)?;
    let value_rows: Vec<String> = right
        .ritz_values
        .iter()
        .map(|z| format!("{},{}", full(z.re), full(z.im)))
        .collect();
    run.write_table("eigs_values.csv", "re,im", &value_rows)?;

    if right.n_u > 0 {
        let left = unstable_eigenspace_report(
            &sys,
            Side::Left,
            e.k_max,
            e.dt,
            None,
            e.tol,
            ctx.cfg.seed + 1,
        )?;
        if left.n_u != right.n_u {
            return Err(Error::NoConvergence(format!(
                "left eigenspace dimension {} does not match right {}",
                left.n_u, right.n_u
            ))
            .into());
        }
        let pair = biorthonormalize(&right.basis, &left.basis, &sys.w)?;
        run.write_table(
            "phi_u.csv",
            &column_header("phi", pair.phi.ncols()),
            &matrix_rows(&pair.phi),
        )?;
        run.write_table(
            "psi_u.csv",
            &column_header("psi", pair.psi.ncols()),
            &matrix_rows(&pair.psi),
        )?;
    }
    println!(
        "eigs: {} unstable direction(s), subspace gap {:.2e} -> eigs_values.csv",
        right.n_u, right.subspace_gap
    );
    run.finish()
}

/// Loads the bi-orthogonal unstable pair saved by `eigs`, or None when that
/// run found no unstable directions.
fn load_pair(
    run: &mut StageRun,
    w: &bpod::linops::InnerProductWeight,
) -> Result<Option<BiorthogonalPair>, Failure> {
    let values = run.require_input("eigs_values.csv", "eigs")?;
    let text = std::fs::read_to_string(&values)?;
    let has_rows = text.lines().any(|l| !l.trim().is_empty() && !l.starts_with('#') && l != "re,im");
    if !has_rows {
        return Ok(None);
    }
    let phi = read_table_matrix(&run.require_input("phi_u.csv", "eigs")?)?;
    let psi = read_table_matrix(&run.require_input("psi_u.csv", "eigs")?)?;
    Ok(Some(BiorthogonalPair { phi, psi, w: w.clone() }))
}

// ------------------------------------------------------------- snapshots

pub fn snapshots(ctx: &StageContext) -> Result<(), Failure> {
    let mut run = ctx.begin("snapshots")?;
    let x_star = load_steady(&mut run)?;
    let plant = ctx.plant()?;
    let sys = plant.linearized_system(&x_star)?;
    let pair = load_pair(&mut run, &sys.w)?;
    let projector = match pair {
        Some(p) => Some(stable_projector(p)?),
        None => None,
    };
    let s = &ctx.cfg.snapshots;

    let x = impulse_response(
        &sys,
        projector.as_ref(),
        s.dt,
        s.n_steps,
        s.spacing,
        QuadratureRule::Trapezoid,
    )?;
    let theta = pod(&x, s.n_output_modes)?;
    let ics = adjoint_initial_conditions(&sys) * &theta.theta;
    let z = adjoint_response(
        &sys,
        projector.as_ref(),
        &ics,
        s.dt,
        s.n_steps,
        s.spacing,
        QuadratureRule::Trapezoid,
    )?;

    run.write_table("x_factor.csv", &column_header("x", x.columns.ncols()), &matrix_rows(&x.columns))?;
    run.write_table("z_factor.csv", &column_header("z", z.columns.ncols()), &matrix_rows(&z.columns))?;
    run.write_table(
        "out_modes.csv",
        &column_header("theta", theta.theta.ncols()),
        &matrix_rows(&theta.theta),
    )?;
    let energy_rows: Vec<String> = theta
        .energies
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{},{}", i + 1, full(*v)))
        .collect();
    run.write_table("out_energies.csv", "mode,energy", &energy_rows)?;
    let captured: f64 = theta.energies.iter().take(theta.theta.ncols()).sum();
    let total: f64 = theta.energies.iter().sum();
    println!(
        "snapshots: {} primal + {} adjoint columns, output modes capture {:.2}% energy",
        x.columns.ncols(),
        z.columns.ncols(),
        100.0 * captured / total.max(f64::MIN_POSITIVE)
    );
    run.finish()
}

// ------------------------------------------------------------------- rom

pub fn rom(ctx: &StageContext) -> Result<(), Failure> {
    let mut run = ctx.begin("rom")?;
    let x_star = load_steady(&mut run)?;
    let plant = ctx.plant()?;
    let sys = plant.linearized_system(&x_star)?;
    let pair = load_pair(&mut run, &sys.w)?.ok_or_else(|| {
        Failure::config(
            "the model synthesis expects unstable directions; none were recorded by `bpod eigs`",
        )
    })?;

    let x_cols = read_table_matrix(&run.require_input("x_factor.csv", "snapshots")?)?;
    let z_cols = read_table_matrix(&run.require_input("z_factor.csv", "snapshots")?)?;
    let theta_cols = read_table_matrix(&run.require_input("out_modes.csv", "snapshots")?)?;
    let energies = read_table_matrix(&run.require_input("out_energies.csv", "snapshots")?)?;

    // Times/weights are already folded into the stored factor columns.
    let wrap = |columns: Matrix| SnapshotMatrix {
        columns,
        times: Vec::new(),
        weights: Vec::new(),
        run_of_column: Vec::new(),
        w: sys.w.clone(),
    };
    let x = wrap(x_cols);
    let z = wrap(z_cols);

    let hsv_all = hankel_values(&x, &z)?;
    let (phi_s, psi_s, sigma) = balance(&x, &z, ctx.cfg.rom.r)?;
    let theta = bpod::snapshots::PODBasis {
        theta: theta_cols,
        energies: Vector::from_iterator(energies.nrows(), energies.column(1).iter().copied()),
        w: sys.w.clone(),
    };
    let mut model = assemble_rom(&sys, &pair, &phi_s, &psi_s, &theta)?;
    model.hsv = sigma;
    model.provenance.snapshot_meta = vec![format!("manifest {}", run.run_hash())];

    save_model(&model, &run.out_dir().join("model"))?;
    run.note_output_dir("model")?;

    let hsv_rows: Vec<String> = hsv_all
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{},{}", i + 1, full(*v)))
        .collect();
    run.write_table("hsv.csv", "index,value", &hsv_rows)?;

    let (wc_diag, wo_diag) = empirical_gramians(&model, None)?;
    let gram_rows: Vec<String> = (0..wc_diag.len())
        .map(|i| {
            format!(
                "{},{},{},{}",
                i + 1,
                full(model.hsv[i]),
                full(wc_diag[i]),
                full(wo_diag[i])
            )
        })
        .collect();
    run.write_table("gramian_diag.csv", "mode,hsv,reachability,observability", &gram_rows)?;

    let p = &model.provenance;
    println!(
        "rom: order {} ({} unstable + {} balanced), cross-coupling {:.2e}/{:.2e}{}",
        model.order(),
        model.n_u(),
        model.r(),
        p.cross_us_norm / p.a_scale,
        p.cross_su_norm / p.a_scale,
        if p.cross_warning { " [WARNING: eigenspace not converged]" } else { "" }
    );
    run.finish()
}

// -------------------------------------------------------- oracle-compare

pub fn oracle_compare(ctx: &StageContext) -> Result<(), Failure> {
    let mut run = ctx.begin("oracle-compare")?;
    let o = ctx.cfg.oracle.clone();
    if o.n_u >= o.n {
        return Err(Failure::config("oracle.n_u must be below oracle.n"));
    }
    if o.r > o.n - o.n_u {
        return Err(Failure::config("oracle.r exceeds the stable dimension"));
    }

    let seeds: Vec<u64> = (0..o.instances as u64).map(|i| ctx.cfg.seed + i).collect();
    let results: Vec<Result<Vec<String>, Error>> = par::map_collect(seeds, |seed| {
        let (sys, truth) = random_lti(o.n, o.n_u, o.p, o.q, o.gap, seed)?;
        let a = sys.a_dense()?.clone();
        let b = sys.b.clone();
        let c = sys.c.clone();

        // The generator bases come with the instance, so the comparison
        // isolates the snapshot quadrature against the dense solves.
        let projector = if o.n_u > 0 {
            Some(stable_projector(biorthonormalize(&truth.t_u, &truth.s_u, &sys.w)?)?)
        } else {
            None
        };

        // Slowest stable decay rate sets the horizon.
        let slowest = truth
            .eigenvalues
            .iter()
            .filter(|z| z.re < 0.0)
            .map(|z| z.re.abs())
            .fold(f64::INFINITY, f64::min);
        let horizon = 8.0 / slowest;
        let n_steps = (horizon / o.dt).ceil() as usize;

        let x = impulse_response(&sys, projector.as_ref(), o.dt, n_steps, o.spacing, QuadratureRule::Trapezoid)?;
        let ics = adjoint_initial_conditions(&sys);
        let z = adjoint_response(&sys, projector.as_ref(), &ics, o.dt, n_steps, o.spacing, QuadratureRule::Trapezoid)?;
        let empirical = hankel_values(&x, &z)?;
        if empirical.len() < o.r {
            return Err(Error::InvalidArgument(format!(
                "only {} empirical values for oracle.r = {}: store more snapshots",
                empirical.len(),
                o.r
            )));
        }

        let exact = bpod::oracle::exact_bt_unstable(&a, &b, &c, None, o.r)?;
        let mut rows = Vec::new();
        for i in 0..o.r {
            let reference = exact.hsv_s[i];
            let rel = (empirical[i] - reference).abs() / reference.max(f64::MIN_POSITIVE);
            rows.push(format!(
                "{seed},{},{},{},{}",
                i + 1,
                full(empirical[i]),
                full(reference),
                full(rel)
            ));
        }
        Ok(rows)
    });

    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let worst = rows
        .iter()
        .map(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .fold(0.0_f64, f64::max);
    run.write_table(
        "oracle_compare.csv",
        "seed,index,empirical,exact,rel_error",
        &rows,
    )?;
    println!(
        "oracle-compare: {} instance(s), worst relative error {:.3e} -> oracle_compare.csv",
        o.instances, worst
    );
    run.finish()
}

// ------------------------------------------------------------- lqr / lqg

pub fn lqr(ctx: &StageContext) -> Result<(), Failure> {
    let mut run = ctx.begin("lqr")?;
    run.require_input("model/model.json", "rom")?;
    let model = load_model(&run.out_dir().join("model"))?;
    let r_mat = Matrix::identity(model.b_full().ncols(), model.b_full().ncols())
        * ctx.cfg.control.weight;
    let gain = lqr_gain(&model, None, Some(&r_mat))?;

    run.write_table(
        "lqr_gain.csv",
        &column_header("k", gain.k.ncols()),
        &matrix_rows(&gain.k),
    )?;
    let spec_rows: Vec<String> = gain
        .closed_loop_eigs
        .iter()
        .map(|z| format!("{},{}", full(z.re), full(z.im)))
        .collect();
    run.write_table("lqr_spectrum.csv", "re,im", &spec_rows)?;
    println!(
        "lqr: gain on {} modes, closed-loop abscissa {:.3e} -> lqr_gain.csv",
        gain.k.ncols(),
        gain.abscissa
    );
    run.finish()
}

pub fn lqg(ctx: &StageContext) -> Result<(), Failure> {
    let mut run = ctx.begin("lqg")?;
    run.require_input("model/model.json", "rom")?;
    let model = load_model(&run.out_dir().join("model"))?;
    let (c_bar, margins) = sensor_map(&model, &ctx.cfg.plant.sensor_indices)?;
    let k_dim = model.order();
    let s_dim = c_bar.nrows();
    let noise = NoiseModel {
        q_w: Matrix::identity(k_dim, k_dim) * ctx.cfg.control.process_noise,
        r_v: Matrix::identity(s_dim, s_dim) * ctx.cfg.control.sensor_noise,
        samples: 0,
        shrinkage: 0.0,
        regularized: false,
    };
    let kal = kalman_gain(&model, &c_bar, &noise)?;

    run.write_table("lqg_gain.csv", &column_header("l", kal.l.ncols()), &matrix_rows(&kal.l))?;
    run.write_table("c_bar.csv", &column_header("c", c_bar.ncols()), &matrix_rows(&c_bar))?;
    let spec_rows: Vec<String> = kal
        .observer_eigs
        .iter()
        .map(|z| format!("{},{}", full(z.re), full(z.im)))
        .collect();
    run.write_table("lqg_spectrum.csv", "re,im", &spec_rows)?;
    let worst_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    println!(
        "lqg: observer abscissa {:.3e}, filter equation residual {:.2e}, \
         worst sensor margin {:.2e} -> lqg_gain.csv",
        kal.abscissa, kal.care_residual, worst_margin
    );
    run.finish()
}

// -------------------------------------------------------------- simulate

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    Full,
    Observer,
}

/// Turn-on time rendered for file names: `12.5` -> `12p5`.
fn time_tag(t: f64) -> String {
    let mut s = format!("{t}");
    if let Some(stripped) = s.strip_suffix(".0") {
        s = stripped.to_string();
    }
    s.replace('.', "p").replace('-', "m")
}

pub fn simulate(
    ctx: &StageContext,
    mode: SimMode,
    turn_on_override: &[f64],
) -> Result<(), Failure> {
    let mut run = ctx.begin("simulate")?;
    let x_star = load_steady(&mut run)?;
    run.require_input("model/model.json", "rom")?;
    let model = load_model(&run.out_dir().join("model"))?;
    let k = read_table_matrix(&run.require_input("lqr_gain.csv", "lqr")?)?;
    if k.ncols() != model.order() {
        return Err(Failure::config(format!(
            "lqr gain acts on {} modes but the model has {}: re-run `bpod lqr`",
            k.ncols(),
            model.order()
        )));
    }
    let gain = LqrGain { k, closed_loop_eigs: Vec::new(), abscissa: 0.0, pbh_margins: Vec::new() };

    let comp = match mode {
        SimMode::Full => Compensator::full_state(&model, &gain)?,
        SimMode::Observer => {
            let l = read_table_matrix(&run.require_input("lqg_gain.csv", "lqg")?)?;
            let c_bar = read_table_matrix(&run.require_input("c_bar.csv", "lqg")?)?;
            let kal = KalmanGain {
                l,
                observer_eigs: Vec::new(),
                abscissa: 0.0,
                care_residual: 0.0,
            };
            Compensator::observer_based(&model, &gain, &kal, &c_bar)?
        }
    };

    let plant = ctx.plant()?;
    let sim = &ctx.cfg.simulate;

    // Deterministic on-attractor initial state: kick the steady state and
    // let the plant settle onto its limit cycle.
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed ^ 0x5157_u64);
    let kick = Vector::from_fn(plant.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x0 = &x_star + kick * (sim.kick / (plant.dim() as f64).sqrt());
    let mut stepper = plant.make_stepper(sim.dt);
    let settle_steps = (sim.settle / sim.dt).ceil() as usize;
    for _ in 0..settle_steps {
        x0 = stepper.step(&x0, None);
    }

    let mut turn_ons: Vec<f64> = if turn_on_override.is_empty() {
        sim.turn_on.clone()
    } else {
        turn_on_override.to_vec()
    };
    // Concurrent runs merge deterministically: ascending turn-on time.
    turn_ons.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mode_name = match mode {
        SimMode::Full => "full",
        SimMode::Observer => "observer",
    };

    let feedback = match mode {
        SimMode::Full => FeedbackMode::FullState,
        SimMode::Observer => FeedbackMode::Observer,
    };
    let results: Vec<Result<(f64, String, f64), Error>> = par::map_collect(turn_ons, |t_on| {
        let handle = PlantHandle::Nonlinear {
            plant: &plant,
            input: plant.actuator(),
            sensors: plant.sensor_matrix(),
            baseline: &x_star,
            w: plant.weight(),
        };
        let opts = SimOptions { dt: sim.dt, horizon: sim.horizon, turn_on: t_on, stride: sim.stride };
        let bundle = closed_loop_simulate(&handle, &comp, &model, feedback, &x0, &opts)?;
        let final_energy = *bundle.energy.last().unwrap();
        Ok((t_on, trace_csv(&bundle), final_energy))
    });

    // Merge in turn-on order (the job list is already sorted by index).
    for r in results {
        let (t_on, csv, final_energy) = r?;
        let mut lines = csv.lines();
        let header = lines.next().unwrap().to_string();
        let rows: Vec<String> = lines.map(str::to_string).collect();
        let name = format!("trace_{mode_name}_t{}.csv", time_tag(t_on));
        run.write_table(&name, &header, &rows)?;
        println!(
            "simulate: mode {mode_name}, turn-on {t_on}: final deviation energy {final_energy:.3e} -> {name}"
        );
    }
    run.finish()
}

// ----------------------------------------------------------- bifurcation

pub fn bifurcation(ctx: &StageContext) -> Result<(), Failure> {
    let mut run = ctx.begin("bifurcation")?;
    let b = &ctx.cfg.bifurcation;
    let branch = hopf_scan(
        &ctx.cfg.plant.to_spec(),
        b.mu_lo,
        b.mu_hi,
        b.step,
        b.dt,
        b.t_steps,
        ctx.cfg.seed,
        !ctx.strict,
    )?;

    let state_refs: Vec<String> = (0..branch.points.len())
        .map(|i| format!("branch_state_{i}.csv"))
        .collect();
    for (i, p) in branch.points.iter().enumerate() {
        run.write_table(
            &state_refs[i],
            "value",
            &matrix_rows(&Matrix::from_column_slice(p.state.len(), 1, p.state.as_slice())),
        )?;
    }
    let csv = branch_csv(&branch, Some(&state_refs))?;
    let mut lines = csv.lines();
    let header = lines.next().unwrap().to_string();
    let rows: Vec<String> = lines.map(|l| l.to_string()).collect();
    run.write_table("branch.csv", &header, &rows)?;

    let bracket_rows: Vec<String> = branch
        .hopf_bracket
        .iter()
        .map(|(lo, hi)| format!("{},{}", full(*lo), full(*hi)))
        .collect();
    run.write_table("hopf_bracket.csv", "mu_lo,mu_hi", &bracket_rows)?;

    match branch.hopf_bracket {
        Some((lo, hi)) => println!(
            "bifurcation: {} points, crossing bracketed in ({lo}, {hi}) -> branch.csv",
            branch.points.len()
        ),
        None => println!(
            "bifurcation: {} points, no crossing in range{} -> branch.csv",
            branch.points.len(),
            if branch.terminated_early { " (terminated early)" } else { "" }
        ),
    }
    run.finish()
}
