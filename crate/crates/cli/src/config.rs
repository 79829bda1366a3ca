//! Pipeline configuration: one TOML file is the single source of truth for
//! every stage. Unknown keys are rejected so typos cannot silently fall
//! back to defaults; every default is spelled out in the `Default` impls.

use bpod::testbed::HopfPdeSpec;
use serde::{Deserialize, Serialize};

fn default_seed() -> u64 {
    7
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Base seed; stages derive their own streams from it.
    pub seed: u64,
    pub plant: PlantSection,
    pub steady: SteadySection,
    pub eigs: EigsSection,
    pub snapshots: SnapshotsSection,
    pub rom: RomSection,
    pub control: ControlSection,
    pub simulate: SimulateSection,
    pub bifurcation: BifurcationSection,
    pub oracle: OracleSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: default_seed(),
            plant: PlantSection::default(),
            steady: SteadySection::default(),
            eigs: EigsSection::default(),
            snapshots: SnapshotsSection::default(),
            rom: RomSection::default(),
            control: ControlSection::default(),
            simulate: SimulateSection::default(),
            bifurcation: BifurcationSection::default(),
            oracle: OracleSection::default(),
        }
    }
}

/// Reaction-advection-diffusion testbed plant (two coupled fields).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub n_grid: usize,
    pub length: f64,
    pub mu: f64,
    pub nonlin: f64,
    pub diffusion: f64,
    pub advection: f64,
    pub omega0: f64,
    pub source_amp: f64,
    pub actuator_center: f64,
    pub actuator_width: f64,
    pub sensor_indices: Vec<usize>,
    pub stretch: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let s = HopfPdeSpec::default();
        PlantSection {
            n_grid: s.n_grid,
            length: s.length,
            mu: s.mu,
            nonlin: s.nonlin,
            diffusion: s.diffusion,
            advection: s.advection,
            omega0: s.omega0,
            source_amp: s.source_amp,
            actuator_center: s.actuator_center,
            actuator_width: s.actuator_width,
            sensor_indices: s.sensor_indices,
            stretch: s.stretch,
        }
    }
}

impl PlantSection {
    pub fn to_spec(&self) -> HopfPdeSpec {
        HopfPdeSpec {
            n_grid: self.n_grid,
            length: self.length,
            mu: self.mu,
            nonlin: self.nonlin,
            diffusion: self.diffusion,
            advection: self.advection,
            omega0: self.omega0,
            source_amp: self.source_amp,
            actuator_center: self.actuator_center,
            actuator_width: self.actuator_width,
            sensor_indices: self.sensor_indices.clone(),
            stretch: self.stretch,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteadySection {
    /// Integrator step of the fixed-point map.
    pub dt: f64,
    /// Steps per map evaluation (the `T` in the fixed-point map).
    pub t_steps: usize,
    pub newton_tol: f64,
    pub gmres_tol: f64,
}

impl Default for SteadySection {
    fn default() -> Self {
        SteadySection { dt: 0.01, t_steps: 50, newton_tol: 1e-10, gmres_tol: 1e-6 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigsSection {
    /// Cap on the extracted unstable dimension.
    pub k_max: usize,
    /// Generator step for the subspace iteration.
    pub dt: f64,
    pub tol: f64,
}

impl Default for EigsSection {
    fn default() -> Self {
        EigsSection { k_max: 6, dt: 0.05, tol: 1e-9 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnapshotsSection {
    pub dt: f64,
    /// Integrator steps per primal/adjoint run.
    pub n_steps: usize,
    /// Timesteps between stored snapshots.
    pub spacing: usize,
    /// Output-projection rank (adjoint runs per ensemble).
    pub n_output_modes: usize,
}

impl Default for SnapshotsSection {
    fn default() -> Self {
        SnapshotsSection { dt: 0.01, n_steps: 10_000, spacing: 50, n_output_modes: 10 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RomSection {
    /// Retained balanced modes of the stable block.
    pub r: usize,
}

impl Default for RomSection {
    fn default() -> Self {
        RomSection { r: 20 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    /// Input weight scale: R = weight * I.
    pub weight: f64,
    /// Process-noise intensity for the observer design: Q_w = process_noise * I.
    pub process_noise: f64,
    /// Sensor-noise intensity: R_v = sensor_noise * I.
    pub sensor_noise: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        ControlSection { weight: 1e5, process_noise: 1.0, sensor_noise: 1e-2 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub dt: f64,
    pub horizon: f64,
    /// Control switch-on times; one trace table per entry.
    pub turn_on: Vec<f64>,
    /// Record every stride-th step.
    pub stride: usize,
    /// Time marched from a perturbed steady state before the closed-loop
    /// run starts, so the initial condition sits on the attractor.
    pub settle: f64,
    /// Size of the seeded kick applied to the steady state before settling.
    pub kick: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            dt: 0.01,
            horizon: 200.0,
            turn_on: vec![0.0],
            stride: 10,
            settle: 150.0,
            kick: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BifurcationSection {
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub step: f64,
    pub dt: f64,
    pub t_steps: usize,
}

impl Default for BifurcationSection {
    fn default() -> Self {
        BifurcationSection { mu_lo: 0.25, mu_hi: 0.55, step: 0.1, dt: 0.05, t_steps: 40 }
    }
}

/// Settings of the self-contained oracle cross-check on random hyperbolic
/// systems (no upstream artifacts).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub n: usize,
    pub n_u: usize,
    pub p: usize,
    pub q: usize,
    /// Minimum eigenvalue distance from the imaginary axis.
    pub gap: f64,
    pub dt: f64,
    pub spacing: usize,
    /// Stable balanced modes compared against the exact values.
    pub r: usize,
    /// Independent random systems, run concurrently.
    pub instances: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection { n: 8, n_u: 2, p: 2, q: 2, gap: 0.2, dt: 1e-3, spacing: 20, r: 4, instances: 3 }
    }
}

impl PipelineConfig {
    /// Basic range validation beyond what serde enforces.
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("steady.dt", self.steady.dt),
            ("eigs.dt", self.eigs.dt),
            ("snapshots.dt", self.snapshots.dt),
            ("simulate.dt", self.simulate.dt),
            ("simulate.horizon", self.simulate.horizon),
            ("bifurcation.step", self.bifurcation.step),
            ("bifurcation.dt", self.bifurcation.dt),
            ("oracle.dt", self.oracle.dt),
            ("control.weight", self.control.weight),
            ("control.process_noise", self.control.process_noise),
            ("control.sensor_noise", self.control.sensor_noise),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be positive and finite (got {v})"));
            }
        }
        let nonzero = [
            ("steady.t_steps", self.steady.t_steps),
            ("eigs.k_max", self.eigs.k_max),
            ("snapshots.n_steps", self.snapshots.n_steps),
            ("snapshots.spacing", self.snapshots.spacing),
            ("snapshots.n_output_modes", self.snapshots.n_output_modes),
            ("rom.r", self.rom.r),
            ("simulate.stride", self.simulate.stride),
            ("bifurcation.t_steps", self.bifurcation.t_steps),
            ("oracle.instances", self.oracle.instances),
            ("oracle.r", self.oracle.r),
        ];
        for (name, v) in nonzero {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        if self.simulate.turn_on.is_empty() {
            return Err("simulate.turn_on needs at least one entry".into());
        }
        if !(self.bifurcation.mu_hi > self.bifurcation.mu_lo) {
            return Err("bifurcation.mu_hi must exceed bifurcation.mu_lo".into());
        }
        Ok(())
    }

    /// Canonical serialization used for hashing: stable field order, the
    /// effective seed folded in.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
