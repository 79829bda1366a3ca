//! Toolkit for approximate balanced truncation of unstable linear
//! time-invariant systems.
//!
//! The pipeline extracts unstable eigenspaces by time-stepped subspace
//! iteration, generates impulse-response and adjoint-response snapshot
//! ensembles restricted to the stable subspace, assembles a block-diagonal
//! reduced-order model from the balancing modes, and synthesizes LQR/LQG
//! compensators on the reduced model. Exact dense solvers ([`oracle`])
//! validate the snapshot pipeline on small systems, and [`steady`] provides
//! timestepper-based Newton-GMRES for unstable steady states.

pub mod error;
pub mod io;
pub mod linops;
pub mod balpod;
pub mod control;
pub mod oracle;
pub mod par;
pub mod snapshots;
pub mod spectral;
pub mod steady;
pub mod testbed;

pub use error::{Error, Result};
