//! Steady-state input-output behaviour of chemostat configurations.
//!
//! Three plants with the same total volume and flow are compared: a single
//! perfectly mixed tank, two tanks in series, and two tanks in parallel that
//! exchange substrate and biomass by diffusion (with the dead-zone model as
//! the parallel case `alpha = 0`). The crate computes their steady states,
//! the response of the parallel output to the diffusion rate, local
//! stability certificates, and simulated trajectories.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod equilibrium;
pub mod error;
pub mod linalg;
pub mod model;
pub mod numfmt;
pub mod ode;
pub mod roots;
pub mod simulate;
pub mod stability;

pub use equilibrium::{EquilibriumKind, EquilibriumReport};
pub use error::{Error, Result};
pub use model::{Chemostat, Configuration, GrowthLaw, NetworkState, Parallel};
