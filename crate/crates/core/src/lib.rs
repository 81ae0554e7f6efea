//! Numerical solvers for mean field games driven by a common Brownian noise
//! and a possibly degenerate idiosyncratic diffusion.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: uniform grids, fields, stencils, norms and the weight `psi`.
//! * [`hamiltonian`]: problem data, structural checks and Legendre transforms.
//! * [`det_hjb`]: the deterministic degenerate HJB solver.
//! * [`noise_tree`]: the binomial common-noise tree.
//! * [`bshjb`]: the backward stochastic HJB solver on the tree.
//! * [`fokker_planck`]: the forward density solver and 1-d Wasserstein distances.
//! * [`transform`]: the common-noise change of variables.
//! * [`mfg`]: the coupled fixed point, monotonicity and duality diagnostics.
//! * [`problems`]: the built-in problem library.

pub mod bshjb;
pub mod det_hjb;
pub mod error;
pub mod fokker_planck;
pub mod grid;
pub mod hamiltonian;
pub mod mfg;
pub mod noise_tree;
pub mod par;
pub mod problems;
pub mod transform;

pub use error::{MfgError, Result};
pub use grid::{Grid1D, GridField, TimeGrid};
