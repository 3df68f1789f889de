//! Distributed model-based CT reconstruction by multi-agent consensus
//! equilibrium.
//!
//! The view set is split into `N` interleaved subsets. Each agent owns the
//! rows of the system matrix for its views and minimizes a local cost with
//! one pass of iterative coordinate descent per outer iteration; a Mann
//! iteration over the stacked agent states drives them to a consensus that
//! equals the centralized MAP reconstruction. A denoiser can replace the
//! prior (plug-and-play).

// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consensus;
pub mod denoise;
pub mod error;
pub mod geometry;
pub mod icd;
pub mod image;
pub mod io;
pub mod metrics;
pub mod models;
pub mod oracle;
pub mod phantom;
pub mod sim;

pub use consensus::{
    equilibrium_residuals, mace_pnp_solve, mace_solve, ConvergenceLog, MaceConfig, MaceOutcome, Mode,
    RunOptions, Schedule, StackedState,
};
pub use denoise::{Denoiser, DenoiserSpec};
pub use error::{Error, Result};
pub use geometry::{build_system_matrix, partition_views, Geometry, SparseViewMatrix, ViewSubset};
pub use icd::{icd_map_solve, AgentWorkspace};
pub use image::{Image, Sinogram, SinogramSet};
pub use models::{PriorKind, PriorParams, Problem, WeightModel};
