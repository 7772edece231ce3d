//! Ulam discretization of the transfer-operator cocycle.
//!
//! Operators act on piecewise-constant densities over the uniform
//! `k`-cell grid shared by every fiber; on that grid a density is the
//! vector of its cell values and the transfer action is a sparse
//! row-stochastic matrix. The cocycle composes single-fiber operators in
//! base-orbit order, equivariant densities arise as pull-back limits, and
//! twisted operators encode characteristic functions of Birkhoff sums.

mod density;
pub mod norms;
mod twisted;
mod ulam;
mod verify;

pub use density::{density_family, fiber_density, DensityFamily, FiberDensity};
pub use twisted::{char_functional, mixing_gap, twisted_ulam, BlockSpec, MixingGapReport};
pub use ulam::{ulam_matrix, Cocycle, UlamOperator};
pub use verify::{
    perturbation_radius, projection_defect, projection_defect_profile, verify_decay,
    verify_decay_on_vectors, verify_lasota_yorke, DecayEstimate, LasotaYorkeFit, SampleBudget,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("grid size {0} invalid (need k >= 2)")]
    InvalidGrid(usize),
    #[error("grid size mismatch: {0} vs {1}")]
    GridMismatch(usize, usize),
    #[error(
        "pull-back iteration did not reach tolerance {tol} within {n_max} steps \
         (last residuals {trace:?}): decay fails at this resolution"
    )]
    NonConvergence {
        tol: f64,
        n_max: usize,
        trace: Vec<f64>,
    },
    #[error("test vector has mass {0}; decay verification requires mean-zero input")]
    MeanNotZero(f64),
    #[error("fitted decay rate {0} not positive; no exponential decay at this resolution")]
    DecayFailure(f64),
    #[error(
        "no Lasota-Yorke envelope with a < 1 fits the samples \
         (variation growth rate {growth}): family likely not uniformly expanding at this grid"
    )]
    LasotaYorkeViolation { growth: f64 },
    #[error("twist parameter |theta| = {0} exceeds the allowed bound 1")]
    TwistTooLarge(f64),
    #[error("blocks must be disjoint and ordered: [{s0}, {e0}) overlaps [{s1}, {e1})")]
    OverlappingBlocks { s0: u64, e0: u64, s1: u64, e1: u64 },
    #[error("fiber {0} outside the computed density range [{1}, {2})")]
    FiberOutOfRange(i64, i64, i64),
    #[error(transparent)]
    Map(#[from] crate::maps::MapError),
}
