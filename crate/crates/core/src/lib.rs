//! Quenched statistics for random piecewise expanding interval maps.
//!
//! The crate builds the full numerical pipeline for a random dynamical
//! system on `[0,1]` driven by an ergodic base:
//!
//! * [`driving`] — reproducible two-sided streams of fiber-map parameters
//!   (the base system `σ` on `Ω`);
//! * [`maps`] — piecewise expanding maps, family constants and the
//!   covering check;
//! * [`transfer`] — Ulam discretizations of the transfer operators,
//!   cocycle composition, equivariant densities, decay/Lasota-Yorke
//!   verification and twisted (characteristic-function) operators;
//! * [`observable`] — grid observables, fiberwise centering;
//! * [`covariance`] — Green-Kubo asymptotic covariance, finite-time
//!   covariance growth, correlation-decay envelopes;
//! * [`blocks`] — the exact big/small block tiling of dyadic time ranges;
//! * [`simulate`] — Monte Carlo orbits, block sums and distributional
//!   diagnostics.
//!
//! Everything is deterministic given the seeds recorded in the inputs:
//! randomness comes from counter-based streams, so results do not depend
//! on scheduling or on the degree of parallelism.

pub mod blocks;
pub mod covariance;
pub mod driving;
pub mod fit;
pub mod maps;
pub mod observable;
pub mod rng;
pub mod simulate;
pub mod transfer;

pub use blocks::{build_blocks, gap_census, precedes, BlockDecomposition};
pub use covariance::{finite_n_covariance, sigma_matrix, sigma_scalar, CovarianceReport};
pub use driving::{DrivingKind, DrivingSystem};
pub use maps::{family_constants, verify_covering, FamilyConstants, MapFamily, MapParameter};
pub use observable::{center_observable, CenteredObservable, Observable};
pub use simulate::{asip_diagnostics, birkhoff_paths, block_sums, sample_initial, PathEnsemble};
pub use transfer::{Cocycle, DecayEstimate, FiberDensity};
