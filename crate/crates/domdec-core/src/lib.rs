//! Domain decomposition for optimal transport on staggered cube partitions.
//!
//! The crate provides the building blocks for running the alternating
//! block-coordinate transport solver on `X = [0,1]^d` with two staggered
//! composite partitions, together with the diagnostic quantities used to
//! study its behaviour as the grid is refined: discrete trajectories and
//! momenta, the vertical transport metric, Wasserstein total variation at
//! composite and basic cell level, continuity-equation residuals and the
//! rescaled fiber problems with their limits.
//!
//! The crate is `no_std`-compatible (requires `alloc`); enable the default
//! `std` feature for the standard library float intrinsics.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
// index-based loops mirror the formulas; iterator rewrites obscure them
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod cost;
pub mod coupling;
pub mod engine;
pub mod fiber;
pub mod math;
pub mod measure;
pub mod metrics;
pub mod partition;
pub mod quad;
pub mod solver;
pub mod testfn;

pub use cost::{CostKind, CostSpec, EpsRule, EpsSchedule, Eta, HKind, Perturbation};
pub use coupling::Coupling;
pub use engine::{Engine, RunRecord, StopReason, TrajectorySnapshot};
pub use measure::{DensityKind, DensitySpec, DiscreteMeasure};
pub use partition::{GridPartition, Phase};
pub use solver::{CellPlan, CellProblem, SolveParams};
