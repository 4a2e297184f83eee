//! Simulator, dataset builder, policy harness, and metric suite for
//! evidence-grounded NOT-FOUND navigation on graph-structured indoor scenes.
//!
//! The crate is organised around a fixed pipeline:
//!
//! 1. [`synth`] generates seeded synthetic scans (navigation graph + per-room
//!    occupancy grids).
//! 2. [`episodes`] builds paired feasible / NOT-FOUND episode datasets via a
//!    rewrite-and-verify loop with quality-control filtering.
//! 3. [`refpaths`] produces the reference reach and exploration paths that
//!    normalise the metrics.
//! 4. [`runner`] executes a [`policies::Policy`] on an episode under the
//!    MOVE / FOUND / NOT-FOUND action protocol.
//! 5. [`metrics`] aggregates Reach SR, Reach&Decision SR, Reach SPL, coverage
//!    and REV-SPL, plus sensitivity and error-decomposition reports.
//!
//! All randomness is seeded and all container iteration is ordered, so every
//! artifact (scene files, datasets, trajectory logs, reports) is reproducible
//! byte for byte. File formats live in [`formats`]; the `nfnav` binary wires
//! the stages together.

pub mod cli;
pub mod episodes;
pub mod formats;
pub mod free;
pub mod metrics;
pub mod policies;
pub mod refpaths;
pub mod runner;
pub mod scene;
pub mod synth;

mod rng;

pub use scene::{ObjectId, RoomId, SceneGraph, ViewpointId};
