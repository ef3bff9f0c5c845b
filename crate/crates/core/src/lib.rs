//! Deterministic sandbox for bi-plane X-ray guided transpedicular cannula
//! insertion.
//!
//! The crate covers the whole data path: voxel volumes and materials
//! ([`volume`]), C-arm view geometry ([`geometry`]), monoenergetic DRR
//! rendering ([`drr`]), mesh-based breach grading ([`mesh`], [`safety`]),
//! trajectory planning ([`planner`]), expert episode synthesis and datasets
//! ([`episode`], [`dataset`]), analytic test phantoms ([`phantom`]), scenario
//! files ([`scenario`]) and the length-prefixed rollout protocol
//! ([`rollout`]).
//!
//! Data-parallel loops go through [`exec::Exec`]; with the `parallel` feature
//! (default) they run on rayon, otherwise sequentially. Output is identical in
//! both modes.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod anatomy;
pub mod dataset;
pub mod drr;
pub mod episode;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod imageio;
pub mod mesh;
pub mod phantom;
pub mod planner;
pub mod rollout;
pub mod safety;
pub mod scenario;
pub mod volume;

pub use error::{Error, ErrorKind, Result};
pub use exec::Exec;

/// Vector type used for every world-space quantity (millimetres).
pub type Vec3 = nalgebra::Vector3<f64>;
