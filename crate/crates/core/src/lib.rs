//! Multi-resolution volume encoding into tensor-product B-spline micro-models,
//! plus the pure parts of the out-of-core renderer built on top of them.
//!
//! This crate is `no_std` (it needs `alloc`). Everything that touches files,
//! threads or clocks lives in the `mrvol` companion crate; here we only keep
//! the numerics: sampling, fitting, partitioning, adaptive NCP search, block
//! queries, visibility, ray casting and image metrics.
//!
//! Parallel work (per-block encoding, per-row rendering) goes through the
//! [`Executor`] trait so callers with a thread pool can plug it in.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bspline;
pub mod ds;
pub mod encoder;
mod error;
pub mod exec;
pub mod geom;
pub mod lod;
pub mod metrics;
pub mod model;
pub mod render;
pub mod tf;
pub mod visibility;
pub mod volume;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use geom::{Aabb, Vec3};
pub use lod::{BlockAddress, Hierarchy, HierarchyLayout, LodManifest, ManifestEntry};
pub use model::MicroModel;
pub use render::{Frame, RenderParams};
pub use tf::TransferFunction;
pub use visibility::{LodTable, PointOfView};
pub use volume::{AnalyticField, MarschnerLobb, ScalarVolume};
