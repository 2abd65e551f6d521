//! Out-of-core runtime for `mrvol-core` stores: on-disk stores, the model
//! cache and prefetcher, replay and comparison reports, and the render
//! service.

pub mod cache;
pub mod compare;
pub mod error;
pub mod io;
pub mod par;
pub mod report;
pub mod runtime;
pub mod service;
pub mod store;

pub use error::{Error, Result};
