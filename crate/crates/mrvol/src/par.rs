//! Thread-pool executor backed by rayon.

use mrvol_core::Executor;
use rayon::prelude::*;

/// Runs [`Executor::map`] on the global rayon pool, preserving order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl Executor for Rayon {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        items.into_par_iter().map(f).collect()
    }
}
