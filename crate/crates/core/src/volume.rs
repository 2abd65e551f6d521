//! Raw scalar volumes, analytic ground-truth fields and partition overhead.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::geom::{Aabb, Vec3};
use crate::{Error, Result};

/// Largest grid [`sample_grid`] will allocate by default (4 GiB of `f32`).
pub const DEFAULT_SAMPLE_BUDGET: usize = 1 << 30;

/// A regular grid of `f32` samples, x-fastest, spanning `bounds` with the
/// boundary samples lying exactly on the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    dims: [usize; 3],
    bounds: Aabb,
    samples: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(dims: [usize; 3], bounds: Aabb, samples: Vec<f32>) -> Result<Self> {
        check_dims(dims)?;
        if bounds.is_degenerate() {
            return Err(Error::DegenerateExtent);
        }
        let expected = dims[0] * dims[1] * dims[2];
        if samples.len() != expected {
            return Err(Error::SizeMismatch { expected: expected * 4, actual: samples.len() * 4 });
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(ScalarVolume { dims, bounds, samples })
    }

    /// Builds a volume from a per-index generator, in x-fastest order.
    pub fn from_fn(dims: [usize; 3], bounds: Aabb, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        check_dims(dims)?;
        let mut samples = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    samples.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, bounds, samples)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.samples[self.index(i, j, k)]
    }

    /// Physical position of sample `(i, j, k)`.
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let idx = [i, j, k];
        let mut p = [0.0; 3];
        for a in 0..3 {
            let t = idx[a] as f64 / (self.dims[a] - 1) as f64;
            p[a] = self.bounds.min[a] + t * (self.bounds.max[a] - self.bounds.min[a]);
        }
        p
    }

    /// `(min, max)` over all samples.
    pub fn value_range(&self) -> (f32, f32) {
        self.samples.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Size of the headerless raw encoding.
    pub fn raw_bytes(&self) -> usize {
        self.samples.len() * 4
    }

    /// Headerless little-endian `f32`, x-fastest.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.raw_bytes());
        for v in &self.samples {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(dims: [usize; 3], bounds: Aabb, bytes: &[u8]) -> Result<Self> {
        check_dims(dims)?;
        let expected = dims[0]
            .checked_mul(dims[1])
            .and_then(|n| n.checked_mul(dims[2]))
            .and_then(|n| n.checked_mul(4))
            .ok_or(Error::InvalidDims { dims, reason: "sample count overflows" })?;
        if bytes.len() != expected {
            return Err(Error::SizeMismatch { expected, actual: bytes.len() });
        }
        let samples = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Self::new(dims, bounds, samples)
    }
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::InvalidDims { dims, reason: "every axis needs at least 2 samples" });
    }
    Ok(())
}

/// A continuous scalar field with a closed-form gradient, used as ground truth.
pub trait AnalyticField: Sync {
    fn value(&self, p: Vec3) -> f64;
    fn gradient(&self, p: Vec3) -> Vec3;
}

/// The Marschner-Lobb test signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarschnerLobb {
    pub f_m: f64,
    pub alpha: f64,
}

impl Default for MarschnerLobb {
    fn default() -> Self {
        MarschnerLobb { f_m: 6.0, alpha: 0.05 }
    }
}

impl AnalyticField for MarschnerLobb {
    fn value(&self, p: Vec3) -> f64 {
        ml_value(p[0], p[1], p[2], self.f_m, self.alpha)
    }

    fn gradient(&self, p: Vec3) -> Vec3 {
        ml_gradient(p[0], p[1], p[2], self.f_m, self.alpha)
    }
}

pub fn ml_value(x: f64, y: f64, z: f64, f_m: f64, alpha: f64) -> f64 {
    let r = libm::sqrt(x * x + y * y);
    let rho = libm::cos(2.0 * PI * f_m * libm::cos(PI * r / 2.0));
    (1.0 - libm::sin(PI * z / 2.0) + alpha * (1.0 + rho)) / (2.0 * (1.0 + alpha))
}

/// Closed-form gradient of [`ml_value`]. The radial part is 0 on the z axis.
pub fn ml_gradient(x: f64, y: f64, z: f64, f_m: f64, alpha: f64) -> Vec3 {
    let denom = 2.0 * (1.0 + alpha);
    let dz = -(PI / 2.0) * libm::cos(PI * z / 2.0) / denom;
    let r = libm::sqrt(x * x + y * y);
    if r == 0.0 {
        return [0.0, 0.0, dz];
    }
    // d/dr cos(2π f cos(πr/2)) = π² f sin(πr/2) sin(2π f cos(πr/2))
    let drho = PI * PI * f_m * libm::sin(PI * r / 2.0) * libm::sin(2.0 * PI * f_m * libm::cos(PI * r / 2.0));
    let radial = alpha * drho / denom;
    [radial * x / r, radial * y / r, dz]
}

/// Samples `field` on a regular grid whose corner samples lie on `bounds`.
pub fn sample_grid(field: &dyn AnalyticField, dims: [usize; 3], bounds: Aabb) -> Result<ScalarVolume> {
    sample_grid_with_budget(field, dims, bounds, DEFAULT_SAMPLE_BUDGET)
}

pub fn sample_grid_with_budget(
    field: &dyn AnalyticField,
    dims: [usize; 3],
    bounds: Aabb,
    budget: usize,
) -> Result<ScalarVolume> {
    check_dims(dims)?;
    if bounds.is_degenerate() {
        return Err(Error::DegenerateExtent);
    }
    let requested = dims.iter().map(|&d| d as u128).product::<u128>();
    if requested > budget as u128 {
        return Err(Error::Budget { requested, budget });
    }
    let step = |a: usize, i: usize| bounds.min[a] + (i as f64 / (dims[a] - 1) as f64) * (bounds.max[a] - bounds.min[a]);
    ScalarVolume::from_fn(dims, bounds, |i, j, k| {
        // Pin the last sample to the bound exactly.
        let p = [
            if i + 1 == dims[0] { bounds.max[0] } else { step(0, i) },
            if j + 1 == dims[1] { bounds.max[1] } else { step(1, j) },
            if k + 1 == dims[2] { bounds.max[2] } else { step(2, k) },
        ];
        field.value(p) as f32
    })
}

/// Sample-count growth factor `(n+m)^3 / n^3` from splitting an `n`-edge
/// volume into `m` pieces per edge that each carry one extra sample layer.
pub fn ghost_overhead(n: usize, m: usize) -> Result<f64> {
    if n == 0 || m == 0 || m > n {
        return Err(Error::domain("partitions per edge", alloc::format!("m = {m} not in [1, {n}]")));
    }
    let n = n as f64;
    let m = m as f64;
    Ok((n + m) * (n + m) * (n + m) / (n * n * n))
}
