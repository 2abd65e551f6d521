//! Down-sampled raw blocks: trilinear values, central-difference gradients.
//!
//! A block keeps its interior samples (the same shared-boundary micro-block the
//! spline encoder sees) plus an optional one-sample ghost layer per face. Ghost
//! samples exist only where the neighbouring data exists; at the volume edge a
//! face has no ghost and differences fall back to the clamped (one-sided) form.

use alloc::format;
use alloc::vec::Vec;

use crate::exec::Executor;
use crate::geom::{Aabb, Vec3};
use crate::lod::{Backend, BlockAddress, Hierarchy, LodManifest};
use crate::volume::ScalarVolume;
use crate::{Error, Result};

/// Header bytes of an encoded block: three `u32` dims and six ghost widths.
pub const HEADER_BYTES: usize = 12 + 6;

#[derive(Debug, Clone, PartialEq)]
pub struct DsBlock {
    interior: [usize; 3],
    ghost_lo: [u8; 3],
    ghost_hi: [u8; 3],
    samples: Vec<f32>,
    extent: Aabb,
    lod: u32,
}

impl DsBlock {
    pub fn new(
        interior: [usize; 3],
        ghost_lo: [u8; 3],
        ghost_hi: [u8; 3],
        samples: Vec<f32>,
        extent: Aabb,
        lod: u32,
    ) -> Result<Self> {
        if interior.iter().any(|&n| n < 2) {
            return Err(Error::InvalidDims { dims: interior, reason: "every interior axis needs at least 2 samples" });
        }
        if ghost_lo.iter().chain(&ghost_hi).any(|&g| g > 1) {
            return Err(Error::Format(format!("ghost widths {ghost_lo:?}/{ghost_hi:?} exceed 1")));
        }
        if extent.is_degenerate() {
            return Err(Error::DegenerateExtent);
        }
        let block = DsBlock { interior, ghost_lo, ghost_hi, samples, extent, lod };
        let expected = block.sample_count();
        if block.samples.len() != expected {
            return Err(Error::SizeMismatch { expected, actual: block.samples.len() });
        }
        if let Some(i) = block.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(block)
    }

    /// A ghostless block over all samples of `volume`.
    pub fn from_volume(volume: &ScalarVolume, extent: Aabb, lod: u32) -> Result<Self> {
        Self::new(volume.dims(), [0; 3], [0; 3], volume.samples().to_vec(), extent, lod)
    }

    pub fn interior_dims(&self) -> [usize; 3] {
        self.interior
    }

    /// Stored dims per axis, ghost layers included.
    pub fn dims(&self) -> [usize; 3] {
        core::array::from_fn(|a| self.interior[a] + self.ghost_lo[a] as usize + self.ghost_hi[a] as usize)
    }

    pub fn ghost_lo(&self) -> [u8; 3] {
        self.ghost_lo
    }

    pub fn ghost_hi(&self) -> [u8; 3] {
        self.ghost_hi
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn extent(&self) -> &Aabb {
        &self.extent
    }

    pub fn lod(&self) -> u32 {
        self.lod
    }

    fn sample_count(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn encoded_size(&self) -> usize {
        HEADER_BYTES + 4 * self.sample_count()
    }

    #[inline]
    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        let d = self.dims();
        self.samples[i + d[0] * (j + d[1] * k)] as f64
    }

    /// Continuous stored-array coordinates of parameter `u` (clamped to the
    /// interior).
    fn coords(&self, u: Vec3) -> Vec3 {
        core::array::from_fn(|a| u[a].clamp(0.0, 1.0) * (self.interior[a] - 1) as f64 + self.ghost_lo[a] as f64)
    }

    /// Base index and fractional offsets of the cell holding `x`; the cell is
    /// kept inside the interior so ghosts only feed differences.
    fn cell(&self, x: Vec3) -> ([usize; 3], Vec3) {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let lo = self.ghost_lo[a] as usize;
            let hi = lo + self.interior[a] - 2;
            let i = (libm::floor(x[a]) as usize).clamp(lo, hi);
            base[a] = i;
            frac[a] = x[a] - i as f64;
        }
        (base, frac)
    }

    /// Trilinear value at parameter `u ∈ [0,1]^3`.
    pub fn query_value(&self, u: Vec3) -> f64 {
        let (b, t) = self.cell(self.coords(u));
        trilinear(t, |di, dj, dk| self.at(b[0] + di, b[1] + dj, b[2] + dk))
    }

    /// Central difference at a stored node in index units; one-sided where
    /// the neighbour is missing.
    fn node_gradient(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let d = self.dims();
        let idx = [i, j, k];
        core::array::from_fn(|a| {
            let lo = idx[a].saturating_sub(1);
            let hi = (idx[a] + 1).min(d[a] - 1);
            let mut p = idx;
            let mut q = idx;
            p[a] = hi;
            q[a] = lo;
            (self.at(p[0], p[1], p[2]) - self.at(q[0], q[1], q[2])) / (hi - lo) as f64
        })
    }

    /// Gradient in normalized volume coordinates: node central differences,
    /// trilinearly interpolated.
    pub fn query_gradient(&self, u: Vec3) -> Vec3 {
        let (b, t) = self.cell(self.coords(u));
        let mut g = [0.0; 3];
        for a in 0..3 {
            g[a] = trilinear(t, |di, dj, dk| self.node_gradient(b[0] + di, b[1] + dj, b[2] + dk)[a]);
        }
        let s = self.extent.size();
        core::array::from_fn(|a| g[a] * (self.interior[a] - 1) as f64 / s[a])
    }

    /// `[u32 LE dims x3][u8 ghost_lo x3][u8 ghost_hi x3][f32 LE samples]`,
    /// where dims are the interior dims.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_size());
        for &n in &self.interior {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.ghost_lo);
        out.extend_from_slice(&self.ghost_hi);
        for v in &self.samples {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], extent: Aabb, lod: u32) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::SizeMismatch { expected: HEADER_BYTES, actual: bytes.len() });
        }
        let dim = |a: usize| {
            u32::from_le_bytes([bytes[4 * a], bytes[4 * a + 1], bytes[4 * a + 2], bytes[4 * a + 3]]) as usize
        };
        let interior = [dim(0), dim(1), dim(2)];
        let ghost_lo = [bytes[12], bytes[13], bytes[14]];
        let ghost_hi = [bytes[15], bytes[16], bytes[17]];
        let mut total: usize = 1;
        for a in 0..3 {
            let n = interior[a]
                .checked_add(ghost_lo[a] as usize + ghost_hi[a] as usize)
                .ok_or_else(|| Error::Format(format!("dims {interior:?} overflow")))?;
            total = total.checked_mul(n).ok_or_else(|| Error::Format(format!("dims {interior:?} overflow")))?;
        }
        let expected = total.checked_mul(4).and_then(|b| b.checked_add(HEADER_BYTES));
        if expected != Some(bytes.len()) {
            return Err(Error::SizeMismatch { expected: expected.unwrap_or(usize::MAX), actual: bytes.len() });
        }
        let samples =
            bytes[HEADER_BYTES..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Self::new(interior, ghost_lo, ghost_hi, samples, extent, lod)
    }
}

fn trilinear(t: Vec3, f: impl Fn(usize, usize, usize) -> f64) -> f64 {
    let lerp = |a: f64, b: f64, s: f64| a + (b - a) * s;
    let c00 = lerp(f(0, 0, 0), f(1, 0, 0), t[0]);
    let c10 = lerp(f(0, 1, 0), f(1, 1, 0), t[0]);
    let c01 = lerp(f(0, 0, 1), f(1, 0, 1), t[0]);
    let c11 = lerp(f(0, 1, 1), f(1, 1, 1), t[0]);
    lerp(lerp(c00, c10, t[1]), lerp(c01, c11, t[1]), t[2])
}

/// Cuts the DS block for `addr`. With `ghost`, each face gets one extra
/// sample (one level stride further out) wherever the volume extends past it.
pub fn build_ds_block(hier: &Hierarchy<'_>, addr: &BlockAddress, ghost: bool) -> Result<DsBlock> {
    let layout = hier.layout();
    if !layout.contains(addr) {
        return Err(Error::Partition(format!("block {addr} is not part of the hierarchy")));
    }
    let vol = hier.volume();
    let vd = vol.dims();
    let micro = layout.micro_dims;
    let mut origin = [0usize; 3];
    let mut stride = [0usize; 3];
    let mut glo = [0u8; 3];
    let mut ghi = [0u8; 3];
    for a in 0..3 {
        stride[a] = layout.stride(addr.lod, a);
        origin[a] = addr.ijk[a] as usize * layout.span(addr.lod, a);
        if ghost {
            glo[a] = u8::from(origin[a] >= stride[a]);
            ghi[a] = u8::from(origin[a] + micro[a] * stride[a] < vd[a]);
        }
    }
    let dims: [usize; 3] = core::array::from_fn(|a| micro[a] + glo[a] as usize + ghi[a] as usize);
    let mut samples = Vec::with_capacity(dims.iter().product());
    for k in 0..dims[2] {
        let z = origin[2] + k * stride[2] - glo[2] as usize * stride[2];
        for j in 0..dims[1] {
            let y = origin[1] + j * stride[1] - glo[1] as usize * stride[1];
            for i in 0..dims[0] {
                let x = origin[0] + i * stride[0] - glo[0] as usize * stride[0];
                samples.push(vol.get(x, y, z));
            }
        }
    }
    DsBlock::new(micro, glo, ghi, samples, layout.extent(addr), addr.lod)
}

/// Builds every DS block of `hier`, handing each to `sink` in address order.
pub fn build_ds_store<E, S>(hier: &Hierarchy<'_>, ghost: bool, exec: &E, mut sink: S) -> Result<LodManifest>
where
    E: Executor,
    S: FnMut(&BlockAddress, &DsBlock) -> Result<()>,
{
    let mut manifest = hier.manifest_skeleton(Backend::Ds);
    manifest.ghost = usize::from(ghost);
    let all = hier.layout().all_addresses();
    for chunk in all.chunks(64) {
        let blocks = exec.map(chunk.to_vec(), |addr| build_ds_block(hier, &addr, ghost).map(|b| (addr, b)));
        for r in blocks {
            let (addr, block) = r?;
            let entry = manifest.entry_mut(&addr).expect("skeleton covers every address");
            entry.ncp = block.interior[0];
            entry.bytes = block.encoded_size() as u64;
            sink(&addr, &block)?;
        }
    }
    Ok(manifest)
}

/// Trilinearly resamples `block` onto a `dims` grid over the same bounds
/// (the equal-storage down-sampling baseline).
pub fn resample(block: &ScalarVolume, dims: [usize; 3]) -> Result<ScalarVolume> {
    let src = DsBlock::from_volume(block, Aabb::unit_domain(), 0)?;
    ScalarVolume::from_fn(dims, *block.bounds(), |i, j, k| {
        let u = [i, j, k];
        let p: Vec3 = core::array::from_fn(|a| if dims[a] > 1 { u[a] as f64 / (dims[a] - 1) as f64 } else { 0.0 });
        src.query_value(p) as f32
    })
}
