//! Bipartite level-of-detail layout, shared-boundary partitioning and the
//! store manifest.
//!
//! Level 1 is the finest. Level `L` has `coarsest << (levels - L)` blocks per
//! axis; neighbouring blocks share their boundary sample layer, and each block
//! is stride-subsampled down to the common micro-block resolution.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::geom::Aabb;
use crate::volume::ScalarVolume;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockAddress {
    pub lod: u32,
    pub ijk: [u32; 3],
}

impl BlockAddress {
    pub const fn new(lod: u32, ijk: [u32; 3]) -> Self {
        BlockAddress { lod, ijk }
    }

    /// Store-relative file path, `level-N/i_j_k.<ext>`.
    pub fn rel_path(&self, ext: &str) -> String {
        let [i, j, k] = self.ijk;
        format!("level-{}/{}_{}_{}.{}", self.lod, i, j, k, ext)
    }
}

impl fmt::Display for BlockAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [i, j, k] = self.ijk;
        write!(f, "L{}/{}_{}_{}", self.lod, i, j, k)
    }
}

/// Geometry of a multi-resolution hierarchy over a given volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyLayout {
    pub levels: u32,
    pub coarsest_blocks_per_axis: u32,
    pub micro_dims: [usize; 3],
    pub volume_dims: [usize; 3],
}

impl HierarchyLayout {
    pub fn new(volume_dims: [usize; 3], levels: u32, micro_dims: [usize; 3], coarsest: u32) -> Result<Self> {
        if levels == 0 || levels > 16 {
            return Err(Error::Partition(format!("levels must be in 1..=16, got {levels}")));
        }
        if coarsest == 0 {
            return Err(Error::Partition("coarsest level needs at least one block per axis".into()));
        }
        let layout = HierarchyLayout { levels, coarsest_blocks_per_axis: coarsest, micro_dims, volume_dims };
        // Coarser spans are exact multiples of the finest one, so checking
        // level 1 covers every level.
        check_partition(volume_dims, layout.blocks_per_axis(1) as usize, micro_dims)?;
        Ok(layout)
    }

    pub fn blocks_per_axis(&self, lod: u32) -> u32 {
        debug_assert!(lod >= 1 && lod <= self.levels);
        self.coarsest_blocks_per_axis << (self.levels - lod)
    }

    pub fn finest_blocks_per_axis(&self) -> u32 {
        self.blocks_per_axis(1)
    }

    pub fn total_blocks(&self) -> usize {
        (1..=self.levels).map(|l| (self.blocks_per_axis(l) as usize).pow(3)).sum()
    }

    /// Sample-index span of one block along `axis`.
    pub fn span(&self, lod: u32, axis: usize) -> usize {
        (self.volume_dims[axis] - 1) / self.blocks_per_axis(lod) as usize
    }

    pub fn stride(&self, lod: u32, axis: usize) -> usize {
        self.span(lod, axis) / (self.micro_dims[axis] - 1)
    }

    pub fn contains(&self, addr: &BlockAddress) -> bool {
        addr.lod >= 1 && addr.lod <= self.levels && addr.ijk.iter().all(|&c| c < self.blocks_per_axis(addr.lod))
    }

    /// Extent in normalized `[-1, 1]^3` coordinates.
    pub fn extent(&self, addr: &BlockAddress) -> Aabb {
        let mut ext = Aabb::unit_domain();
        for a in 0..3 {
            let last = (self.volume_dims[a] - 1) as f64;
            let s = self.span(addr.lod, a);
            let lo = addr.ijk[a] as usize * s;
            ext.min[a] = -1.0 + 2.0 * lo as f64 / last;
            ext.max[a] = -1.0 + 2.0 * (lo + s) as f64 / last;
        }
        ext
    }

    /// All addresses of one level, in ascending [`BlockAddress`] order.
    pub fn addresses(&self, lod: u32) -> Vec<BlockAddress> {
        let b = self.blocks_per_axis(lod);
        let mut out = Vec::with_capacity((b as usize).pow(3));
        for i in 0..b {
            for j in 0..b {
                for k in 0..b {
                    out.push(BlockAddress::new(lod, [i, j, k]));
                }
            }
        }
        out
    }

    pub fn all_addresses(&self) -> Vec<BlockAddress> {
        (1..=self.levels).flat_map(|l| self.addresses(l)).collect()
    }

    pub fn children(&self, addr: &BlockAddress) -> Option<[BlockAddress; 8]> {
        if addr.lod <= 1 {
            return None;
        }
        let mut out = [BlockAddress::new(addr.lod - 1, [0; 3]); 8];
        for (c, o) in out.iter_mut().enumerate() {
            for a in 0..3 {
                o.ijk[a] = addr.ijk[a] * 2 + (c as u32 >> a & 1);
            }
        }
        Some(out)
    }

    pub fn parent(&self, addr: &BlockAddress) -> Option<BlockAddress> {
        if addr.lod >= self.levels {
            return None;
        }
        Some(BlockAddress::new(addr.lod + 1, [addr.ijk[0] / 2, addr.ijk[1] / 2, addr.ijk[2] / 2]))
    }
}

fn check_partition(dims: [usize; 3], blocks_per_axis: usize, micro_dims: [usize; 3]) -> Result<()> {
    for a in 0..3 {
        let m = micro_dims[a];
        if m < 2 {
            return Err(Error::Partition(format!("micro-block edge must be at least 2, got {m}")));
        }
        let unit = blocks_per_axis * (m - 1);
        let cells = dims[a].saturating_sub(1);
        if cells == 0 || !cells.is_multiple_of(unit) {
            let lower = (cells / unit) * unit + 1;
            let upper = (cells / unit + 1) * unit + 1;
            return Err(Error::Partition(format!(
                "axis {a}: {} samples cannot be split into {blocks_per_axis} shared-boundary blocks of \
                 {m} samples; valid sizes are k*{unit}+1 (nearest: {}{upper}; pad by edge replication)",
                dims[a],
                if lower > 1 { format!("{lower} or ") } else { String::new() },
            )));
        }
    }
    Ok(())
}

/// Extracts a stride-subsampled block whose first sample is `origin`.
fn extract(
    volume: &ScalarVolume,
    origin: [usize; 3],
    stride: [usize; 3],
    micro: [usize; 3],
    extent: Aabb,
) -> Result<ScalarVolume> {
    ScalarVolume::from_fn(micro, extent, |i, j, k| {
        volume.get(origin[0] + i * stride[0], origin[1] + j * stride[1], origin[2] + k * stride[2])
    })
}

/// Splits `volume` into `blocks_per_axis^3` shared-boundary blocks, each
/// subsampled to `micro_dims`. Block extents are normalized to `[-1, 1]^3`.
pub fn partition_level(
    volume: &ScalarVolume,
    lod: u32,
    blocks_per_axis: u32,
    micro_dims: [usize; 3],
) -> Result<Vec<(BlockAddress, ScalarVolume)>> {
    if blocks_per_axis == 0 {
        return Err(Error::Partition("need at least one block per axis".into()));
    }
    let dims = volume.dims();
    check_partition(dims, blocks_per_axis as usize, micro_dims)?;
    let layout =
        HierarchyLayout { levels: 1, coarsest_blocks_per_axis: blocks_per_axis, micro_dims, volume_dims: dims };
    let mut out = Vec::new();
    for a in layout.addresses(1) {
        let block = Hierarchy { volume, layout: layout.clone() }.micro_block(&a)?;
        out.push((BlockAddress::new(lod, a.ijk), block));
    }
    Ok(out)
}

/// A layout bound to its source volume; micro-blocks are cut on demand.
#[derive(Debug, Clone)]
pub struct Hierarchy<'a> {
    volume: &'a ScalarVolume,
    layout: HierarchyLayout,
}

impl<'a> Hierarchy<'a> {
    pub fn layout(&self) -> &HierarchyLayout {
        &self.layout
    }

    pub fn volume(&self) -> &'a ScalarVolume {
        self.volume
    }

    pub fn micro_block(&self, addr: &BlockAddress) -> Result<ScalarVolume> {
        if !self.layout.contains(addr) {
            return Err(Error::Partition(format!("block {addr} is not part of the hierarchy")));
        }
        let mut origin = [0; 3];
        let mut stride = [0; 3];
        for a in 0..3 {
            origin[a] = addr.ijk[a] as usize * self.layout.span(addr.lod, a);
            stride[a] = self.layout.stride(addr.lod, a);
        }
        extract(self.volume, origin, stride, self.layout.micro_dims, self.layout.extent(addr))
    }

    /// Manifest with addresses, extents and paths filled in; per-block
    /// encoding results are left at their defaults.
    pub fn manifest_skeleton(&self, backend: Backend) -> LodManifest {
        let ext = backend.extension();
        let (lo, hi) = self.volume.value_range();
        LodManifest {
            format_version: 1,
            backend,
            finest_blocks_per_axis: self.layout.finest_blocks_per_axis(),
            layout: self.layout.clone(),
            degree: 0,
            error_bound: 0.0,
            ghost: 0,
            physical_bounds: *self.volume.bounds(),
            value_range: [lo, hi],
            entries: self
                .layout
                .all_addresses()
                .into_iter()
                .map(|address| ManifestEntry {
                    path: address.rel_path(ext),
                    extent: self.layout.extent(&address),
                    address,
                    ncp: 0,
                    complex: false,
                    searched: false,
                    bytes: 0,
                    rmse: None,
                    warning: None,
                })
                .collect(),
        }
    }
}

/// Lays out a hierarchy of `levels` levels over `volume`.
pub fn build_hierarchy(
    volume: &ScalarVolume,
    levels: u32,
    micro_dims: [usize; 3],
    coarsest: u32,
) -> Result<Hierarchy<'_>> {
    let layout = HierarchyLayout::new(volume.dims(), levels, micro_dims, coarsest)?;
    Ok(Hierarchy { volume, layout })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Mfa,
    Ds,
}

impl Backend {
    pub fn extension(self) -> &'static str {
        match self {
            Backend::Mfa => "mfa",
            Backend::Ds => "dsb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodeWarning {
    /// No NCP met the bound; the block was stored at the maximum NCP.
    BoundUnmet,
    /// Encoded at the minimum NCP without a search (simple parent) and the
    /// result misses the bound.
    PrunedAboveBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub address: BlockAddress,
    pub path: String,
    /// Control points per axis (MFA) or interior samples per axis (DS).
    pub ncp: usize,
    pub extent: Aabb,
    pub complex: bool,
    pub searched: bool,
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<EncodeWarning>,
}

/// On-disk index of an encoded store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LodManifest {
    pub format_version: u32,
    pub backend: Backend,
    pub layout: HierarchyLayout,
    pub finest_blocks_per_axis: u32,
    pub degree: usize,
    pub error_bound: f64,
    pub ghost: usize,
    pub physical_bounds: Aabb,
    pub value_range: [f32; 2],
    /// Sorted by address.
    pub entries: Vec<ManifestEntry>,
}

impl LodManifest {
    pub fn entry(&self, addr: &BlockAddress) -> Option<&ManifestEntry> {
        self.entries.binary_search_by(|e| e.address.cmp(addr)).ok().map(|i| &self.entries[i])
    }

    pub fn entry_mut(&mut self, addr: &BlockAddress) -> Option<&mut ManifestEntry> {
        match self.entries.binary_search_by(|e| e.address.cmp(addr)) {
            Ok(i) => Some(&mut self.entries[i]),
            Err(_) => None,
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.bytes).sum()
    }

    pub fn level_bytes(&self, lod: u32) -> u64 {
        self.entries.iter().filter(|e| e.address.lod == lod).map(|e| e.bytes).sum()
    }

    /// Raw volume size over the summed block sizes of every level.
    pub fn compression_ratio(&self, raw_bytes: u64) -> f64 {
        raw_bytes as f64 / self.total_bytes() as f64
    }
}
