//! On-disk block stores.
//!
//! A store is a directory holding `manifest.json` and one file per block at
//! `level-<lod>/<i>_<j>_<k>.<ext>`, where the extension is `mfa` for
//! micro-models and `dsb` for down-sampled blocks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mrvol_core::ds::{build_ds_store, DsBlock};
use mrvol_core::encoder::{cross_level_encode, fixed_ncp_encode, EncodeConfig, EncodeReport};
use mrvol_core::lod::{build_hierarchy, Backend};
use mrvol_core::render::{BlockSampler, BlockSource};
use mrvol_core::{BlockAddress, Executor, HierarchyLayout, LodManifest, MicroModel, ScalarVolume, Vec3};

use crate::error::{Error, Result};
use crate::io;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub enum StoreBlock {
    Mfa(MicroModel),
    Ds(DsBlock),
}

impl BlockSampler for StoreBlock {
    fn sample(&self, u: Vec3) -> (f64, Vec3) {
        match self {
            StoreBlock::Mfa(m) => m.sample(u),
            StoreBlock::Ds(d) => d.sample(u),
        }
    }
}

impl StoreBlock {
    pub fn encoded_size(&self) -> usize {
        match self {
            StoreBlock::Mfa(m) => m.serialized_size(),
            StoreBlock::Ds(d) => d.encoded_size(),
        }
    }
}

/// Blocks handed to the renderer for one frame.
#[derive(Debug, Clone, Default)]
pub struct Resident(pub BTreeMap<BlockAddress, Arc<StoreBlock>>);

impl BlockSource for Resident {
    fn block(&self, addr: &BlockAddress) -> Option<&dyn BlockSampler> {
        self.0.get(addr).map(|b| b.as_ref() as &dyn BlockSampler)
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    manifest: LodManifest,
}

impl Store {
    pub fn open(root: &Path) -> Result<Store> {
        let manifest: LodManifest = io::read_json(&root.join(MANIFEST))?;
        if manifest.entries.len() != manifest.layout.total_blocks() {
            return Err(Error::Core(mrvol_core::Error::Format(format!(
                "{}: manifest lists {} blocks, layout has {}",
                root.display(),
                manifest.entries.len(),
                manifest.layout.total_blocks()
            ))));
        }
        Ok(Store { root: root.to_path_buf(), manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &LodManifest {
        &self.manifest
    }

    pub fn layout(&self) -> &HierarchyLayout {
        &self.manifest.layout
    }

    pub fn load(&self, addr: &BlockAddress) -> Result<StoreBlock> {
        self.load_inner(addr).map_err(|e| Error::Block { addr: *addr, source: Box::new(e) })
    }

    fn load_inner(&self, addr: &BlockAddress) -> Result<StoreBlock> {
        let entry = self.manifest.entry(addr).ok_or(Error::Core(mrvol_core::Error::MissingBlock { addr: *addr }))?;
        let path = self.root.join(&entry.path);
        let bytes = fs::read(&path).map_err(Error::io(&path))?;
        Ok(match self.manifest.backend {
            Backend::Mfa => StoreBlock::Mfa(MicroModel::deserialize(&bytes, entry.ncp, entry.extent, addr.lod)?),
            Backend::Ds => StoreBlock::Ds(DsBlock::decode(&bytes, entry.extent, addr.lod)?),
        })
    }

    /// Loads every block in `addrs` (no caching).
    pub fn load_all(&self, addrs: &[BlockAddress]) -> Result<Resident> {
        let mut out = BTreeMap::new();
        for a in addrs {
            out.insert(*a, Arc::new(self.load(a)?));
        }
        Ok(Resident(out))
    }
}

/// Hierarchy shape shared by all store writers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutOptions {
    pub levels: u32,
    pub micro_dims: [usize; 3],
    pub coarsest_blocks_per_axis: u32,
}

fn block_writer(root: &Path) -> impl FnMut(&BlockAddress, &str, &[u8]) -> mrvol_core::Result<()> + '_ {
    move |addr, ext, bytes| {
        let path = root.join(addr.rel_path(ext));
        let write = || -> std::io::Result<()> {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            fs::write(&path, bytes)
        };
        write().map_err(|e| mrvol_core::Error::Format(format!("{}: {e}", path.display())))
    }
}

fn prepare(root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(Error::io(root))
}

/// Adaptive micro-model store.
pub fn write_mfa_store<E: Executor>(
    root: &Path,
    volume: &ScalarVolume,
    layout: LayoutOptions,
    cfg: &EncodeConfig,
    exec: &E,
) -> Result<EncodeReport> {
    prepare(root)?;
    let h = build_hierarchy(volume, layout.levels, layout.micro_dims, layout.coarsest_blocks_per_axis)?;
    let mut write = block_writer(root);
    let report = cross_level_encode(&h, cfg, exec, |a, m| write(a, "mfa", &m.serialize()))?;
    io::write_json(&root.join(MANIFEST), &report.manifest)?;
    Ok(report)
}

/// Non-adaptive store: every block at one NCP (`None` = micro-block edge).
pub fn write_fixed_store<E: Executor>(
    root: &Path,
    volume: &ScalarVolume,
    layout: LayoutOptions,
    ncp: Option<usize>,
    degree: usize,
    exec: &E,
) -> Result<LodManifest> {
    prepare(root)?;
    let h = build_hierarchy(volume, layout.levels, layout.micro_dims, layout.coarsest_blocks_per_axis)?;
    let mut write = block_writer(root);
    let manifest = fixed_ncp_encode(&h, ncp, degree, exec, |a, m| write(a, "mfa", &m.serialize()))?;
    io::write_json(&root.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn write_ds_store<E: Executor>(
    root: &Path,
    volume: &ScalarVolume,
    layout: LayoutOptions,
    ghost: bool,
    exec: &E,
) -> Result<LodManifest> {
    prepare(root)?;
    let h = build_hierarchy(volume, layout.levels, layout.micro_dims, layout.coarsest_blocks_per_axis)?;
    let mut write = block_writer(root);
    let manifest = build_ds_store(&h, ghost, exec, |a, b| write(a, "dsb", &b.encode()))?;
    io::write_json(&root.join(MANIFEST), &manifest)?;
    Ok(manifest)
}
