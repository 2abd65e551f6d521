//! Adaptive NCP selection.
//!
//! In-level search sweeps every NCP of a micro-block and keeps the smallest
//! one whose RMSE is under the bound. Cross-level encoding runs that search on
//! the coarsest level only, then at each finer level searches just the blocks
//! whose parent came out complex; the rest are stored at the minimum NCP.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::exec::Executor;
use crate::lod::{Backend, BlockAddress, EncodeWarning, Hierarchy, LodManifest};
use crate::model::{error_rmse, MicroModel};
use crate::volume::ScalarVolume;
use crate::{Error, Result};

pub use crate::model::error_rmse as rmse;

/// Blocks handed to the executor per batch; bounds peak model memory.
const BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    /// Fit every NCP in `[degree + 1, n]`.
    #[default]
    Exhaustive,
    /// Binary search assuming RMSE is non-increasing in NCP. Approximate: it
    /// can miss the true minimum when that assumption fails.
    AssumeMonotone,
}

/// `NCP -> RMSE` for one micro-block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorProfile(BTreeMap<usize, f64>);

impl ErrorProfile {
    pub fn get(&self, ncp: usize) -> Option<f64> {
        self.0.get(&ncp).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Smallest NCP whose RMSE is strictly below `bound`.
    pub fn min_meeting(&self, bound: f64) -> Option<usize> {
        self.0.iter().find(|(_, &e)| e < bound).map(|(&k, _)| k)
    }
}

/// Complex blocks across all levels (the level is part of the address).
pub type ComplexSet = BTreeSet<BlockAddress>;

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub ncp_star: usize,
    pub profile: ErrorProfile,
    pub complex: bool,
    /// No NCP met the bound; `ncp_star` is the maximum.
    pub unmet: bool,
    pub rmse: f64,
    pub model: MicroModel,
}

pub fn in_level_search(block: &ScalarVolume, error_bound: f64, degree: usize) -> Result<SearchOutcome> {
    in_level_search_with(block, error_bound, degree, SearchMode::Exhaustive)
}

pub fn in_level_search_with(
    block: &ScalarVolume,
    error_bound: f64,
    degree: usize,
    mode: SearchMode,
) -> Result<SearchOutcome> {
    if !(error_bound > 0.0) {
        return Err(Error::domain("error bound", alloc::format!("{error_bound} is not positive")));
    }
    let ncp_min = degree + 1;
    let n = block.dims().iter().copied().min().unwrap_or(0);
    if n < ncp_min {
        return Err(Error::domain("micro-block edge", alloc::format!("{n} < degree + 1 = {ncp_min}")));
    }
    let mut profile = ErrorProfile::default();
    let fit = |ncp: usize, profile: &mut ErrorProfile| -> Result<(MicroModel, f64)> {
        let m = MicroModel::fit(block, ncp, degree)?;
        let e = error_rmse(block, &m);
        profile.0.insert(ncp, e);
        Ok((m, e))
    };

    // Start from the highest NCP, which is also the fallback.
    let (top_model, top_err) = fit(n, &mut profile)?;
    let mut best: Option<(usize, MicroModel, f64)> = (top_err < error_bound).then(|| (n, top_model.clone(), top_err));

    match mode {
        SearchMode::Exhaustive => {
            for ncp in (ncp_min..n).rev() {
                let (m, e) = fit(ncp, &mut profile)?;
                if e < error_bound {
                    best = Some((ncp, m, e));
                }
            }
        }
        SearchMode::AssumeMonotone => {
            if best.is_some() {
                // Invariant: `hi` meets the bound, everything below `lo` is untested.
                let (mut lo, mut hi) = (ncp_min, n);
                while lo < hi {
                    let mid = lo + (hi - lo) / 2;
                    let (m, e) = fit(mid, &mut profile)?;
                    if e < error_bound {
                        hi = mid;
                        best = Some((mid, m, e));
                    } else {
                        lo = mid + 1;
                    }
                }
            }
        }
    }

    Ok(match best {
        Some((ncp_star, model, rmse)) => {
            SearchOutcome { ncp_star, profile, complex: ncp_star > ncp_min, unmet: false, rmse, model }
        }
        None => SearchOutcome { ncp_star: n, profile, complex: true, unmet: true, rmse: top_err, model: top_model },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeConfig {
    pub error_bound: f64,
    pub degree: usize,
    pub mode: SearchMode,
    /// Skip the search below simple parents. Off = search every block.
    pub cross_level: bool,
}

impl EncodeConfig {
    pub fn new(error_bound: f64, degree: usize) -> Self {
        EncodeConfig { error_bound, degree, mode: SearchMode::Exhaustive, cross_level: true }
    }
}

#[derive(Debug, Clone)]
pub struct EncodeReport {
    pub manifest: LodManifest,
    pub complex: ComplexSet,
    pub searched_blocks: usize,
    pub total_blocks: usize,
    /// Number of least-squares fits performed.
    pub fits: usize,
    pub profiles: BTreeMap<BlockAddress, ErrorProfile>,
    pub warnings: Vec<(BlockAddress, EncodeWarning)>,
}

struct BlockResult {
    addr: BlockAddress,
    model: MicroModel,
    searched: bool,
    complex: bool,
    rmse: f64,
    warning: Option<EncodeWarning>,
    profile: Option<ErrorProfile>,
}

fn encode_one(hier: &Hierarchy<'_>, addr: BlockAddress, searched: bool, cfg: &EncodeConfig) -> Result<BlockResult> {
    let block = hier.micro_block(&addr)?;
    if searched {
        let out = in_level_search_with(&block, cfg.error_bound, cfg.degree, cfg.mode)?;
        Ok(BlockResult {
            addr,
            model: out.model.with_lod(addr.lod),
            searched,
            complex: out.complex,
            rmse: out.rmse,
            warning: out.unmet.then_some(EncodeWarning::BoundUnmet),
            profile: Some(out.profile),
        })
    } else {
        let model = MicroModel::fit(&block, cfg.degree + 1, cfg.degree)?.with_lod(addr.lod);
        let rmse = error_rmse(&block, &model);
        Ok(BlockResult {
            addr,
            model,
            searched,
            complex: false,
            rmse,
            warning: (rmse >= cfg.error_bound).then_some(EncodeWarning::PrunedAboveBound),
            profile: None,
        })
    }
}

/// Encodes every block of `hier`, coarsest level first. Finished models are
/// passed to `sink` in ascending address order within each level.
pub fn cross_level_encode<E, S>(hier: &Hierarchy<'_>, cfg: &EncodeConfig, exec: &E, mut sink: S) -> Result<EncodeReport>
where
    E: Executor,
    S: FnMut(&BlockAddress, &MicroModel) -> Result<()>,
{
    let layout = hier.layout();
    let mut manifest = hier.manifest_skeleton(Backend::Mfa);
    manifest.degree = cfg.degree;
    manifest.error_bound = cfg.error_bound;
    let mut report = EncodeReport {
        manifest: manifest.clone(),
        complex: ComplexSet::new(),
        searched_blocks: 0,
        total_blocks: layout.total_blocks(),
        fits: 0,
        profiles: BTreeMap::new(),
        warnings: Vec::new(),
    };

    for lod in (1..=layout.levels).rev() {
        let jobs: Vec<(BlockAddress, bool)> = layout
            .addresses(lod)
            .into_iter()
            .map(|addr| {
                let searched = !cfg.cross_level
                    || match layout.parent(&addr) {
                        None => true,
                        Some(p) => report.complex.contains(&p),
                    };
                (addr, searched)
            })
            .collect();
        // The complex set of this level is only read by the next one, so the
        // per-level loop is the barrier.
        for chunk in jobs.chunks(BATCH) {
            let results = exec.map(chunk.to_vec(), |(addr, searched)| {
                encode_one(hier, addr, searched, cfg).map_err(|e| e.at_block(addr))
            });
            for r in results {
                let r = r?;
                let entry = manifest.entry_mut(&r.addr).expect("skeleton covers every address");
                entry.ncp = r.model.ncp();
                entry.complex = r.complex;
                entry.searched = r.searched;
                entry.bytes = r.model.serialized_size() as u64;
                entry.rmse = Some(r.rmse);
                entry.warning = r.warning;
                if r.complex {
                    report.complex.insert(r.addr);
                }
                if let Some(w) = r.warning {
                    report.warnings.push((r.addr, w));
                }
                match r.profile {
                    Some(p) => {
                        report.searched_blocks += 1;
                        report.fits += p.len();
                        report.profiles.insert(r.addr, p);
                    }
                    None => report.fits += 1,
                }
                sink(&r.addr, &r.model)?;
            }
        }
    }
    report.manifest = manifest;
    Ok(report)
}

/// Encodes every block at one fixed NCP (the non-adaptive baseline). `None`
/// uses the micro-block edge length, the largest valid NCP.
pub fn fixed_ncp_encode<E, S>(
    hier: &Hierarchy<'_>,
    ncp: Option<usize>,
    degree: usize,
    exec: &E,
    mut sink: S,
) -> Result<LodManifest>
where
    E: Executor,
    S: FnMut(&BlockAddress, &MicroModel) -> Result<()>,
{
    let layout = hier.layout();
    let ncp = ncp.unwrap_or_else(|| layout.micro_dims.iter().copied().min().unwrap_or(0));
    let mut manifest = hier.manifest_skeleton(Backend::Mfa);
    manifest.degree = degree;
    let all = layout.all_addresses();
    for chunk in all.chunks(BATCH) {
        let results = exec.map(chunk.to_vec(), |addr| {
            let block = hier.micro_block(&addr)?;
            let m = MicroModel::fit(&block, ncp, degree)?.with_lod(addr.lod);
            let e = error_rmse(&block, &m);
            Ok::<_, Error>((addr, m, e))
        });
        for r in results {
            let (addr, m, e) = r?;
            let entry = manifest.entry_mut(&addr).expect("skeleton covers every address");
            entry.ncp = ncp;
            entry.bytes = m.serialized_size() as u64;
            entry.rmse = Some(e);
            entry.searched = false;
            sink(&addr, &m)?;
        }
    }
    Ok(manifest)
}

/// Raw volume bytes over the summed micro-model bytes of all levels.
pub fn compression_ratio(manifest: &LodManifest, raw_bytes: u64) -> f64 {
    manifest.compression_ratio(raw_bytes)
}
