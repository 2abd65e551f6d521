//! Backend quality comparison against an analytic ground truth.

use std::path::Path;

use mrvol_core::metrics::{mse, psnr, ssim};
use mrvol_core::render::{render, render_ground_truth};
use mrvol_core::visibility::select_visible;
use mrvol_core::volume::AnalyticField;
use mrvol_core::{
    ds, Executor, Frame, LodManifest, LodTable, PointOfView, RenderParams, ScalarVolume, TransferFunction,
};

use crate::error::{Error, Result};
use crate::report::QualityRow;
use crate::store::{write_ds_store, LayoutOptions, Store};

/// Renders `store` from `pov` with every visible block loaded.
pub fn render_store<E: Executor>(
    store: &Store,
    pov: &PointOfView,
    table: &LodTable,
    tf: &TransferFunction,
    params: &RenderParams,
    exec: &E,
) -> Result<Frame> {
    let visible = select_visible(pov, store.layout(), table, params.aspect());
    let resident = store.load_all(&visible)?;
    Ok(render(pov, store.layout(), &visible, &resident, tf, params, exec)?)
}

/// For each sample distance, renders the ground truth and every named store
/// and scores each store frame against it.
#[allow(clippy::too_many_arguments)]
pub fn compare_backends<E: Executor>(
    stores: &[(&str, &Store)],
    field: &dyn AnalyticField,
    pov: &PointOfView,
    table: &LodTable,
    tf: &TransferFunction,
    params: &RenderParams,
    sample_distances: &[f64],
    exec: &E,
) -> Result<Vec<QualityRow>> {
    let Some((_, first)) = stores.first() else {
        return Err(Error::Usage("no stores to compare".into()));
    };
    let bounds = first.manifest().physical_bounds;
    let mut rows = Vec::new();
    for &sd in sample_distances {
        let p = RenderParams { sample_distance: sd, ..*params };
        let truth = render_ground_truth(pov, field, &bounds, tf, &p, exec)?;
        for (name, store) in stores {
            let frame = render_store(store, pov, table, tf, &p, exec)?;
            rows.push(QualityRow {
                backend: name.to_string(),
                sample_distance: sd,
                bytes: store.manifest().total_bytes(),
                mse: mse(&frame, &truth)?,
                psnr: psnr(&frame, &truth)?,
                ssim: ssim(&frame, &truth)?,
            });
        }
    }
    Ok(rows)
}

/// Total bytes of a ghosted DS store with `micro` samples per block edge.
pub fn ds_store_bytes(levels: u32, coarsest: u32, micro: usize) -> u64 {
    (1..=levels)
        .map(|lod| {
            let b = (coarsest as u64) << (levels - lod);
            let per_axis = b * micro as u64 + 2 * (b - 1);
            b.pow(3) * ds::HEADER_BYTES as u64 + 4 * per_axis.pow(3)
        })
        .sum()
}

/// Down-samples `volume` so that a ghosted DS store over the same block
/// layout fits in `budget` bytes, writes it, and returns its manifest. The
/// block edge is the largest one that fits.
pub fn write_equal_storage_ds<E: Executor>(
    root: &Path,
    volume: &ScalarVolume,
    levels: u32,
    coarsest: u32,
    max_micro: usize,
    budget: u64,
    exec: &E,
) -> Result<LodManifest> {
    let micro = (2..=max_micro)
        .rev()
        .find(|&m| ds_store_bytes(levels, coarsest, m) <= budget)
        .ok_or_else(|| Error::Usage(format!("no DS layout fits in {budget} bytes")))?;
    let unit = ((coarsest as usize) << (levels - 1)) * (micro - 1);
    let small = ds::resample(volume, [unit + 1; 3])?;
    let layout = LayoutOptions { levels, micro_dims: [micro; 3], coarsest_blocks_per_axis: coarsest };
    write_ds_store(root, &small, layout, true, exec)
}
