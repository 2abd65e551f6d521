//! Front-to-back ray casting over a multi-resolution block set.
//!
//! Rays start at the domain entry (or the near plane when the eye is inside),
//! step uniformly, look up the selected block holding each sample, shade it
//! with a Blinn-Phong headlight and composite until the accumulated opacity
//! passes `o_max`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ds::DsBlock;
use crate::exec::Executor;
use crate::geom::{self, Aabb, Vec3};
use crate::lod::{BlockAddress, HierarchyLayout};
use crate::model::MicroModel;
use crate::tf::TransferFunction;
use crate::visibility::{PointOfView, NEAR};
use crate::volume::AnalyticField;
use crate::{Error, Result};

pub const AMBIENT: f64 = 0.1;
pub const DIFFUSE: f64 = 0.7;
pub const SPECULAR: f64 = 0.2;
pub const SHININESS: i32 = 32;
/// Gradients shorter than this count as flat and get no diffuse or specular
/// term (fit noise on constant regions would otherwise pick a random normal).
pub const FLAT_GRADIENT: f64 = 1e-6;

/// Random-access value and gradient of one block. `u` is the block-local
/// parameter in `[0,1]^3`; the gradient is in normalized volume coordinates.
pub trait BlockSampler: Sync {
    fn sample(&self, u: Vec3) -> (f64, Vec3);
}

impl BlockSampler for MicroModel {
    fn sample(&self, u: Vec3) -> (f64, Vec3) {
        let (v, g) = self.eval(u);
        let s = self.extent().size();
        (v, [g[0] / s[0], g[1] / s[1], g[2] / s[2]])
    }
}

impl BlockSampler for DsBlock {
    fn sample(&self, u: Vec3) -> (f64, Vec3) {
        (self.query_value(u), self.query_gradient(u))
    }
}

/// Where the renderer finds resident blocks.
pub trait BlockSource: Sync {
    fn block(&self, addr: &BlockAddress) -> Option<&dyn BlockSampler>;
}

impl<S: BlockSampler + Send> BlockSource for BTreeMap<BlockAddress, S> {
    fn block(&self, addr: &BlockAddress) -> Option<&dyn BlockSampler> {
        self.get(addr).map(|s| s as &dyn BlockSampler)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderParams {
    pub width: u32,
    pub height: u32,
    /// Step length in normalized units.
    pub sample_distance: f64,
    /// Step length the TF opacities refer to; `None` means `sample_distance`.
    pub reference_step: Option<f64>,
    /// Rays stop once accumulated opacity exceeds this.
    pub o_max: f64,
    /// Direction light travels in. `None` is a headlight along each ray.
    pub light: Option<Vec3>,
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams { width: 512, height: 512, sample_distance: 1e-3, reference_step: None, o_max: 0.99, light: None }
    }
}

impl RenderParams {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::domain("frame size", alloc::format!("{}x{}", self.width, self.height)));
        }
        if !(self.sample_distance > 0.0 && self.sample_distance.is_finite()) {
            return Err(Error::domain("sample distance", alloc::format!("{}", self.sample_distance)));
        }
        if let Some(r) = self.reference_step {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::domain("reference step", alloc::format!("{r}")));
            }
        }
        if !(0.0..=1.0).contains(&self.o_max) {
            return Err(Error::domain("o_max", alloc::format!("{} outside [0, 1]", self.o_max)));
        }
        if let Some(l) = self.light {
            if geom::normalize(l).is_none() {
                return Err(Error::domain("light direction", "zero vector"));
            }
        }
        Ok(())
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }
}

/// 8-bit RGBA, row-major from the top-left pixel. RGB is composited over
/// black, alpha is the accumulated opacity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub rgba: Vec<u8>,
}

impl Frame {
    pub fn new(width: u32, height: u32, rgba: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize * 4;
        if rgba.len() != expected {
            return Err(Error::SizeMismatch { expected, actual: rgba.len() });
        }
        Ok(Frame { width, height, rgba })
    }

    pub fn transparent(width: u32, height: u32) -> Self {
        Frame { width, height, rgba: vec![0; width as usize * height as usize * 4] }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        let i = 4 * (y as usize * self.width as usize + x as usize);
        [self.rgba[i], self.rgba[i + 1], self.rgba[i + 2], self.rgba[i + 3]]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderStats {
    /// Samples composited over all rays.
    pub samples: u64,
    /// Rays stopped by the opacity threshold.
    pub terminated: u64,
}

/// Maps a point in `[-1,1]^3` to the visible block holding it through a grid
/// of finest-level cells.
struct Lookup<'a> {
    n: usize,
    cells: Vec<u32>,
    blocks: Vec<(&'a dyn BlockSampler, Aabb)>,
}

impl<'a> Lookup<'a> {
    fn new(layout: &HierarchyLayout, visible: &[BlockAddress], source: &'a dyn BlockSource) -> Result<Self> {
        let n = layout.finest_blocks_per_axis() as usize;
        let mut cells = vec![u32::MAX; n * n * n];
        let mut blocks = Vec::with_capacity(visible.len());
        for (idx, addr) in visible.iter().enumerate() {
            if !layout.contains(addr) {
                return Err(Error::Partition(alloc::format!("block {addr} is not part of the hierarchy")));
            }
            let sampler = source.block(addr).ok_or(Error::MissingBlock { addr: *addr })?;
            blocks.push((sampler, layout.extent(addr)));
            let w = (n / layout.blocks_per_axis(addr.lod) as usize).max(1);
            let o = addr.ijk.map(|c| c as usize * w);
            for k in o[2]..o[2] + w {
                for j in o[1]..o[1] + w {
                    for i in o[0]..o[0] + w {
                        cells[i + n * (j + n * k)] = idx as u32;
                    }
                }
            }
        }
        Ok(Lookup { n, cells, blocks })
    }

    fn sample(&self, p: Vec3) -> Option<(f64, Vec3)> {
        let c = p.map(|x| ((((x + 1.0) * 0.5) * self.n as f64) as isize).clamp(0, self.n as isize - 1) as usize);
        let idx = self.cells[c[0] + self.n * (c[1] + self.n * c[2])];
        let (block, extent) = self.blocks.get(idx as usize)?;
        Some(block.sample(extent.to_local(p)))
    }
}

/// Shaded color at a sample: TF color under a two-sided Blinn-Phong light.
pub fn shade(base: [f64; 3], gradient: Vec3, to_light: Vec3, to_eye: Vec3) -> [f64; 3] {
    let mut diffuse = 0.0;
    let mut specular = 0.0;
    if let Some(n) = geom::normalize(gradient).filter(|_| geom::norm(gradient) >= FLAT_GRADIENT) {
        diffuse = geom::dot(n, to_light).abs();
        if let Some(h) = geom::normalize(geom::add(to_light, to_eye)) {
            specular = libm::pow(geom::dot(n, h).abs(), SHININESS as f64);
        }
    }
    base.map(|c| (c * (AMBIENT + DIFFUSE * diffuse) + SPECULAR * specular).clamp(0.0, 1.0))
}

fn pixel_ray(basis: &crate::visibility::CameraBasis, params: &RenderParams, px: u32, py: u32) -> Vec3 {
    let ty = basis.tan_half_y;
    let tx = ty * params.aspect();
    let sx = ((px as f64 + 0.5) / params.width as f64 * 2.0 - 1.0) * tx;
    let sy = (1.0 - (py as f64 + 0.5) / params.height as f64 * 2.0) * ty;
    let d = geom::add(basis.forward, geom::add(geom::scale(basis.right, sx), geom::scale(basis.up, sy)));
    geom::normalize(d).expect("forward component keeps the ray non-zero")
}

/// Marches one ray; `field(p)` returns value and normalized-space gradient,
/// or `None` where no data is resident.
fn march(
    origin: Vec3,
    dir: Vec3,
    tf: &TransferFunction,
    params: &RenderParams,
    field: &dyn Fn(Vec3) -> Option<(f64, Vec3)>,
    stats: &mut RenderStats,
) -> [f64; 4] {
    let Some((t0, t1)) = Aabb::unit_domain().ray_interval(origin, dir) else {
        return [0.0; 4];
    };
    let start = t0.max(NEAR);
    if start > t1 {
        return [0.0; 4];
    }
    let ds = params.sample_distance;
    let exponent = ds / params.reference_step.unwrap_or(ds);
    let to_eye = geom::scale(dir, -1.0);
    let to_light = params.light.and_then(geom::normalize).map_or(to_eye, |l| geom::scale(l, -1.0));
    let mut c = [0.0; 3];
    let mut a = 0.0;
    let steps = ((t1 - start) / ds) as u64;
    for i in 0..=steps {
        let t = start + i as f64 * ds;
        let p = geom::add(origin, geom::scale(dir, t));
        let Some((v, g)) = field(p) else { continue };
        stats.samples += 1;
        let (rgb, alpha) = tf.lookup(v);
        if alpha <= 0.0 {
            continue;
        }
        let alpha_s = if exponent == 1.0 { alpha } else { 1.0 - libm::pow(1.0 - alpha, exponent) };
        let s = shade(rgb, g, to_light, to_eye);
        let w = (1.0 - a) * alpha_s;
        for k in 0..3 {
            c[k] += w * s[k];
        }
        a += w;
        if a > params.o_max {
            stats.terminated += 1;
            break;
        }
    }
    [c[0], c[1], c[2], a]
}

fn to_u8(x: f64) -> u8 {
    libm::round(x.clamp(0.0, 1.0) * 255.0) as u8
}

fn render_rows<E: Executor>(
    pov: &PointOfView,
    tf: &TransferFunction,
    params: &RenderParams,
    exec: &E,
    field: &(dyn Fn(Vec3) -> Option<(f64, Vec3)> + Sync),
) -> Result<(Frame, RenderStats)> {
    params.validate()?;
    pov.validate()?;
    if tf.is_transparent() {
        return Ok((Frame::transparent(params.width, params.height), RenderStats::default()));
    }
    let basis = pov.basis();
    let rows = exec.map((0..params.height).collect(), |py| {
        let mut stats = RenderStats::default();
        let mut row = Vec::with_capacity(params.width as usize * 4);
        for px in 0..params.width {
            let d = pixel_ray(&basis, params, px, py);
            let rgba = march(pov.position, d, tf, params, field, &mut stats);
            row.extend(rgba.map(to_u8));
        }
        (row, stats)
    });
    let mut rgba = Vec::with_capacity(params.width as usize * params.height as usize * 4);
    let mut stats = RenderStats::default();
    for (row, s) in rows {
        rgba.extend_from_slice(&row);
        stats.samples += s.samples;
        stats.terminated += s.terminated;
    }
    Ok((Frame::new(params.width, params.height, rgba)?, stats))
}

/// Renders the blocks in `visible`, all of which must be resident in
/// `source`; a missing one is reported as [`Error::MissingBlock`].
pub fn render<E: Executor>(
    pov: &PointOfView,
    layout: &HierarchyLayout,
    visible: &[BlockAddress],
    source: &dyn BlockSource,
    tf: &TransferFunction,
    params: &RenderParams,
    exec: &E,
) -> Result<Frame> {
    render_with_stats(pov, layout, visible, source, tf, params, exec).map(|(f, _)| f)
}

pub fn render_with_stats<E: Executor>(
    pov: &PointOfView,
    layout: &HierarchyLayout,
    visible: &[BlockAddress],
    source: &dyn BlockSource,
    tf: &TransferFunction,
    params: &RenderParams,
    exec: &E,
) -> Result<(Frame, RenderStats)> {
    let lookup = Lookup::new(layout, visible, source)?;
    render_rows(pov, tf, params, exec, &|p| lookup.sample(p))
}

/// Same ray march with values and gradients taken from `field`, evaluated at
/// the physical position that normalized point `p` maps to in `bounds`.
pub fn render_ground_truth<E: Executor>(
    pov: &PointOfView,
    field: &dyn AnalyticField,
    bounds: &Aabb,
    tf: &TransferFunction,
    params: &RenderParams,
    exec: &E,
) -> Result<Frame> {
    if bounds.is_degenerate() {
        return Err(Error::DegenerateExtent);
    }
    let half = geom::scale(bounds.size(), 0.5);
    let sample = |p: Vec3| {
        let x = bounds.from_local(p.map(|c| (c + 1.0) * 0.5));
        let g = field.gradient(x);
        Some((field.value(x), [g[0] * half[0], g[1] * half[1], g[2] * half[2]]))
    };
    render_rows(pov, tf, params, exec, &sample).map(|(f, _)| f)
}
