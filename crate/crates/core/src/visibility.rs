//! Points of view, distance-based LOD choice and visible-set selection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geom::{self, Aabb, Vec3};
use crate::lod::{BlockAddress, HierarchyLayout};
use crate::{Error, Result};

/// Near clipping distance of the view frustum.
pub const NEAR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointOfView {
    /// Camera position in normalized `[-1,1]^3` coordinates (may be outside).
    pub position: Vec3,
    /// Unit view direction.
    pub direction: Vec3,
    pub up: Vec3,
    /// Vertical field of view in degrees.
    #[serde(default = "default_fov")]
    pub fov_y: f64,
}

fn default_fov() -> f64 {
    45.0
}

/// Orthonormal camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraBasis {
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub tan_half_y: f64,
}

impl PointOfView {
    /// Validated constructor; `direction` must already be unit length.
    pub fn new(position: Vec3, direction: Vec3, up: Vec3, fov_y: f64) -> Result<Self> {
        let pov = PointOfView { position, direction, up, fov_y };
        pov.validate()?;
        Ok(pov)
    }

    /// Camera at `eye` looking at `target`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_y: f64) -> Result<Self> {
        let dir = geom::normalize(geom::sub(target, eye))
            .ok_or_else(|| Error::domain("point of view", "eye and target coincide"))?;
        let up = geom::normalize(up).ok_or_else(|| Error::domain("point of view", "zero up vector"))?;
        Self::new(eye, dir, up, fov_y)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        if !(finite(&self.position) && finite(&self.direction) && finite(&self.up)) {
            return Err(Error::domain("point of view", "non-finite component"));
        }
        let len = geom::norm(self.direction);
        if (len - 1.0).abs() > 1e-6 {
            return Err(Error::domain("point of view", format!("|direction| = {len}, expected 1")));
        }
        let up = geom::normalize(self.up).ok_or_else(|| Error::domain("point of view", "zero up vector"))?;
        if geom::norm(geom::cross(self.direction, up)) < 1e-6 {
            return Err(Error::domain("point of view", "direction is parallel to up"));
        }
        if !(self.fov_y > 0.0 && self.fov_y < 180.0) {
            return Err(Error::domain("point of view", format!("fov_y {} outside (0, 180)", self.fov_y)));
        }
        Ok(())
    }

    pub fn basis(&self) -> CameraBasis {
        let forward = self.direction;
        let right = geom::normalize(geom::cross(forward, self.up)).unwrap_or([1.0, 0.0, 0.0]);
        let up = geom::cross(right, forward);
        CameraBasis { forward, right, up, tan_half_y: libm::tan(self.fov_y * core::f64::consts::PI / 360.0) }
    }
}

/// Distance thresholds separating LODs; `[0, t0) -> 1`, `[t0, t1) -> 2`, ...
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LodTable {
    pub thresholds: Vec<f64>,
}

impl Default for LodTable {
    fn default() -> Self {
        LodTable { thresholds: vec![0.8, 1.6, 2.4] }
    }
}

impl LodTable {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        let mut prev = 0.0;
        for &t in &thresholds {
            if !(t.is_finite() && t > prev) {
                return Err(Error::domain(
                    "LOD table",
                    format!("thresholds {thresholds:?} must be positive and increasing"),
                ));
            }
            prev = t;
        }
        Ok(LodTable { thresholds })
    }

    /// Level wanted at distance `d`, before clamping to a hierarchy.
    pub fn lod_for_distance(&self, d: f64) -> u32 {
        1 + self.thresholds.iter().take_while(|&&t| t <= d).count() as u32
    }

    /// Level wanted at `d`, clamped to `1..=levels`.
    pub fn lod_for_distance_in(&self, d: f64, levels: u32) -> u32 {
        self.lod_for_distance(d).min(levels.max(1))
    }
}

/// Side planes plus near plane, each as `(normal, offset)` with inside
/// meaning `dot(n, p) <= offset`.
#[derive(Debug, Clone, Copy)]
pub struct Frustum {
    planes: [(Vec3, f64); 5],
}

impl Frustum {
    pub fn new(pov: &PointOfView, aspect: f64) -> Self {
        let b = pov.basis();
        let ty = b.tan_half_y;
        let tx = ty * aspect;
        let f = b.forward;
        let side = |axis: Vec3, t: f64, sign: f64| {
            // sign * dot(q, axis) - t * dot(q, f) <= 0 with q = p - pos.
            let n = geom::sub(geom::scale(axis, sign), geom::scale(f, t));
            (n, geom::dot(n, pov.position))
        };
        let near_n = geom::scale(f, -1.0);
        Frustum {
            planes: [
                side(b.right, tx, 1.0),
                side(b.right, tx, -1.0),
                side(b.up, ty, 1.0),
                side(b.up, ty, -1.0),
                (near_n, geom::dot(near_n, pov.position) - NEAR),
            ],
        }
    }

    /// Conservative: false only if the box lies fully outside one plane.
    pub fn may_intersect(&self, b: &Aabb) -> bool {
        let corners = b.corners();
        self.planes.iter().all(|(n, d)| corners.iter().any(|c| geom::dot(*n, *c) <= *d))
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.planes.iter().all(|(n, d)| geom::dot(*n, p) <= *d)
    }
}

/// Blocks to render for `pov`, sorted by address. Traversal starts at the
/// coarsest level and refines while the table wants a finer level than the
/// current one; blocks outside the view frustum are dropped.
pub fn select_visible(pov: &PointOfView, layout: &HierarchyLayout, table: &LodTable, aspect: f64) -> Vec<BlockAddress> {
    let frustum = Frustum::new(pov, aspect);
    let mut out = Vec::new();
    let mut stack = layout.addresses(layout.levels);
    while let Some(addr) = stack.pop() {
        let extent = layout.extent(&addr);
        if !frustum.may_intersect(&extent) {
            continue;
        }
        let d = geom::norm(geom::sub(extent.centroid(), pov.position));
        let wanted = table.lod_for_distance_in(d, layout.levels);
        match layout.children(&addr) {
            Some(kids) if wanted < addr.lod => stack.extend(kids),
            _ => out.push(addr),
        }
    }
    out.sort();
    out
}
