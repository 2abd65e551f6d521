//! Tensor-product B-spline micro-models: separable least-squares fitting,
//! random-access value/gradient queries and the on-disk byte layout.
//!
//! Byte layout (all little-endian):
//!
//! ```text
//! [u8 degree] [3 x (ncp + degree) f32 knots] [ncp^3 f32 control points, x-fastest]
//! ```
//!
//! Each axis stores knots `t_1 ..= t_{ncp+degree}` of its clamped vector; the
//! leading `t_0 = 0` is implicit. `ncp` and the extent travel in the manifest.

use alloc::format;
use alloc::vec::Vec;

use crate::bspline::{self, MAX_DEGREE};
use crate::geom::{Aabb, Vec3};
use crate::volume::ScalarVolume;
use crate::{Error, Result};

const MAX_ORDER: usize = MAX_DEGREE + 1;

/// Exact serialized size for a model with `ncp` control points per axis.
pub const fn serialized_size(ncp: usize, degree: usize) -> usize {
    1 + ((ncp + degree) * 3 + ncp * ncp * ncp) * 4
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroModel {
    degree: usize,
    ncp: usize,
    /// Full clamped vectors; every entry is exactly representable as `f32`.
    knots: [Vec<f64>; 3],
    control_points: Vec<f32>,
    extent: Aabb,
    lod: u32,
}

impl MicroModel {
    /// Least-squares fit of `block` with uniform clamped knots and uniform
    /// sample parameters, solved one axis at a time. The extent is taken from
    /// the block's bounds.
    pub fn fit(block: &ScalarVolume, ncp: usize, degree: usize) -> Result<MicroModel> {
        if degree > MAX_DEGREE {
            return Err(Error::domain("degree", format!("{degree} > {MAX_DEGREE}")));
        }
        let dims = block.dims();
        let min_edge = dims.iter().copied().min().unwrap_or(0);
        if ncp < degree + 1 || ncp > min_edge {
            return Err(Error::domain("ncp", format!("{ncp} not in [{}, {min_edge}]", degree + 1)));
        }
        let knots = quantized_knots(ncp, degree);
        let mut data: Vec<f64> = block.samples().iter().map(|&v| v as f64).collect();
        let mut cur = dims;
        for axis in 0..3 {
            let params = bspline::uniform_params(dims[axis]);
            let op = bspline::least_squares_operator(&knots, degree, ncp, &params)?;
            let (next, nd) = bspline::contract_axis(&data, cur, axis, &op, ncp);
            data = next;
            cur = nd;
        }
        let control_points: Vec<f32> = data.iter().map(|&v| v as f32).collect();
        if let Some(i) = control_points.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("control point {i} is not finite")));
        }
        Ok(MicroModel {
            degree,
            ncp,
            knots: [knots.clone(), knots.clone(), knots],
            control_points,
            extent: *block.bounds(),
            lod: 0,
        })
    }

    pub fn with_lod(mut self, lod: u32) -> Self {
        self.lod = lod;
        self
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn ncp(&self) -> usize {
        self.ncp
    }

    pub fn knots(&self, axis: usize) -> &[f64] {
        &self.knots[axis]
    }

    pub fn control_points(&self) -> &[f32] {
        &self.control_points
    }

    pub fn extent(&self) -> &Aabb {
        &self.extent
    }

    pub fn lod(&self) -> u32 {
        self.lod
    }

    pub fn serialized_size(&self) -> usize {
        serialized_size(self.ncp, self.degree)
    }

    /// Value and parametric derivatives `d/du` at `u`. Parameters outside
    /// `[0, 1]` are clamped.
    pub fn eval(&self, u: Vec3) -> (f64, Vec3) {
        let p = self.degree;
        let n = self.ncp;
        let mut b = [[0.0; MAX_ORDER]; 3];
        let mut d = [[0.0; MAX_ORDER]; 3];
        let mut off = [0usize; 3];
        for a in 0..3 {
            let ua = u[a].clamp(0.0, 1.0);
            let span = bspline::find_span(&self.knots[a], p, n, ua);
            bspline::basis_with_derivative(&self.knots[a], span, ua, p, &mut b[a], &mut d[a]);
            off[a] = span - p;
        }
        let cp = &self.control_points;
        let (mut v, mut gx, mut gy, mut gz) = (0.0, 0.0, 0.0, 0.0);
        for kk in 0..=p {
            for jj in 0..=p {
                let start = off[0] + n * ((off[1] + jj) + n * (off[2] + kk));
                let row = &cp[start..start + p + 1];
                let mut sx = 0.0;
                let mut sdx = 0.0;
                for i in 0..=p {
                    let c = row[i] as f64;
                    sx += b[0][i] * c;
                    sdx += d[0][i] * c;
                }
                let wyz = b[1][jj] * b[2][kk];
                v += wyz * sx;
                gx += wyz * sdx;
                gy += d[1][jj] * b[2][kk] * sx;
                gz += b[1][jj] * d[2][kk] * sx;
            }
        }
        (v, [gx, gy, gz])
    }

    pub fn query_value(&self, u: Vec3) -> f64 {
        self.eval(u).0
    }

    /// Like [`query_value`](Self::query_value), also reporting whether `u`
    /// had to be clamped into `[0, 1]^3`.
    pub fn query_value_flagged(&self, u: Vec3) -> (f64, bool) {
        let clamped = u.iter().any(|&x| !(0.0..=1.0).contains(&x));
        (self.eval(u).0, clamped)
    }

    /// Gradient in normalized volume coordinates (parametric derivative over
    /// extent length per axis).
    pub fn query_gradient(&self, u: Vec3) -> Vec3 {
        let g = self.eval(u).1;
        let s = self.extent.size();
        [g[0] / s[0], g[1] / s[1], g[2] / s[2]]
    }

    /// Decodes the model at the uniform parameters of a `dims` sample grid.
    pub fn decode_grid(&self, dims: [usize; 3]) -> Vec<f64> {
        let mut data: Vec<f64> = self.control_points.iter().map(|&v| v as f64).collect();
        let mut cur = [self.ncp; 3];
        for axis in 0..3 {
            let params = bspline::uniform_params(dims[axis]);
            let n = bspline::collocation_matrix(&self.knots[axis], self.degree, self.ncp, &params);
            let (next, nd) = bspline::contract_axis(&data, cur, axis, &n, dims[axis]);
            data = next;
            cur = nd;
        }
        data
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_size());
        out.push(self.degree as u8);
        for axis in 0..3 {
            for &k in &self.knots[axis][1..] {
                out.extend_from_slice(&(k as f32).to_le_bytes());
            }
        }
        for c in &self.control_points {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn deserialize(bytes: &[u8], ncp: usize, extent: Aabb, lod: u32) -> Result<MicroModel> {
        let Some(&degree) = bytes.first() else {
            return Err(Error::SizeMismatch { expected: serialized_size(ncp, 0), actual: 0 });
        };
        let degree = degree as usize;
        if degree >= ncp {
            return Err(Error::Format(format!("degree byte {degree} must be below ncp {ncp}")));
        }
        if degree > MAX_DEGREE {
            return Err(Error::Format(format!("degree {degree} exceeds supported maximum {MAX_DEGREE}")));
        }
        let expected = serialized_size(ncp, degree);
        if bytes.len() != expected {
            return Err(Error::SizeMismatch { expected, actual: bytes.len() });
        }
        if extent.is_degenerate() {
            return Err(Error::DegenerateExtent);
        }
        let mut floats = bytes[1..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let per_axis = ncp + degree;
        let mut knots: [Vec<f64>; 3] = Default::default();
        for axis_knots in knots.iter_mut() {
            axis_knots.reserve(per_axis + 1);
            axis_knots.push(0.0);
            axis_knots.extend(floats.by_ref().take(per_axis).map(|v| v as f64));
            bspline::validate_clamped(axis_knots, ncp, degree)?;
        }
        let control_points: Vec<f32> = floats.collect();
        if let Some(i) = control_points.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(MicroModel { degree, ncp, knots, control_points, extent, lod })
    }
}

fn quantized_knots(ncp: usize, degree: usize) -> Vec<f64> {
    bspline::clamped_uniform_knots(ncp, degree).into_iter().map(|k| k as f32 as f64).collect()
}

/// Root-mean-square difference between `model` decoded at the block's sample
/// parameters and the block samples.
pub fn error_rmse(block: &ScalarVolume, model: &MicroModel) -> f64 {
    let decoded = model.decode_grid(block.dims());
    let sum: f64 = decoded
        .iter()
        .zip(block.samples())
        .map(|(d, &s)| {
            let e = d - s as f64;
            e * e
        })
        .sum();
    libm::sqrt(sum / block.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Aabb;
    use proptest::prelude::*;

    fn block_from(dims: [usize; 3], f: impl Fn(f64, f64, f64) -> f64) -> ScalarVolume {
        let bounds = Aabb::cube(0.0, 1.0);
        ScalarVolume::from_fn(dims, bounds, |i, j, k| {
            let u = |i: usize, a: usize| i as f64 / (dims[a] - 1) as f64;
            f(u(i, 0), u(j, 1), u(k, 2)) as f32
        })
        .unwrap()
    }

    #[test]
    fn eq2_sizes() {
        assert_eq!(serialized_size(3, 2), 169);
        assert_eq!(serialized_size(4, 2), 329);
        let m = MicroModel::fit(&block_from([5, 5, 5], |x, _, _| x), 3, 2).unwrap();
        assert_eq!(m.serialize().len(), 169);
    }

    #[test]
    fn constant_block_gives_constant_control_points() {
        let b = block_from([9, 9, 9], |_, _, _| 0.75);
        for (ncp, p) in [(3, 2), (9, 2), (5, 3), (2, 1)] {
            let m = MicroModel::fit(&b, ncp, p).unwrap();
            assert!(m.control_points().iter().all(|&c| (c - 0.75).abs() < 1e-6));
            assert!(error_rmse(&b, &m) < 1e-7);
            assert!((m.query_value([0.3, 0.9, 0.1]) - 0.75).abs() < 1e-6);
            assert!(m.query_gradient([0.3, 0.9, 0.1]).iter().all(|g| g.abs() < 1e-5));
        }
    }

    #[test]
    fn linear_reproduction() {
        let b = block_from([9, 9, 9], |x, y, z| x + 2.0 * y + 3.0 * z);
        for p in 1..=3 {
            let m = MicroModel::fit(&b, p + 2, p).unwrap();
            assert!(error_rmse(&b, &m) < 1e-5, "degree {p}");
            assert!((m.query_value([0.5; 3]) - 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn ramp_gradient_over_unit_extent() {
        let b = block_from([6, 6, 6], |x, _, _| x);
        let m = MicroModel::fit(&b, 4, 2).unwrap();
        let g = m.query_gradient([0.37, 0.5, 0.81]);
        assert!((g[0] - 1.0).abs() < 1e-5 && g[1].abs() < 1e-5 && g[2].abs() < 1e-5, "{g:?}");
    }

    #[test]
    fn clamped_corner_returns_corner_control_point() {
        let b = block_from([7, 7, 7], |x, y, z| (3.0 * x).sin() + y * y - z);
        let m = MicroModel::fit(&b, 5, 2).unwrap();
        assert_eq!(m.query_value([0.0; 3]), m.control_points()[0] as f64);
        let last = *m.control_points().last().unwrap() as f64;
        assert!((m.query_value([1.0; 3]) - last).abs() < 1e-12);
    }

    #[test]
    fn out_of_domain_queries_clamp() {
        let b = block_from([7, 7, 7], |x, y, _| x * y);
        let m = MicroModel::fit(&b, 5, 2).unwrap();
        let (v, flagged) = m.query_value_flagged([1.0 + 1e-9, 0.5, -1e-12]);
        assert!(flagged);
        assert_eq!(v, m.query_value([1.0, 0.5, 0.0]));
        assert!(!m.query_value_flagged([1.0, 0.5, 0.0]).1);
    }

    #[test]
    fn fit_rejects_bad_ncp() {
        let b = block_from([5, 5, 5], |x, _, _| x);
        assert!(matches!(MicroModel::fit(&b, 2, 2), Err(Error::Domain { .. })));
        assert!(matches!(MicroModel::fit(&b, 6, 2), Err(Error::Domain { .. })));
        assert!(matches!(MicroModel::fit(&b, 5, 9), Err(Error::Domain { .. })));
    }

    #[test]
    fn deserialize_errors() {
        let b = block_from([5, 5, 5], |x, _, _| x);
        let m = MicroModel::fit(&b, 4, 2).unwrap();
        let bytes = m.serialize();
        let ext = *m.extent();
        assert!(matches!(
            MicroModel::deserialize(&bytes[..bytes.len() - 1], 4, ext, 0),
            Err(Error::SizeMismatch { .. })
        ));
        assert!(matches!(MicroModel::deserialize(&bytes, 5, ext, 0), Err(Error::SizeMismatch { .. })));
        assert!(matches!(MicroModel::deserialize(&bytes, 2, ext, 0), Err(Error::Format(_))));
        assert!(matches!(MicroModel::deserialize(&[], 4, ext, 0), Err(Error::SizeMismatch { .. })));
        let mut bad = bytes.clone();
        bad[1..5].copy_from_slice(&0.5f32.to_le_bytes()); // t_1 must be 0 for degree 2
        assert!(matches!(MicroModel::deserialize(&bad, 4, ext, 0), Err(Error::Format(_))));
    }

    #[test]
    fn exhaustive_small_size_sweep() {
        for p in 1..=3usize {
            for ncp in p + 1..=16 {
                let b = block_from([ncp; 3], |x, y, z| x * y - z);
                let m = MicroModel::fit(&b, ncp, p).unwrap();
                let bytes = m.serialize();
                assert_eq!(bytes.len(), serialized_size(ncp, p));
                assert_eq!(bytes.len(), 1 + ((ncp + p) * 3 + ncp.pow(3)) * 4);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn serialize_round_trip(seed in any::<u64>(), ncp in 3usize..9, p in 1usize..=2) {
            let s = (seed % 1000) as f64 / 100.0;
            let b = block_from([9, 9, 9], |x, y, z| (s * x).sin() * (y - z * z));
            let m = MicroModel::fit(&b, ncp, p).unwrap().with_lod(3);
            let bytes = m.serialize();
            let back = MicroModel::deserialize(&bytes, ncp, *m.extent(), 3).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.serialize(), bytes);
        }

        #[test]
        fn gradient_matches_finite_differences(u in 0.05f64..0.95, v in 0.05f64..0.95, w in 0.05f64..0.95) {
            let b = block_from([11, 11, 11], |x, y, z| (4.0 * x).sin() * (3.0 * y).cos() + z * z * x);
            let m = MicroModel::fit(&b, 7, 3).unwrap();
            let g = m.query_gradient([u, v, w]);
            let h = 1e-5;
            let scale = g.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-3);
            for a in 0..3 {
                let mut hi = [u, v, w];
                let mut lo = [u, v, w];
                hi[a] += h;
                lo[a] -= h;
                let fd = (m.query_value(hi) - m.query_value(lo)) / (2.0 * h);
                prop_assert!((fd - g[a]).abs() <= 1e-3 * scale, "axis {} fd {} g {}", a, fd, g[a]);
            }
        }
    }
}
