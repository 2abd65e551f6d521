//! Piecewise-linear color and opacity transfer functions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorPoint {
    pub x: f64,
    pub rgb: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpacityPoint {
    pub x: f64,
    pub alpha: f64,
}

/// Control-point scalars are in data units; lookups clamp to `domain`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTf", into = "RawTf")]
pub struct TransferFunction {
    domain: [f64; 2],
    color: Vec<ColorPoint>,
    opacity: Vec<OpacityPoint>,
}

#[derive(Serialize, Deserialize)]
struct RawTf {
    domain: [f64; 2],
    color: Vec<ColorPoint>,
    opacity: Vec<OpacityPoint>,
}

impl TryFrom<RawTf> for TransferFunction {
    type Error = Error;
    fn try_from(r: RawTf) -> Result<Self> {
        TransferFunction::new(r.domain, r.color, r.opacity)
    }
}

impl From<TransferFunction> for RawTf {
    fn from(t: TransferFunction) -> Self {
        RawTf { domain: t.domain, color: t.color, opacity: t.opacity }
    }
}

fn check_increasing(what: &'static str, xs: impl Iterator<Item = f64>) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    let mut n = 0;
    for x in xs {
        if !x.is_finite() || x <= prev {
            return Err(Error::domain(what, format!("control point {n} at {x} is not strictly increasing")));
        }
        prev = x;
        n += 1;
    }
    if n == 0 {
        return Err(Error::domain(what, "no control points"));
    }
    Ok(())
}

fn unit(what: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::domain(what, format!("{v} outside [0, 1]")))
    }
}

impl TransferFunction {
    pub fn new(domain: [f64; 2], color: Vec<ColorPoint>, opacity: Vec<OpacityPoint>) -> Result<Self> {
        if !(domain[0].is_finite() && domain[1].is_finite() && domain[0] < domain[1]) {
            return Err(Error::domain("transfer function domain", format!("{domain:?}")));
        }
        check_increasing("color transfer function", color.iter().map(|p| p.x))?;
        check_increasing("opacity transfer function", opacity.iter().map(|p| p.x))?;
        for p in &color {
            for &c in &p.rgb {
                unit("color", c)?;
            }
        }
        for p in &opacity {
            unit("opacity", p.alpha)?;
        }
        Ok(TransferFunction { domain, color, opacity })
    }

    pub fn domain(&self) -> [f64; 2] {
        self.domain
    }

    pub fn color_points(&self) -> &[ColorPoint] {
        &self.color
    }

    pub fn opacity_points(&self) -> &[OpacityPoint] {
        &self.opacity
    }

    /// `(rgb, alpha)` at `v`.
    pub fn lookup(&self, v: f64) -> ([f64; 3], f64) {
        let v = if v.is_nan() { self.domain[0] } else { v.clamp(self.domain[0], self.domain[1]) };
        let rgb =
            interp(&self.color, v, |p| p.x, |a, b, t| core::array::from_fn(|i| a.rgb[i] + (b.rgb[i] - a.rgb[i]) * t));
        let alpha = interp(&self.opacity, v, |p| p.x, |a, b, t| a.alpha + (b.alpha - a.alpha) * t);
        (rgb, alpha)
    }

    /// Opacity is zero everywhere.
    pub fn is_transparent(&self) -> bool {
        self.opacity.iter().all(|p| p.alpha == 0.0)
    }

    /// Linear grey ramp with linearly rising opacity `0 .. max_alpha`.
    pub fn grey_ramp(domain: [f64; 2], max_alpha: f64) -> Result<Self> {
        Self::new(
            domain,
            vec![ColorPoint { x: domain[0], rgb: [0.0; 3] }, ColorPoint { x: domain[1], rgb: [1.0; 3] }],
            vec![OpacityPoint { x: domain[0], alpha: 0.0 }, OpacityPoint { x: domain[1], alpha: max_alpha }],
        )
    }

    /// A translucent shell around `iso`: opacity is a tent of half-width
    /// `width` peaking at `alpha`, colored `rgb`.
    pub fn iso_shell(domain: [f64; 2], iso: f64, width: f64, alpha: f64, rgb: [f64; 3]) -> Result<Self> {
        let lo = (iso - width).max(domain[0]);
        let hi = (iso + width).min(domain[1]);
        let mut opacity = Vec::new();
        if lo > domain[0] {
            opacity.push(OpacityPoint { x: domain[0], alpha: 0.0 });
        }
        opacity.push(OpacityPoint { x: lo, alpha: if lo < iso { 0.0 } else { alpha } });
        if lo < iso && iso < hi {
            opacity.push(OpacityPoint { x: iso, alpha });
        }
        opacity.push(OpacityPoint { x: hi, alpha: if hi > iso { 0.0 } else { alpha } });
        if hi < domain[1] {
            opacity.push(OpacityPoint { x: domain[1], alpha: 0.0 });
        }
        Self::new(domain, vec![ColorPoint { x: domain[0], rgb }], opacity)
    }

    /// Two translucent shells in blue and orange, for the Marschner-Lobb
    /// field on its `[0, 1]` range.
    pub fn ml_shells() -> Self {
        let c = |x, rgb| ColorPoint { x, rgb };
        let o = |x, alpha| OpacityPoint { x, alpha };
        Self::new(
            [0.0, 1.0],
            vec![c(0.0, [0.1, 0.2, 0.9]), c(0.35, [0.2, 0.5, 1.0]), c(0.65, [1.0, 0.6, 0.1]), c(1.0, [0.9, 0.2, 0.1])],
            vec![
                o(0.0, 0.0),
                o(0.25, 0.0),
                o(0.3, 0.08),
                o(0.35, 0.0),
                o(0.6, 0.0),
                o(0.65, 0.12),
                o(0.7, 0.0),
                o(1.0, 0.0),
            ],
        )
        .expect("preset is valid")
    }
}

fn interp<P, R>(pts: &[P], v: f64, x: impl Fn(&P) -> f64, mix: impl Fn(&P, &P, f64) -> R) -> R {
    let first = &pts[0];
    if v <= x(first) {
        return mix(first, first, 0.0);
    }
    let i = pts.partition_point(|p| x(p) <= v);
    if i == pts.len() {
        let last = &pts[pts.len() - 1];
        return mix(last, last, 0.0);
    }
    let (a, b) = (&pts[i - 1], &pts[i]);
    mix(a, b, (v - x(a)) / (x(b) - x(a)))
}
