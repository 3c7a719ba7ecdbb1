//! Test-time augmentation transforms: in-plane rotation, translation and
//! scaling of 2D planes.
//!
//! A transform maps a point p to `R(theta) * s * (p - c) + c + t`, where c is
//! the plane centre in pixel coordinates. Warping is implemented by inverse
//! mapping: each output pixel samples the input at the inverse-transformed
//! location, with zero padding outside the grid. The family is closed under
//! inversion, which is what lets predictions be mapped back onto the
//! original frame.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Plane;

/// Symmetric sampling ranges, all half-widths about the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtaRanges {
    /// Rotation is drawn from [-rotation_deg, +rotation_deg] degrees.
    pub rotation_deg: f64,
    /// Each translation component from [-translation_px, +translation_px].
    pub translation_px: f64,
    /// Scale from [1 - scale_delta, 1 + scale_delta]; must stay below 1.
    pub scale_delta: f64,
}

impl TtaRanges {
    pub fn new(rotation_deg: f64, translation_px: f64, scale_delta: f64) -> Result<Self> {
        let r = TtaRanges {
            rotation_deg,
            translation_px,
            scale_delta,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.rotation_deg) || !nonneg(self.translation_px) || !nonneg(self.scale_delta)
        {
            return Err(Error::InvalidInput(format!(
                "augmentation ranges must be non-negative, got {self:?}"
            )));
        }
        if self.scale_delta >= 1.0 {
            return Err(Error::InvalidInput(format!(
                "scale_delta must stay below 1 so scales remain positive, got {}",
                self.scale_delta
            )));
        }
        Ok(())
    }
}

/// One sampled affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtaTransform {
    pub rotation_deg: f64,
    pub translation_px: [f64; 2],
    pub scale: f64,
}

impl TtaTransform {
    pub fn identity() -> Self {
        TtaTransform {
            rotation_deg: 0.0,
            translation_px: [0.0, 0.0],
            scale: 1.0,
        }
    }

    /// The transform undoing this one. Exact up to floating-point rounding:
    /// rotation and scale invert directly, the translation is carried
    /// through the inverted rotation and scale.
    pub fn inverse(&self) -> TtaTransform {
        let theta = -self.rotation_deg.to_radians();
        let (sin, cos) = theta.sin_cos();
        let s = 1.0 / self.scale;
        let [tx, ty] = self.translation_px;
        TtaTransform {
            rotation_deg: -self.rotation_deg,
            translation_px: [-s * (cos * tx - sin * ty), -s * (sin * tx + cos * ty)],
            scale: s,
        }
    }

    /// Forward-maps a point about centre (cx, cy).
    pub fn apply_point(&self, x: f64, y: f64, cx: f64, cy: f64) -> (f64, f64) {
        let theta = self.rotation_deg.to_radians();
        let (sin, cos) = theta.sin_cos();
        let dx = (x - cx) * self.scale;
        let dy = (y - cy) * self.scale;
        (
            cos * dx - sin * dy + cx + self.translation_px[0],
            sin * dx + cos * dy + cy + self.translation_px[1],
        )
    }
}

/// Interpolation used when resampling a warped plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    /// Bilinear; exact for grid-aligned samples, so the identity transform
    /// reproduces the input bit for bit.
    Bilinear,
    /// Nearest neighbour, for binary masks.
    Nearest,
}

/// Draws one transform. The draw order (rotation, tx, ty, scale) is part of
/// the determinism contract for seeded streams.
pub fn sample_transform(ranges: &TtaRanges, rng: &mut impl Rng) -> TtaTransform {
    let r = ranges.rotation_deg;
    let t = ranges.translation_px;
    let d = ranges.scale_delta;
    TtaTransform {
        rotation_deg: rng.gen_range(-r..=r),
        translation_px: [rng.gen_range(-t..=t), rng.gen_range(-t..=t)],
        scale: rng.gen_range((1.0 - d)..=(1.0 + d)),
    }
}

/// Warps `plane` by `t` about the plane centre.
///
/// Implemented as inverse mapping: output pixel (x, y) samples the input at
/// `t.inverse()` applied to (x, y). Samples outside the grid read zero.
pub fn apply_transform(plane: &Plane, t: &TtaTransform, interp: Interp) -> Plane {
    let w = plane.width();
    let h = plane.height();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let inv = t.inverse();
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inv.apply_point(x as f64, y as f64, cx, cy);
            let v = match interp {
                Interp::Bilinear => sample_bilinear(plane, sx, sy),
                Interp::Nearest => sample_nearest(plane, sx, sy),
            };
            out.set(x, y, v);
        }
    }
    out
}

fn sample_bilinear(plane: &Plane, x: f64, y: f64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let v00 = f64::from(plane.get_or_zero(x0, y0));
    let v10 = f64::from(plane.get_or_zero(x0 + 1, y0));
    let v01 = f64::from(plane.get_or_zero(x0, y0 + 1));
    let v11 = f64::from(plane.get_or_zero(x0 + 1, y0 + 1));
    let top = v00 * (1.0 - fx) + v10 * fx;
    let bottom = v01 * (1.0 - fx) + v11 * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

fn sample_nearest(plane: &Plane, x: f64, y: f64) -> f32 {
    plane.get_or_zero(x.round() as i64, y.round() as i64)
}
