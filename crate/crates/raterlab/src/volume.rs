//! Volumetric grids: binary masks and probability maps.
//!
//! A [`Volume`] is a dense scalar grid in x-fastest order (x varies quickest,
//! then y, then z), matching the on-disk layout of [`crate::rvol`]. Volumes
//! are immutable after construction; every operation returns a new volume.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid shape and physical voxel size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Voxel counts along x, y, z. Each must be at least 1.
    pub dims: [usize; 3],
    /// Voxel edge lengths in millimetres along x, y, z. Each must be positive.
    pub spacing_mm: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self> {
        let g = Geometry { dims, spacing_mm };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput(format!(
                "geometry dims must all be >= 1, got {:?}",
                self.dims
            )));
        }
        if self.spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "geometry spacing must be positive and finite, got {:?}",
                self.spacing_mm
            )));
        }
        Ok(())
    }

    /// Total number of voxels.
    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Linear index of voxel (x, y, z) in x-fastest order.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }
}

/// What the stored scalars mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolumeKind {
    /// Values are exactly 0.0 or 1.0.
    BinaryMask,
    /// Values lie in [0, 1].
    ProbabilityMap,
}

/// A dense 3D scalar grid with geometry attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    kind: VolumeKind,
    values: Vec<f32>,
}

impl Volume {
    /// Builds a volume, validating length and the value range for `kind`.
    pub fn new(geometry: Geometry, kind: VolumeKind, values: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.voxel_count() {
            return Err(Error::InvalidInput(format!(
                "value buffer holds {} voxels, geometry wants {}",
                values.len(),
                geometry.voxel_count()
            )));
        }
        match kind {
            VolumeKind::BinaryMask => {
                if let Some(v) = values.iter().find(|&&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "binary mask contains non-binary value {v}"
                    )));
                }
            }
            VolumeKind::ProbabilityMap => {
                if let Some(v) = values
                    .iter()
                    .find(|&&v| !(v.is_finite() && (0.0..=1.0).contains(&v)))
                {
                    return Err(Error::InvalidInput(format!(
                        "probability map contains out-of-range value {v}"
                    )));
                }
            }
        }
        Ok(Volume {
            geometry,
            kind,
            values,
        })
    }

    /// Builds a binary mask from 0/1 bytes.
    pub fn mask_from_bytes(geometry: Geometry, bytes: &[u8]) -> Result<Self> {
        if let Some(b) = bytes.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidInput(format!(
                "binary mask contains non-binary byte {b}"
            )));
        }
        let values = bytes.iter().map(|&b| f32::from(b)).collect();
        Volume::new(geometry, VolumeKind::BinaryMask, values)
    }

    /// All-zero volume of the given kind.
    pub fn zeros(geometry: Geometry, kind: VolumeKind) -> Result<Self> {
        let n = geometry.voxel_count();
        Volume::new(geometry, kind, vec![0.0; n])
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.geometry.index(x, y, z)]
    }

    /// Number of voxels equal to 1.
    pub fn positive_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }

    /// True when no voxel is positive.
    pub fn is_empty_mask(&self) -> bool {
        self.positive_count() == 0
    }

    /// Errors unless `self` and `other` share dims and spacing.
    pub fn check_same_geometry(&self, other: &Volume) -> Result<()> {
        if self.geometry != other.geometry {
            return Err(Error::GeometryMismatch(format!(
                "{:?} vs {:?}",
                self.geometry, other.geometry
            )));
        }
        Ok(())
    }

    /// Errors unless the volume is a binary mask.
    pub fn check_mask(&self) -> Result<()> {
        if self.kind != VolumeKind::BinaryMask {
            return Err(Error::InvalidInput(
                "operation requires a binary mask volume".into(),
            ));
        }
        Ok(())
    }

    /// Nearest-neighbour resampling onto `target_spacing_mm`.
    ///
    /// Output dims per axis are `round(dim * spacing / target)` with a floor
    /// of 1. Each output voxel copies the input voxel whose centre is nearest
    /// to its own centre (voxel `i` centred at `(i + 0.5) * spacing`); an
    /// exact tie goes to the higher index. Resampling to the identical
    /// spacing reproduces the volume bit for bit.
    pub fn resample_nn(&self, target_spacing_mm: [f64; 3]) -> Result<Volume> {
        if target_spacing_mm
            .iter()
            .any(|&s| !(s.is_finite() && s > 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "target spacing must be positive and finite, got {target_spacing_mm:?}"
            )));
        }
        let mut out_dims = [0usize; 3];
        for a in 0..3 {
            let exact = self.geometry.dims[a] as f64 * self.geometry.spacing_mm[a]
                / target_spacing_mm[a];
            out_dims[a] = (exact.round() as usize).max(1);
        }
        let out_geom = Geometry::new(out_dims, target_spacing_mm)?;

        // Per-axis source index tables; the 3D lookup is separable.
        let mut lut: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for a in 0..3 {
            lut[a] = (0..out_dims[a])
                .map(|j| {
                    let centre = (j as f64 + 0.5) * target_spacing_mm[a];
                    let src = (centre / self.geometry.spacing_mm[a] - 0.5).round();
                    (src.max(0.0) as usize).min(self.geometry.dims[a] - 1)
                })
                .collect();
        }

        let mut values = Vec::with_capacity(out_geom.voxel_count());
        for z in 0..out_dims[2] {
            let sz = lut[2][z];
            for y in 0..out_dims[1] {
                let sy = lut[1][y];
                for x in 0..out_dims[0] {
                    values.push(self.get(lut[0][x], sy, sz));
                }
            }
        }
        Volume::new(out_geom, self.kind, values)
    }

    /// Crops to `target_dims_xy` in x/y, keeping all z slices.
    ///
    /// The window starts at `floor((source - target) / 2)` per axis.
    pub fn center_crop(&self, target_dims_xy: [usize; 2]) -> Result<Volume> {
        let [tx, ty] = target_dims_xy;
        let [dx, dy, dz] = self.geometry.dims;
        if tx == 0 || ty == 0 {
            return Err(Error::InvalidInput(
                "crop target dims must be positive".into(),
            ));
        }
        if tx > dx || ty > dy {
            return Err(Error::InvalidInput(format!(
                "crop target {tx}x{ty} exceeds source {dx}x{dy}"
            )));
        }
        let x0 = (dx - tx) / 2;
        let y0 = (dy - ty) / 2;
        let out_geom = Geometry::new([tx, ty, dz], self.geometry.spacing_mm)?;
        let mut values = Vec::with_capacity(out_geom.voxel_count());
        for z in 0..dz {
            for y in 0..ty {
                for x in 0..tx {
                    values.push(self.get(x0 + x, y0 + y, z));
                }
            }
        }
        Volume::new(out_geom, self.kind, values)
    }

    /// Copies the z-plane at `z` out as a [`Plane`].
    pub fn slice_at(&self, z: usize) -> Plane {
        let [dx, dy, _] = self.geometry.dims;
        let start = self.geometry.index(0, 0, z);
        Plane::new(dx, dy, self.values[start..start + dx * dy].to_vec())
            .expect("slice length matches plane dims")
    }

    /// Iterates over all z-planes in order.
    pub fn slices(&self) -> impl Iterator<Item = Plane> + '_ {
        (0..self.geometry.dims[2]).map(|z| self.slice_at(z))
    }

    /// Stacks z-planes back into a volume. All planes must share one shape.
    pub fn from_planes(planes: &[Plane], spacing_mm: [f64; 3], kind: VolumeKind) -> Result<Volume> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot stack zero planes".into()))?;
        let (w, h) = (first.width(), first.height());
        let mut values = Vec::with_capacity(w * h * planes.len());
        for p in planes {
            if p.width() != w || p.height() != h {
                return Err(Error::InvalidInput(format!(
                    "plane shapes differ: {}x{} vs {w}x{h}",
                    p.width(),
                    p.height()
                )));
            }
            values.extend_from_slice(p.values());
        }
        Volume::new(Geometry::new([w, h, planes.len()], spacing_mm)?, kind, values)
    }
}

/// A 2D scalar grid in x-fastest (row-major) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("plane dims must be positive".into()));
        }
        if values.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "plane buffer holds {} values, dims want {}",
                values.len(),
                width * height
            )));
        }
        Ok(Plane {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        debug_assert!(x < self.width && y < self.height);
        self.values[x + self.width * y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        debug_assert!(x < self.width && y < self.height);
        self.values[x + self.width * y] = v;
    }

    /// Value at integer coordinates, 0 outside the grid.
    #[inline]
    pub fn get_or_zero(&self, x: i64, y: i64) -> f32 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            0.0
        } else {
            self.values[x as usize + self.width * y as usize]
        }
    }
}
