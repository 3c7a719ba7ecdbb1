//! RVOL on-disk volume format.
//!
//! A volume is stored as two files: the raw little-endian voxel data at the
//! given path and a JSON sidecar header at the same path with `.json`
//! appended. The header carries `dims` (x, y, z), `spacing_mm`, `dtype`
//! (`"u8"` for masks, `"f32"` for probability maps) and `kind` (`"mask"` or
//! `"prob"`). Voxel data is x-fastest, matching [`crate::volume::Volume`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::write_atomic;
use crate::volume::{Geometry, Volume, VolumeKind};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
    kind: String,
}

/// Path of the JSON sidecar header for a raw data path.
pub fn header_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Writes `volume` to `path` (raw data) and `path.json` (header).
///
/// Both files are written atomically. Masks are stored as one byte per
/// voxel, probability maps as little-endian f32.
pub fn save_volume(volume: &Volume, path: &Path) -> Result<()> {
    let (dtype, bytes) = match volume.kind() {
        VolumeKind::BinaryMask => (
            "u8",
            volume.values().iter().map(|&v| v as u8).collect::<Vec<u8>>(),
        ),
        VolumeKind::ProbabilityMap => {
            let mut buf = Vec::with_capacity(volume.values().len() * 4);
            for v in volume.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            ("f32", buf)
        }
    };
    let header = Header {
        dims: volume.geometry().dims,
        spacing_mm: volume.geometry().spacing_mm,
        dtype: dtype.to_string(),
        kind: match volume.kind() {
            VolumeKind::BinaryMask => "mask".to_string(),
            VolumeKind::ProbabilityMap => "prob".to_string(),
        },
    };
    let hp = header_path(path);
    let mut header_json = serde_json::to_vec_pretty(&header)
        .map_err(|e| Error::Json { path: hp.clone(), source: e })?;
    header_json.push(b'\n');
    write_atomic(&hp, &header_json)?;
    write_atomic(path, &bytes)?;
    Ok(())
}

/// Loads a volume from `path`, validating the header against the raw data.
pub fn load_volume(path: &Path) -> Result<Volume> {
    let hp = header_path(path);
    let header_bytes = std::fs::read(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Json { path: hp.clone(), source: e })?;
    let geometry = Geometry::new(header.dims, header.spacing_mm)
        .map_err(|e| Error::format(&hp, e.to_string()))?;

    let kind = match (header.kind.as_str(), header.dtype.as_str()) {
        ("mask", "u8") => VolumeKind::BinaryMask,
        ("prob", "f32") => VolumeKind::ProbabilityMap,
        (k, d) => {
            return Err(Error::format(
                &hp,
                format!("unsupported kind/dtype combination \"{k}\"/\"{d}\""),
            ))
        }
    };

    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let voxels = geometry.voxel_count();
    let expected = match kind {
        VolumeKind::BinaryMask => voxels,
        VolumeKind::ProbabilityMap => voxels * 4,
    };
    if raw.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "raw size mismatch: header wants {expected} bytes for {:?}, file has {}",
                header.dims,
                raw.len()
            ),
        ));
    }

    let volume = match kind {
        VolumeKind::BinaryMask => Volume::mask_from_bytes(geometry, &raw)
            .map_err(|e| Error::format(path, e.to_string()))?,
        VolumeKind::ProbabilityMap => {
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Volume::new(geometry, kind, values).map_err(|e| Error::format(path, e.to_string()))?
        }
    };
    Ok(volume)
}
