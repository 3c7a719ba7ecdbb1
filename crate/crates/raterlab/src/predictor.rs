//! Segmentation model adapters.
//!
//! The uncertainty harness only needs one operation: map a 2D input plane to
//! a probability plane of the same shape. [`Predictor`] captures that, and
//! two adapters connect it to models living outside this process, one through
//! a prediction directory filled offline and one through a subprocess call
//! per plane. Predictors must be deterministic: the same input plane must
//! produce the same output plane, otherwise augmentation entropy would mix
//! model noise into the transform ensemble.

use std::path::{Path, PathBuf};
use std::process::Command;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rvol;
use crate::volume::{Geometry, Plane, Volume, VolumeKind};

/// A deterministic mapping from an input plane to a probability plane.
///
/// Implementations must be safe to call from multiple threads at once.
pub trait Predictor: Sync {
    fn predict(&self, input: &Plane) -> Result<Plane>;
}

/// Checks that `output` matches `input` in shape and holds probabilities.
pub fn validate_prediction(input: &Plane, output: &Plane) -> Result<()> {
    if output.width() != input.width() || output.height() != input.height() {
        return Err(Error::InvalidInput(format!(
            "prediction shape {}x{} does not match input {}x{}",
            output.width(),
            output.height(),
            input.width(),
            input.height()
        )));
    }
    if let Some(v) = output
        .values()
        .iter()
        .find(|&&v| !(v.is_finite() && (0.0..=1.0).contains(&v)))
    {
        return Err(Error::InvalidInput(format!(
            "prediction contains out-of-range value {v}"
        )));
    }
    Ok(())
}

/// Content key identifying a plane: the first 8 bytes of the SHA-256 over its
/// dims and raw values, as 16 hex characters.
pub fn content_key(plane: &Plane) -> String {
    let mut hasher = Sha256::new();
    hasher.update((plane.width() as u64).to_le_bytes());
    hasher.update((plane.height() as u64).to_le_bytes());
    for v in plane.values() {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Wraps a plane as a single-slice probability volume so it can live in a
/// volume file. Unit spacing; the plane has no physical geometry of its own.
pub fn plane_to_volume(plane: &Plane) -> Result<Volume> {
    let geom = Geometry::new([plane.width(), plane.height(), 1], [1.0, 1.0, 1.0])?;
    Volume::new(geom, VolumeKind::ProbabilityMap, plane.values().to_vec())
}

/// Extracts the single slice of a one-slice volume.
pub fn volume_to_plane(volume: &Volume) -> Result<Plane> {
    if volume.geometry().dims[2] != 1 {
        return Err(Error::InvalidInput(format!(
            "expected a single-slice volume, got {} slices",
            volume.geometry().dims[2]
        )));
    }
    Ok(volume.slice_at(0))
}

/// Serves predictions from a directory filled offline.
///
/// Each input plane is identified by its [`content_key`]. A prediction for
/// key K is read from `<dir>/preds/<K>.rvol`. When it is missing, the input
/// is written to `<dir>/inputs/<K>.rvol` and an error names both paths, so
/// one failing run dumps exactly the inputs an external model still has to
/// process. Reruns with a complete `preds/` directory never write anything.
pub struct PrecomputedPredictor {
    dir: PathBuf,
}

impl PrecomputedPredictor {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        PrecomputedPredictor { dir: dir.into() }
    }

    fn pred_path(&self, key: &str) -> PathBuf {
        self.dir.join("preds").join(format!("{key}.rvol"))
    }

    fn input_path(&self, key: &str) -> PathBuf {
        self.dir.join("inputs").join(format!("{key}.rvol"))
    }
}

impl Predictor for PrecomputedPredictor {
    fn predict(&self, input: &Plane) -> Result<Plane> {
        let key = content_key(input);
        let pred_path = self.pred_path(&key);
        if !pred_path.exists() {
            let input_path = self.input_path(&key);
            if let Some(parent) = input_path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            rvol::save_volume(&plane_to_volume(input)?, &input_path)?;
            return Err(Error::format(
                pred_path,
                format!(
                    "no prediction for input key {key}; the input was written to {} \
                     for offline processing",
                    input_path.display()
                ),
            ));
        }
        let volume = rvol::load_volume(&pred_path)?;
        let output = volume_to_plane(&volume)?;
        validate_prediction(input, &output)?;
        Ok(output)
    }
}

/// Runs an external command once per plane.
///
/// The configured command line is split on whitespace; every call appends
/// two arguments, the input volume path and the expected output volume path,
/// both inside a per-call temporary directory. The command must write its
/// probability map to the output path in the same format.
pub struct SubprocessPredictor {
    argv: Vec<String>,
}

impl SubprocessPredictor {
    pub fn new(command: &str) -> Result<Self> {
        let argv: Vec<String> = command.split_whitespace().map(String::from).collect();
        if argv.is_empty() {
            return Err(Error::InvalidInput(
                "subprocess predictor command is empty".into(),
            ));
        }
        Ok(SubprocessPredictor { argv })
    }
}

impl Predictor for SubprocessPredictor {
    fn predict(&self, input: &Plane) -> Result<Plane> {
        let tmp = tempfile::tempdir()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let input_path = tmp.path().join("input.rvol");
        let output_path = tmp.path().join("output.rvol");
        rvol::save_volume(&plane_to_volume(input)?, &input_path)?;

        let status = Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .arg(&input_path)
            .arg(&output_path)
            .output()
            .map_err(|e| Error::io(Path::new(&self.argv[0]), e))?;
        if !status.status.success() {
            let stderr = String::from_utf8_lossy(&status.stderr);
            return Err(Error::InvalidInput(format!(
                "predictor command {:?} exited with {}: {}",
                self.argv[0],
                status.status,
                stderr.trim()
            )));
        }
        if !output_path.exists() {
            return Err(Error::format(
                output_path,
                format!("predictor command {:?} wrote no output", self.argv[0]),
            ));
        }
        let volume = rvol::load_volume(&output_path)?;
        let output = volume_to_plane(&volume)?;
        validate_prediction(input, &output)?;
        Ok(output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_of(values: &[f32], w: usize, h: usize) -> Plane {
        Plane::new(w, h, values.to_vec()).unwrap()
    }

    #[test]
    fn content_key_is_stable_and_shape_sensitive() {
        let a = plane_of(&[0.0, 0.5, 1.0, 0.25], 2, 2);
        let b = plane_of(&[0.0, 0.5, 1.0, 0.25], 2, 2);
        let c = plane_of(&[0.0, 0.5, 1.0, 0.25], 4, 1);
        assert_eq!(content_key(&a), content_key(&b));
        assert_ne!(content_key(&a), content_key(&c));
        assert_eq!(content_key(&a).len(), 16);
    }

    #[test]
    fn validate_prediction_checks_shape_and_range() {
        let input = plane_of(&[0.0; 4], 2, 2);
        assert!(validate_prediction(&input, &plane_of(&[0.5; 4], 2, 2)).is_ok());
        assert!(validate_prediction(&input, &plane_of(&[0.5; 2], 2, 1)).is_err());
        assert!(validate_prediction(&input, &plane_of(&[1.5; 4], 2, 2)).is_err());
    }

    #[test]
    fn plane_volume_round_trip() {
        let p = plane_of(&[0.1, 0.9, 0.4, 0.6, 0.0, 1.0], 3, 2);
        let v = plane_to_volume(&p).unwrap();
        assert_eq!(v.geometry().dims, [3, 2, 1]);
        assert_eq!(volume_to_plane(&v).unwrap(), p);
    }

    #[test]
    fn precomputed_misses_then_serves() {
        let dir = tempfile::tempdir().unwrap();
        let predictor = PrecomputedPredictor::new(dir.path());
        let input = plane_of(&[0.0, 1.0, 1.0, 0.0], 2, 2);
        let key = content_key(&input);

        let err = predictor.predict(&input).unwrap_err();
        assert!(err.to_string().contains(&key), "{err}");
        let dumped = dir.path().join("inputs").join(format!("{key}.rvol"));
        assert!(dumped.exists());

        let pred = plane_of(&[0.25; 4], 2, 2);
        let pred_path = dir.path().join("preds").join(format!("{key}.rvol"));
        std::fs::create_dir_all(pred_path.parent().unwrap()).unwrap();
        rvol::save_volume(&plane_to_volume(&pred).unwrap(), &pred_path).unwrap();
        assert_eq!(predictor.predict(&input).unwrap(), pred);
    }

    #[cfg(unix)]
    fn write_script(dir: &Path, body: &str) -> PathBuf {
        use std::os::unix::fs::PermissionsExt;
        let path = dir.join("predict.sh");
        std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        path
    }

    #[cfg(unix)]
    #[test]
    fn subprocess_identity_script_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let script = write_script(dir.path(), "cp \"$1\" \"$2\"\ncp \"$1.json\" \"$2.json\"");
        let predictor = SubprocessPredictor::new(script.to_str().unwrap()).unwrap();
        let input = plane_of(&[0.2, 0.8, 0.5, 0.1], 2, 2);
        assert_eq!(predictor.predict(&input).unwrap(), input);
    }

    #[cfg(unix)]
    #[test]
    fn subprocess_failure_reports_stderr() {
        let dir = tempfile::tempdir().unwrap();
        let script = write_script(dir.path(), "echo boom >&2\nexit 3");
        let predictor = SubprocessPredictor::new(script.to_str().unwrap()).unwrap();
        let err = predictor
            .predict(&plane_of(&[0.0; 4], 2, 2))
            .unwrap_err();
        assert!(err.to_string().contains("boom"), "{err}");
    }

    #[cfg(unix)]
    #[test]
    fn subprocess_missing_output_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let script = write_script(dir.path(), "exit 0");
        let predictor = SubprocessPredictor::new(script.to_str().unwrap()).unwrap();
        let err = predictor
            .predict(&plane_of(&[0.0; 4], 2, 2))
            .unwrap_err();
        assert!(err.to_string().contains("wrote no output"), "{err}");
    }

    #[test]
    fn empty_command_is_rejected() {
        assert!(SubprocessPredictor::new("  ").is_err());
    }
}
