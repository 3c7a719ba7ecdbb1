//! Dataset manifests: which rater annotated which subject, and where the
//! mask files live.
//!
//! Manifests are JSON. Mask paths are relative to the manifest file, so a
//! cohort directory can be moved or archived as a unit.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rvol;
use crate::volume::Volume;

/// One rater's annotation of one subject.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaterEntry {
    pub rater_id: String,
    pub center_id: String,
    /// Path of the mask RVOL file, relative to the manifest.
    pub mask_path: String,
}

/// All annotations of one subject.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub entries: Vec<RaterEntry>,
}

/// A multi-rater, multi-center segmentation dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub subjects: Vec<SubjectEntry>,
    /// Directory mask paths are resolved against. Set on load, not stored.
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(subjects: Vec<SubjectEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = DatasetManifest {
            subjects,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Loads and validates a manifest from `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_slice(&bytes).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        m.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        m.validate()
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(m)
    }

    /// Serialises the manifest to `path` (pretty JSON, atomic write).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        json.push(b'\n');
        crate::util::write_atomic(path, &json)
    }

    /// Checks structural invariants:
    /// every subject has at least one entry, (subject, rater) pairs are
    /// unique, and each rater belongs to exactly one center.
    pub fn validate(&self) -> Result<()> {
        if self.subjects.is_empty() {
            return Err(Error::InvalidInput("manifest lists no subjects".into()));
        }
        let mut subject_ids = BTreeSet::new();
        let mut rater_center: BTreeMap<&str, &str> = BTreeMap::new();
        for s in &self.subjects {
            if !subject_ids.insert(s.subject_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate subject id \"{}\"",
                    s.subject_id
                )));
            }
            if s.entries.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "subject \"{}\" has no annotations",
                    s.subject_id
                )));
            }
            let mut raters_here = BTreeSet::new();
            for e in &s.entries {
                if !raters_here.insert(e.rater_id.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "rater \"{}\" listed twice for subject \"{}\"",
                        e.rater_id, s.subject_id
                    )));
                }
                match rater_center.get(e.rater_id.as_str()) {
                    None => {
                        rater_center.insert(&e.rater_id, &e.center_id);
                    }
                    Some(&c) if c == e.center_id => {}
                    Some(&c) => {
                        return Err(Error::InvalidInput(format!(
                            "rater \"{}\" assigned to centers \"{}\" and \"{}\"",
                            e.rater_id, c, e.center_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// All (rater_id, center_id) pairs, sorted by rater id.
    pub fn raters(&self) -> Vec<(String, String)> {
        let mut map = BTreeMap::new();
        for s in &self.subjects {
            for e in &s.entries {
                map.entry(e.rater_id.clone()).or_insert(e.center_id.clone());
            }
        }
        map.into_iter().collect()
    }

    /// All center ids, sorted.
    pub fn centers(&self) -> Vec<String> {
        let mut set = BTreeSet::new();
        for s in &self.subjects {
            for e in &s.entries {
                set.insert(e.center_id.clone());
            }
        }
        set.into_iter().collect()
    }

    pub fn subject(&self, subject_id: &str) -> Result<&SubjectEntry> {
        self.subjects
            .iter()
            .find(|s| s.subject_id == subject_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown subject \"{subject_id}\"")))
    }

    /// Absolute path of an entry's mask file.
    pub fn mask_path(&self, entry: &RaterEntry) -> PathBuf {
        self.base_dir.join(&entry.mask_path)
    }

    /// Loads the mask for one entry.
    pub fn load_mask(&self, entry: &RaterEntry) -> Result<Volume> {
        rvol::load_volume(&self.mask_path(entry))
    }
}
