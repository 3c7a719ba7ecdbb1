//! Rater style metrics: volumetric bias and consistency against a consensus.
//!
//! For each image the raw signal is the voxel-count difference between the
//! rater's mask and the consensus mask. Bias is the mean of those
//! differences, consistency their population standard deviation (divided by
//! the image count, not count minus one). Relative variants divide each
//! difference by the consensus voxel count first and skip images whose
//! consensus is empty.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fusion::{self, FusionMethod};
use crate::manifest::DatasetManifest;
use crate::tables::StyleRow;
use crate::volume::Volume;

/// Whether differences are taken per volume or per z-slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StyleBasis {
    Volume,
    Slice,
}

/// Which raters feed the consensus used as the reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsensusScope {
    /// All raters in the manifest.
    Global,
    /// Only raters of one center.
    Center(String),
    /// An explicit rater list.
    Raters(Vec<String>),
}

impl ConsensusScope {
    pub fn includes(&self, rater_id: &str, center_id: &str) -> bool {
        match self {
            ConsensusScope::Global => true,
            ConsensusScope::Center(c) => c == center_id,
            ConsensusScope::Raters(ids) => ids.iter().any(|r| r == rater_id),
        }
    }
}

fn paired_counts(
    rater_masks: &[Volume],
    consensus_masks: &[Volume],
) -> Result<Vec<(usize, usize)>> {
    if rater_masks.len() != consensus_masks.len() {
        return Err(Error::InvalidInput(format!(
            "{} rater masks vs {} consensus masks",
            rater_masks.len(),
            consensus_masks.len()
        )));
    }
    if rater_masks.is_empty() {
        return Err(Error::InvalidInput("style metrics need at least one image".into()));
    }
    let mut out = Vec::with_capacity(rater_masks.len());
    for (r, c) in rater_masks.iter().zip(consensus_masks) {
        r.check_mask()?;
        c.check_mask()?;
        r.check_same_geometry(c)?;
        out.push((r.positive_count(), c.positive_count()));
    }
    Ok(out)
}

fn diffs_of(counts: &[(usize, usize)]) -> Vec<f64> {
    counts
        .iter()
        .map(|&(r, c)| r as f64 - c as f64)
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Mean voxel-count difference of a rater against the per-image consensus.
pub fn bias(rater_masks: &[Volume], consensus_masks: &[Volume]) -> Result<f64> {
    Ok(mean(&diffs_of(&paired_counts(rater_masks, consensus_masks)?)))
}

/// Population standard deviation of the per-image differences.
pub fn consistency(rater_masks: &[Volume], consensus_masks: &[Volume]) -> Result<f64> {
    Ok(population_std(&diffs_of(&paired_counts(
        rater_masks,
        consensus_masks,
    )?)))
}

/// Per-image relative differences plus the count of skipped images.
///
/// Images with an empty consensus are skipped; when every image is skipped
/// the metric is undefined and the value side is `None`.
#[derive(Debug, Clone)]
pub struct RelativeDiffs {
    pub values: Vec<f64>,
    pub skipped: usize,
}

impl RelativeDiffs {
    pub fn mean(&self) -> Option<f64> {
        (!self.values.is_empty()).then(|| mean(&self.values))
    }

    pub fn population_std(&self) -> Option<f64> {
        (!self.values.is_empty()).then(|| population_std(&self.values))
    }
}

/// Relative differences `(n_rater - n_consensus) / n_consensus` per image.
pub fn relative_diffs(
    rater_masks: &[Volume],
    consensus_masks: &[Volume],
) -> Result<RelativeDiffs> {
    let counts = paired_counts(rater_masks, consensus_masks)?;
    let mut values = Vec::new();
    let mut skipped = 0;
    for (r, c) in counts {
        if c == 0 {
            skipped += 1;
        } else {
            values.push((r as f64 - c as f64) / c as f64);
        }
    }
    Ok(RelativeDiffs { values, skipped })
}

/// Mean relative difference, `None` when every consensus was empty.
pub fn relative_bias(
    rater_masks: &[Volume],
    consensus_masks: &[Volume],
) -> Result<Option<f64>> {
    Ok(relative_diffs(rater_masks, consensus_masks)?.mean())
}

/// Population standard deviation of relative differences.
pub fn relative_consistency(
    rater_masks: &[Volume],
    consensus_masks: &[Volume],
) -> Result<Option<f64>> {
    Ok(relative_diffs(rater_masks, consensus_masks)?.population_std())
}

/// Options for [`style_table`].
#[derive(Debug, Clone)]
pub struct StyleOptions {
    pub method: FusionMethod,
    pub scope: ConsensusScope,
    pub basis: StyleBasis,
    /// Compute the relative metric columns as well.
    pub with_relative: bool,
}

impl Default for StyleOptions {
    fn default() -> Self {
        StyleOptions {
            method: FusionMethod::Majority,
            scope: ConsensusScope::Global,
            basis: StyleBasis::Volume,
            with_relative: true,
        }
    }
}

/// Style table: one row per rater in scope.
#[derive(Debug, Clone)]
pub struct StyleTable {
    pub rows: Vec<StyleRow>,
}

/// Per-image (or per-slice) count pairs for every rater in scope, measured
/// against a consensus computed once per subject. The consensus includes the
/// measured rater itself whenever the scope covers it.
pub fn style_table(manifest: &DatasetManifest, opts: &StyleOptions) -> Result<StyleTable> {
    // rater -> (center, list of (n_rater, n_consensus) pairs)
    let mut per_rater: BTreeMap<String, (String, Vec<(usize, usize)>)> = BTreeMap::new();

    for subject in &manifest.subjects {
        let in_scope: Vec<_> = subject
            .entries
            .iter()
            .filter(|e| opts.scope.includes(&e.rater_id, &e.center_id))
            .collect();
        if in_scope.is_empty() {
            continue;
        }
        let fused = fusion::fuse_subset(
            manifest,
            &subject.subject_id,
            |r, c| opts.scope.includes(r, c),
            &opts.method,
        )?;
        let consensus = fused.consensus;

        for entry in in_scope {
            let mask = manifest.load_mask(entry)?;
            mask.check_same_geometry(&consensus)?;
            let slot = per_rater
                .entry(entry.rater_id.clone())
                .or_insert_with(|| (entry.center_id.clone(), Vec::new()));
            match opts.basis {
                StyleBasis::Volume => {
                    slot.1.push((mask.positive_count(), consensus.positive_count()));
                }
                StyleBasis::Slice => {
                    for z in 0..mask.geometry().dims[2] {
                        let r = mask.slice_at(z);
                        let c = consensus.slice_at(z);
                        let rc = r.values().iter().filter(|&&v| v == 1.0).count();
                        let cc = c.values().iter().filter(|&&v| v == 1.0).count();
                        slot.1.push((rc, cc));
                    }
                }
            }
        }
    }

    if per_rater.is_empty() {
        return Err(Error::InvalidInput(
            "consensus scope selects no raters".into(),
        ));
    }

    let mut rows = Vec::with_capacity(per_rater.len());
    for (rater_id, (center_id, counts)) in per_rater {
        let diffs = diffs_of(&counts);
        let (relative_bias, relative_consistency, skipped) = if opts.with_relative {
            let mut values = Vec::new();
            let mut skipped = 0usize;
            for &(r, c) in &counts {
                if c == 0 {
                    skipped += 1;
                } else {
                    values.push((r as f64 - c as f64) / c as f64);
                }
            }
            let rel = RelativeDiffs { values, skipped };
            (rel.mean(), rel.population_std(), Some(rel.skipped))
        } else {
            (None, None, None)
        };
        rows.push(StyleRow {
            rater_id,
            center_id,
            n_images: counts.len(),
            bias: mean(&diffs),
            consistency: population_std(&diffs),
            relative_bias,
            relative_consistency,
            skipped_images: skipped,
        });
    }
    Ok(StyleTable { rows })
}
