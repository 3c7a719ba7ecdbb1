//! Synthetic cohort generator: ellipsoid phantoms and parametric raters.
//!
//! A rater is modelled as a signed morphological tendency applied to the
//! phantom truth: the mean iteration count is shared across a center
//! (`center_style`) with a small per-rater offset, per-image jitter controls
//! consistency, and boundary flips add uncorrelated noise. The model is
//! deliberately minimal; what matters is that the injected parameters are
//! recoverable by the style metrics, which makes the simulator the
//! verification oracle for the rest of the toolkit.
//!
//! All randomness is drawn from ChaCha8 streams derived with
//! [`crate::util::mix_seed`], so cohorts are reproducible from a single seed
//! and any subject/rater volume can be regenerated in isolation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, RaterEntry, SubjectEntry};
use crate::morph::{boundary_voxels, morph_signed, outer_shell};
use crate::rvol;
use crate::util::mix_seed;
use crate::volume::{Geometry, Volume, VolumeKind};

/// Seed-stream tags keeping phantom and rater draws independent.
const STREAM_PHANTOM: u64 = 1;
const STREAM_RATER: u64 = 2;

/// Parametric description of one simulated rater.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterModel {
    pub rater_id: String,
    pub center_id: String,
    /// Mean signed morphology iterations shared by the rater's center;
    /// positive dilates, negative erodes.
    pub center_style: f64,
    /// Per-rater additive offset on top of the center style.
    pub rater_offset: f64,
    /// Per-image standard deviation of the iteration count.
    pub jitter_sigma: f64,
    /// Per-boundary-voxel flip probability.
    pub flip_rate: f64,
}

impl RaterModel {
    pub fn validate(&self) -> Result<()> {
        if self.rater_id.is_empty() || self.center_id.is_empty() {
            return Err(Error::InvalidInput(
                "rater model needs nonempty rater_id and center_id".into(),
            ));
        }
        let finite = |v: f64| v.is_finite();
        if !finite(self.center_style) || !finite(self.rater_offset) {
            return Err(Error::InvalidInput(format!(
                "rater {} has non-finite style parameters",
                self.rater_id
            )));
        }
        if !(finite(self.jitter_sigma) && self.jitter_sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "rater {}: jitter_sigma must be >= 0, got {}",
                self.rater_id, self.jitter_sigma
            )));
        }
        if !(finite(self.flip_rate) && (0.0..1.0).contains(&self.flip_rate)) {
            return Err(Error::InvalidInput(format!(
                "rater {}: flip_rate must lie in [0, 1), got {}",
                self.rater_id, self.flip_rate
            )));
        }
        Ok(())
    }

    /// The injected tendency the style metrics should recover.
    pub fn injected_style(&self) -> f64 {
        self.center_style + self.rater_offset
    }
}

/// Phantom shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    /// Number of ellipsoids unioned into the truth mask.
    pub n_objects: usize,
    /// Semi-axis range in voxels, before capping to the grid.
    pub size_range: (f64, f64),
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            n_objects: 3,
            size_range: (4.5, 8.0),
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_objects == 0 {
            return Err(Error::InvalidInput(
                "phantom needs at least one object".into(),
            ));
        }
        let (lo, hi) = self.size_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
            return Err(Error::InvalidInput(format!(
                "phantom size range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// A synthetic subject: ground-truth mask plus an intensity image.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub true_mask: Volume,
    pub intensity: Volume,
}

/// Generates one phantom, deterministically for a given seed.
///
/// Each object draws semi-axes (ax, ay, az) uniformly from `size_range` in
/// voxels, caps each to half the grid extent along its axis, then draws a
/// centre uniformly among positions where the ellipsoid fits. A voxel at
/// integer coordinates p is positive when `sum(((p - c) / a)^2) <= 1`.
/// Objects whose voxelization lands on no voxel centre are redrawn a bounded
/// number of times. The intensity image is the smoothed mask plus Gaussian
/// noise, clamped to [0, 1].
pub fn generate_phantom(
    geometry: Geometry,
    config: &PhantomConfig,
    seed: u64,
) -> Result<Phantom> {
    geometry.validate()?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = geometry.dims;
    let mut mask = vec![0.0f32; geometry.voxel_count()];

    for object in 0..config.n_objects {
        let mut placed = false;
        for _attempt in 0..100 {
            // Draw order: ax, ay, az, cx, cy, cz.
            let (lo, hi) = config.size_range;
            let mut semi = [0.0f64; 3];
            let mut centre = [0.0f64; 3];
            for a in 0..3 {
                let drawn = rng.gen_range(lo..=hi);
                semi[a] = drawn.min(((dims[a] - 1) as f64 / 2.0).max(0.5));
            }
            for a in 0..3 {
                let lo_c = semi[a].min((dims[a] - 1) as f64 / 2.0);
                let hi_c = (dims[a] - 1) as f64 - lo_c;
                centre[a] = if hi_c > lo_c {
                    rng.gen_range(lo_c..=hi_c)
                } else {
                    (dims[a] - 1) as f64 / 2.0
                };
            }
            let mut any = false;
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        let d = [x as f64, y as f64, z as f64];
                        let q: f64 = (0..3)
                            .map(|a| {
                                let t = (d[a] - centre[a]) / semi[a];
                                t * t
                            })
                            .sum();
                        if q <= 1.0 {
                            mask[geometry.index(x, y, z)] = 1.0;
                            any = true;
                        }
                    }
                }
            }
            if any {
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidInput(format!(
                "could not place phantom object {object} within {dims:?} after 100 attempts"
            )));
        }
    }

    let true_mask = Volume::new(geometry, VolumeKind::BinaryMask, mask)?;
    if true_mask.is_empty_mask() {
        return Err(Error::InvalidInput("phantom truth mask is empty".into()));
    }

    // Intensity: one-pass box smoothing of the mask, then noise.
    let noise = Normal::new(0.0f64, 0.08).expect("fixed sigma is valid");
    let mut intensity = Vec::with_capacity(geometry.voxel_count());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let mut sum = 0.0f64;
                let mut count = 0usize;
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (nx, ny, nz) =
                                (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if nx >= 0
                                && ny >= 0
                                && nz >= 0
                                && (nx as usize) < dims[0]
                                && (ny as usize) < dims[1]
                                && (nz as usize) < dims[2]
                            {
                                sum += f64::from(true_mask.get(
                                    nx as usize,
                                    ny as usize,
                                    nz as usize,
                                ));
                                count += 1;
                            }
                        }
                    }
                }
                let v = sum / count as f64 + noise.sample(&mut rng);
                intensity.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }

    Ok(Phantom {
        true_mask,
        intensity: Volume::new(geometry, VolumeKind::ProbabilityMap, intensity)?,
    })
}

/// Simulates one rater's mask for one phantom.
///
/// Draws an iteration count from round(Normal(style, jitter)), applies that
/// many signed morphology steps (erosion clamps rather than emptying the
/// object), then flips each voxel of the two-sided boundary band
/// independently with `flip_rate`. If flipping would empty the mask the
/// pre-flip mask is kept.
pub fn simulate_rater(phantom: &Phantom, model: &RaterModel, seed: u64) -> Result<Volume> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(model.injected_style(), model.jitter_sigma)
        .map_err(|e| Error::InvalidInput(format!("invalid jitter distribution: {e}")))?;
    let steps = jitter.sample(&mut rng).round() as i64;
    let (morphed, _applied) = morph_signed(&phantom.true_mask, steps)?;

    if model.flip_rate == 0.0 {
        return Ok(morphed);
    }
    let mut band = boundary_voxels(&morphed)?;
    band.extend(outer_shell(&morphed)?);
    let geometry = *morphed.geometry();
    let mut values = morphed.values().to_vec();
    for [x, y, z] in band {
        if rng.gen_range(0.0..1.0) < model.flip_rate {
            let i = geometry.index(x, y, z);
            values[i] = 1.0 - values[i];
        }
    }
    let flipped = Volume::new(geometry, VolumeKind::BinaryMask, values)?;
    if flipped.is_empty_mask() {
        return Ok(morphed);
    }
    Ok(flipped)
}

/// Checks a rater roster: nonempty, valid models, unique rater ids, and a
/// single center per rater id.
pub fn validate_raters(raters: &[RaterModel]) -> Result<()> {
    if raters.is_empty() {
        return Err(Error::InvalidInput("rater roster is empty".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in raters {
        r.validate()?;
        if !seen.insert(r.rater_id.as_str()) {
            return Err(Error::InvalidInput(format!(
                "duplicate rater id {}",
                r.rater_id
            )));
        }
    }
    Ok(())
}

/// Generates a full cohort on disk and returns its manifest.
///
/// Layout under `out_dir`: `truth/<subject>.rvol`, `intensity/<subject>.rvol`,
/// `masks/<subject>__<rater>.rvol`, and `manifest.json` with mask paths
/// relative to the manifest. Subject s uses phantom seed
/// `mix_seed(seed, [1, s])`; rater r of subject s draws from
/// `mix_seed(seed, [2, s, r])`, so any single volume can be regenerated
/// without replaying the cohort.
pub fn write_cohort(
    geometry: Geometry,
    n_subjects: usize,
    raters: &[RaterModel],
    config: &PhantomConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if n_subjects == 0 {
        return Err(Error::InvalidInput("cohort needs at least 1 subject".into()));
    }
    validate_raters(raters)?;
    for sub in ["truth", "intensity", "masks"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let mut subjects = Vec::with_capacity(n_subjects);
    for s in 0..n_subjects {
        let subject_id = format!("sub{:02}", s + 1);
        let phantom = generate_phantom(geometry, config, mix_seed(seed, &[STREAM_PHANTOM, s as u64]))?;
        rvol::save_volume(
            &phantom.true_mask,
            &out_dir.join("truth").join(format!("{subject_id}.rvol")),
        )?;
        rvol::save_volume(
            &phantom.intensity,
            &out_dir.join("intensity").join(format!("{subject_id}.rvol")),
        )?;

        let mut entries = Vec::with_capacity(raters.len());
        for (r, model) in raters.iter().enumerate() {
            let mask = simulate_rater(
                &phantom,
                model,
                mix_seed(seed, &[STREAM_RATER, s as u64, r as u64]),
            )?;
            let rel = format!("masks/{subject_id}__{}.rvol", model.rater_id);
            rvol::save_volume(&mask, &out_dir.join(&rel))?;
            entries.push(RaterEntry {
                rater_id: model.rater_id.clone(),
                center_id: model.center_id.clone(),
                mask_path: rel,
            });
        }
        subjects.push(SubjectEntry {
            subject_id,
            entries,
        });
    }

    let manifest = DatasetManifest::new(subjects, out_dir)?;
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Truth-mask path convention used by [`write_cohort`].
pub fn truth_path(cohort_dir: &Path, subject_id: &str) -> std::path::PathBuf {
    cohort_dir.join("truth").join(format!("{subject_id}.rvol"))
}

/// The 7-rater, 3-center roster used by the `paper-shape` preset: four
/// raters dilate around +2, two erode around -2, one sits at 0. Inter-center
/// gaps dwarf the intra-center offsets, so styles should cluster by center.
pub fn paper_shape_raters() -> Vec<RaterModel> {
    let mut raters = Vec::new();
    let mk = |rater_id: &str, center_id: &str, style: f64, offset: f64| RaterModel {
        rater_id: rater_id.into(),
        center_id: center_id.into(),
        center_style: style,
        rater_offset: offset,
        jitter_sigma: 0.25,
        flip_rate: 0.02,
    };
    raters.push(mk("rater_11", "center_1", 2.0, -0.3));
    raters.push(mk("rater_12", "center_1", 2.0, -0.1));
    raters.push(mk("rater_13", "center_1", 2.0, 0.1));
    raters.push(mk("rater_14", "center_1", 2.0, 0.3));
    raters.push(mk("rater_21", "center_2", -2.0, -0.2));
    raters.push(mk("rater_22", "center_2", -2.0, 0.2));
    raters.push(mk("rater_31", "center_3", 0.0, 0.0));
    raters
}

/// Grid used by the `paper-shape` preset.
pub fn paper_shape_geometry() -> Geometry {
    Geometry::new([64, 64, 8], [1.0, 1.0, 1.0]).expect("static geometry is valid")
}

/// Subject count used by the `paper-shape` preset.
pub const PAPER_SHAPE_SUBJECTS: usize = 20;
