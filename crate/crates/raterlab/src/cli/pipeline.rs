//! The `pipeline` subcommand: simulate → fuse → style → cluster →
//! uncertainty → report over a preset synthetic cohort, in one run.
//!
//! Everything downstream of the seed is deterministic, so rerunning with the
//! same arguments rewrites every output byte-identically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::cluster::{cluster_report, StylePoint};
use crate::error::{Error, Result};
use crate::eval::{self, SCOPE_CENTER_PREFIX, SCOPE_GLOBAL};
use crate::fusion::{fuse_subset, FusionMethod};
use crate::report::{self, StapleVsMajority};
use crate::rvol;
use crate::simulate::{
    self, paper_shape_geometry, paper_shape_raters, PhantomConfig, PAPER_SHAPE_SUBJECTS,
};
use crate::style::{style_table, StyleOptions};
use crate::synth::{self, SyntheticPredictor};
use crate::tables::{write_csv, DiceRow, UncRow};
use crate::tta::TtaRanges;
use crate::volume::Volume;

const TTA_ROT_DEG: f64 = 10.0;
const TTA_TRANS_PX: f64 = 3.0;
const TTA_SCALE_DELTA: f64 = 0.02;

pub(crate) struct PipelineConfig {
    pub preset: String,
    pub seed: u64,
    pub n_samples: usize,
    pub out_dir: PathBuf,
}

/// One subject's fused references, kept in memory across stages.
struct SubjectData {
    subject_id: String,
    truth: Volume,
    majority: Volume,
    per_center: BTreeMap<String, Volume>,
}

/// Boundary-noise amplitude for a scope: the amplitude law evaluated at the
/// scope's relative bias, shrunk by sqrt(k) for a k-rater consensus since
/// averaging k annotations suppresses their independent boundary noise.
fn scope_sigma(relative_bias: f64, k: usize) -> f64 {
    synth::sigma_for_relative_bias(relative_bias) / (k as f64).sqrt()
}

fn dice_counted(a: &Volume, b: &Volume, empty_pairs: &mut usize) -> Result<f64> {
    if a.is_empty_mask() && b.is_empty_mask() {
        *empty_pairs += 1;
    }
    eval::dice(a, b)
}

pub(crate) fn run(cfg: &PipelineConfig) -> Result<()> {
    if cfg.preset != "paper-shape" {
        return Err(Error::InvalidInput(format!(
            "unknown preset \"{}\"; available presets: paper-shape",
            cfg.preset
        )));
    }
    let out = cfg.out_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut pipeline_flags: Vec<String> = Vec::new();

    log::info!("stage 1/6: simulate cohort");
    let cohort_dir = out.join("cohort");
    let manifest = simulate::write_cohort(
        paper_shape_geometry(),
        PAPER_SHAPE_SUBJECTS,
        &paper_shape_raters(),
        &PhantomConfig::default(),
        cfg.seed,
        &cohort_dir,
    )?;
    let centers = manifest.centers();
    let mut center_sizes: BTreeMap<String, usize> = BTreeMap::new();
    for (_, center) in manifest.raters() {
        *center_sizes.entry(center).or_insert(0) += 1;
    }
    let n_raters = manifest.raters().len();

    log::info!("stage 2/6: fuse consensuses");
    let consensus_dir = out.join("consensus");
    let mut subjects_data = Vec::with_capacity(manifest.subjects.len());
    let mut disagreement_sum = 0.0f64;
    let mut staple_dice_sum = 0.0f64;
    for subject in &manifest.subjects {
        let id = subject.subject_id.as_str();
        let majority = fuse_subset(&manifest, id, |_, _| true, &FusionMethod::Majority)?;
        let staple = fuse_subset(&manifest, id, |_, _| true, &FusionMethod::Staple(None))?;
        if !staple.converged {
            pipeline_flags.push(format!(
                "staple unconverged for subject {id} after {} iterations",
                staple.iterations
            ));
        }
        save_consensus(&consensus_dir, "majority-global", id, &majority.consensus)?;
        save_consensus(&consensus_dir, "staple-global", id, &staple.consensus)?;

        let differing = majority
            .consensus
            .values()
            .iter()
            .zip(staple.consensus.values())
            .filter(|(a, b)| a != b)
            .count();
        disagreement_sum +=
            differing as f64 / majority.consensus.geometry().voxel_count() as f64;
        staple_dice_sum += eval::dice(&majority.consensus, &staple.consensus)?;

        let mut per_center = BTreeMap::new();
        for center in &centers {
            if !subject.entries.iter().any(|e| &e.center_id == center) {
                continue;
            }
            let fused = fuse_subset(&manifest, id, |_, c| c == center, &FusionMethod::Majority)?;
            save_consensus(
                &consensus_dir,
                &format!("majority-{center}"),
                id,
                &fused.consensus,
            )?;
            per_center.insert(center.clone(), fused.consensus);
        }

        subjects_data.push(SubjectData {
            subject_id: subject.subject_id.clone(),
            truth: rvol::load_volume(&simulate::truth_path(&cohort_dir, id))?,
            majority: majority.consensus,
            per_center,
        });
    }
    let n_subjects = subjects_data.len();
    let staple_vs_majority = StapleVsMajority {
        n_subjects,
        mean_voxel_disagreement: disagreement_sum / n_subjects as f64,
        mean_dice: staple_dice_sum / n_subjects as f64,
    };

    log::info!("stage 3/6: style table");
    let style_tbl = style_table(
        &manifest,
        &StyleOptions {
            method: FusionMethod::Majority,
            scope: crate::style::ConsensusScope::Global,
            basis: crate::style::StyleBasis::Volume,
            with_relative: true,
        },
    )?;
    write_csv(&out.join("style.csv"), &style_tbl.rows)?;

    log::info!("stage 4/6: cluster geometry");
    let points: Vec<StylePoint> = style_tbl
        .rows
        .iter()
        .map(|r| StylePoint {
            rater_id: r.rater_id.clone(),
            center_id: r.center_id.clone(),
            coords: [r.bias, r.consistency],
        })
        .collect();
    let clusters = cluster_report(&points)?;
    report::write_json(&out.join("cluster.json"), &clusters)?;

    log::info!("stage 5/6: uncertainty and dice");
    let ranges = TtaRanges::new(TTA_ROT_DEG, TTA_TRANS_PX, TTA_SCALE_DELTA)?;
    let mut unc_rows: Vec<UncRow> = Vec::new();
    let mut dice_rows: Vec<DiceRow> = Vec::new();
    let mut empty_pairs = 0usize;

    // Individual raters: each gets a predictor whose boundary noise follows
    // its measured relative bias, run on its own masks.
    for row in &style_tbl.rows {
        let rel = match row.relative_bias {
            Some(r) => r,
            None => {
                pipeline_flags.push(format!(
                    "rater {}: relative bias undefined; base sigma used",
                    row.rater_id
                ));
                0.0
            }
        };
        let predictor = SyntheticPredictor::noisy_boundary(scope_sigma(rel, 1))?;
        for (subject, sd) in manifest.subjects.iter().zip(&subjects_data) {
            let Some(entry) = subject.entries.iter().find(|e| e.rater_id == row.rater_id)
            else {
                continue;
            };
            let mask = manifest.load_mask(entry)?;
            unc_rows.push(super::uncertainty_row(
                &mask,
                &predictor,
                cfg.n_samples,
                &ranges,
                cfg.seed,
                &row.rater_id,
                &sd.subject_id,
                None,
            )?);
            dice_rows.push(DiceRow {
                rater_id: row.rater_id.clone(),
                image_id: sd.subject_id.clone(),
                dice: dice_counted(&mask, &sd.truth, &mut empty_pairs)?,
            });
        }
    }

    // Per-center consensuses: relative bias measured against the global
    // consensus; noise shrunk by the center's rater count.
    for center in &centers {
        let scope = format!("{SCOPE_CENTER_PREFIX}{center}");
        let k = center_sizes[center];
        let mut rels = Vec::new();
        for sd in &subjects_data {
            let Some(cv) = sd.per_center.get(center) else { continue };
            let ng = sd.majority.positive_count();
            if ng > 0 {
                rels.push((cv.positive_count() as f64 - ng as f64) / ng as f64);
            }
        }
        let rel = if rels.is_empty() {
            pipeline_flags.push(format!("{scope}: relative bias undefined; base sigma used"));
            0.0
        } else {
            rels.iter().sum::<f64>() / rels.len() as f64
        };
        let predictor = SyntheticPredictor::noisy_boundary(scope_sigma(rel, k))?;
        for sd in &subjects_data {
            let Some(volume) = sd.per_center.get(center) else { continue };
            unc_rows.push(super::uncertainty_row(
                volume,
                &predictor,
                cfg.n_samples,
                &ranges,
                cfg.seed,
                &scope,
                &sd.subject_id,
                None,
            )?);
            dice_rows.push(DiceRow {
                rater_id: scope.clone(),
                image_id: sd.subject_id.clone(),
                dice: dice_counted(volume, &sd.truth, &mut empty_pairs)?,
            });
        }
    }

    // Global consensus: zero relative bias by construction.
    let predictor = SyntheticPredictor::noisy_boundary(scope_sigma(0.0, n_raters))?;
    for sd in &subjects_data {
        unc_rows.push(super::uncertainty_row(
            &sd.majority,
            &predictor,
            cfg.n_samples,
            &ranges,
            cfg.seed,
            SCOPE_GLOBAL,
            &sd.subject_id,
            None,
        )?);
        dice_rows.push(DiceRow {
            rater_id: SCOPE_GLOBAL.to_string(),
            image_id: sd.subject_id.clone(),
            dice: dice_counted(&sd.majority, &sd.truth, &mut empty_pairs)?,
        });
    }
    if empty_pairs > 0 {
        pipeline_flags.push(format!(
            "dice: {empty_pairs} empty-vs-empty mask pairs scored 1.0"
        ));
    }
    write_csv(&out.join("unc.csv"), &unc_rows)?;
    write_csv(&out.join("dice.csv"), &dice_rows)?;

    log::info!("stage 6/6: report");
    let config = serde_json::json!({
        "command": "pipeline",
        "preset": cfg.preset,
        "seed": cfg.seed,
        "n_samples": cfg.n_samples,
        "out_dir": cfg.out_dir.to_string_lossy(),
        "subjects": n_subjects,
        "raters": n_raters,
        "consensus_method": "majority",
        "tta": {
            "rot_deg": TTA_ROT_DEG,
            "trans_px": TTA_TRANS_PX,
            "scale_delta": TTA_SCALE_DELTA,
        },
        "predictor": {
            "kind": "synthetic noisy_boundary",
            "sigma_rule": "sigma_base * exp(gamma_relative * relative_bias) / sqrt(k)",
        },
    });
    let bundle = report::build(
        &style_tbl.rows,
        &unc_rows,
        &dice_rows,
        Some(staple_vs_majority),
        &pipeline_flags,
        config,
    );
    bundle.write_report(&out.join("report.json"))?;
    bundle.write_plots(&out.join("plots"))?;

    println!(
        "pipeline complete: {} subjects, {} raters -> {}",
        n_subjects,
        n_raters,
        out.display()
    );
    Ok(())
}

fn save_consensus(dir: &Path, group: &str, subject_id: &str, volume: &Volume) -> Result<()> {
    let group_dir = dir.join(group);
    std::fs::create_dir_all(&group_dir).map_err(|e| Error::io(&group_dir, e))?;
    rvol::save_volume(volume, &group_dir.join(format!("{subject_id}.rvol")))
}
