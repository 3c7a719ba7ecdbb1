//! Report assembly: joins the style, uncertainty, and Dice tables into one
//! JSON report plus the six plot-data CSV files.
//!
//! Outputs carry no timestamps, so a rerun over identical inputs writes
//! byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    consensus_comparison, ols_r2, ComparisonTable, RegressionResult, SCOPE_RATERS_AVERAGE,
};
use crate::tables::{write_csv, DiceRow, StyleRow, UncRow};
use crate::util::write_atomic;

/// Run provenance echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool: String,
    pub version: String,
    /// Entropy unit of every uncertainty number in the report.
    pub entropy_base: String,
    /// The fully resolved configuration of the run that produced this.
    pub config: serde_json::Value,
}

/// OLS fits of the per-rater scatter plots; `None` when degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressions {
    pub unc_vs_bias: Option<RegressionResult>,
    pub dice_vs_bias: Option<RegressionResult>,
}

/// Agreement between the two fusion methods over a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StapleVsMajority {
    pub n_subjects: usize,
    /// Mean fraction of voxels where the two consensuses differ.
    pub mean_voxel_disagreement: f64,
    /// Mean Dice between the two consensuses.
    pub mean_dice: f64,
}

/// The top-level JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metadata: ReportMetadata,
    pub comparison: ComparisonTable,
    pub regressions: Regressions,
    pub staple_vs_majority: Option<StapleVsMajority>,
    pub flags: Vec<String>,
}

/// Per-rater join of the three input tables.
#[derive(Debug, Clone)]
struct RaterAgg {
    rater_id: String,
    center_id: String,
    bias: f64,
    consistency: f64,
    uncertainty: Option<f64>,
    dice: Option<f64>,
}

/// A report plus the per-rater points backing the scatter plots.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    report: Report,
    raters: Vec<RaterAgg>,
}

/// Joins the tables and fits the scatter regressions. `extra_flags` lets a
/// caller surface conditions only it can see (the pipeline uses it).
pub fn build(
    style: &[StyleRow],
    unc: &[UncRow],
    dice: &[DiceRow],
    staple_vs_majority: Option<StapleVsMajority>,
    extra_flags: &[String],
    config: serde_json::Value,
) -> ReportBundle {
    let mut unc_mean: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for row in unc {
        if let Some(u) = row.mean_entropy_union {
            let slot = unc_mean.entry(row.rater_id.as_str()).or_insert((0.0, 0));
            slot.0 += u;
            slot.1 += 1;
        }
    }
    let mut dice_mean: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for row in dice {
        let slot = dice_mean.entry(row.rater_id.as_str()).or_insert((0.0, 0));
        slot.0 += row.dice;
        slot.1 += 1;
    }
    let mean = |m: &BTreeMap<&str, (f64, usize)>, k: &str| {
        m.get(k).map(|(s, n)| s / *n as f64)
    };

    let raters: Vec<RaterAgg> = style
        .iter()
        .map(|row| RaterAgg {
            rater_id: row.rater_id.clone(),
            center_id: row.center_id.clone(),
            bias: row.bias,
            consistency: row.consistency,
            uncertainty: mean(&unc_mean, &row.rater_id),
            dice: mean(&dice_mean, &row.rater_id),
        })
        .collect();

    let mut flags = extra_flags.to_vec();
    let mut fit = |name: &str, points: Vec<(f64, f64)>| -> Option<RegressionResult> {
        let (x, y): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        match ols_r2(&x, &y) {
            Ok(r) => Some(r),
            Err(e) => {
                flags.push(format!("{name} regression unavailable: {e}"));
                None
            }
        }
    };
    let unc_points: Vec<(f64, f64)> = raters
        .iter()
        .filter_map(|r| r.uncertainty.map(|u| (r.bias, u)))
        .collect();
    let dice_points: Vec<(f64, f64)> = raters
        .iter()
        .filter_map(|r| r.dice.map(|d| (r.bias, d)))
        .collect();
    let regressions = Regressions {
        unc_vs_bias: fit("uncertainty-vs-bias", unc_points),
        dice_vs_bias: fit("dice-vs-bias", dice_points),
    };

    let comparison = consensus_comparison(style, unc, dice);
    flags.extend(comparison.flags.iter().cloned());

    let report = Report {
        metadata: ReportMetadata {
            tool: "raterlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            entropy_base: "nats".into(),
            config,
        },
        comparison,
        regressions,
        staple_vs_majority,
        flags,
    };
    ReportBundle { report, raters }
}

impl ReportBundle {
    pub fn report(&self) -> &Report {
        &self.report
    }

    /// Writes report.json (pretty, newline-terminated, atomic).
    pub fn write_report(&self, path: &Path) -> Result<()> {
        write_json(path, &self.report)
    }

    /// Writes the six plot-data CSVs into `dir`.
    pub fn write_plots(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let fig1: Vec<Fig1Row> = self
            .raters
            .iter()
            .map(|r| Fig1Row {
                rater_id: r.rater_id.clone(),
                center_id: r.center_id.clone(),
                bias: r.bias,
                consistency: r.consistency,
            })
            .collect();
        write_csv(&dir.join("fig1_style.csv"), &fig1)?;

        let fig2: Vec<Fig2Row> = self
            .raters
            .iter()
            .map(|r| Fig2Row {
                rater_id: r.rater_id.clone(),
                bias: r.bias,
                uncertainty: r.uncertainty,
            })
            .collect();
        write_csv(&dir.join("fig2_unc_vs_bias.csv"), &fig2)?;

        let fig4: Vec<Fig4Row> = self
            .raters
            .iter()
            .map(|r| Fig4Row {
                rater_id: r.rater_id.clone(),
                bias: r.bias,
                dice: r.dice,
            })
            .collect();
        write_csv(&dir.join("fig4_dice_vs_bias.csv"), &fig4)?;

        let fig5: Vec<Fig5Row> = self
            .report
            .comparison
            .rows
            .iter()
            .filter(|r| r.scope == SCOPE_RATERS_AVERAGE || r.scope.starts_with("consensus:"))
            .map(|r| Fig5Row {
                scope: r.scope.clone(),
                uncertainty: r.uncertainty,
            })
            .collect();
        write_csv(&dir.join("fig5_consensus.csv"), &fig5)?;

        let mut per_center: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for r in &self.raters {
            if let Some(u) = r.uncertainty {
                let slot = per_center.entry(r.center_id.as_str()).or_insert((0.0, 0));
                slot.0 += u;
                slot.1 += 1;
            }
        }
        let centers: Vec<&String> = {
            let mut seen = BTreeMap::new();
            for r in &self.raters {
                seen.entry(&r.center_id).or_insert(());
            }
            seen.into_keys().collect()
        };
        let fig7: Vec<Fig7Row> = centers
            .iter()
            .map(|&center| {
                let consensus_scope = format!("consensus:center:{center}");
                let consensus_uncertainty = self
                    .report
                    .comparison
                    .rows
                    .iter()
                    .find(|row| row.scope == consensus_scope)
                    .and_then(|row| row.uncertainty);
                Fig7Row {
                    center_id: center.clone(),
                    mean_rater_uncertainty: per_center
                        .get(center.as_str())
                        .map(|(s, n)| s / *n as f64),
                    consensus_uncertainty,
                }
            })
            .collect();
        write_csv(&dir.join("fig7_per_center.csv"), &fig7)?;

        let table1: Vec<Table1Row> = self
            .report
            .comparison
            .rows
            .iter()
            .map(|r| Table1Row {
                scope: r.scope.clone(),
                mean_dice: r.dice,
                mean_uncertainty: r.uncertainty,
            })
            .collect();
        write_csv(&dir.join("table1_dice.csv"), &table1)?;
        Ok(())
    }
}

/// The six plot files, in the order they are written.
pub const PLOT_FILES: [&str; 6] = [
    "fig1_style.csv",
    "fig2_unc_vs_bias.csv",
    "fig4_dice_vs_bias.csv",
    "fig5_consensus.csv",
    "fig7_per_center.csv",
    "table1_dice.csv",
];

/// Serializes any value as pretty JSON with a trailing newline, atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Reads a report back; used by consumers and the test suite.
pub fn load_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Serialize, Deserialize)]
struct Fig1Row {
    rater_id: String,
    center_id: String,
    bias: f64,
    consistency: f64,
}

#[derive(Serialize, Deserialize)]
struct Fig2Row {
    rater_id: String,
    bias: f64,
    uncertainty: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Fig4Row {
    rater_id: String,
    bias: f64,
    dice: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Fig5Row {
    scope: String,
    uncertainty: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Fig7Row {
    center_id: String,
    mean_rater_uncertainty: Option<f64>,
    consensus_uncertainty: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Table1Row {
    scope: String,
    mean_dice: Option<f64>,
    mean_uncertainty: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::SCOPE_GLOBAL;

    fn style(rater: &str, center: &str, bias: f64) -> StyleRow {
        StyleRow {
            rater_id: rater.into(),
            center_id: center.into(),
            n_images: 5,
            bias,
            consistency: 1.0,
            relative_bias: None,
            relative_consistency: None,
            skipped_images: None,
        }
    }

    fn unc(scope: &str, image: &str, union: f64) -> UncRow {
        UncRow {
            rater_id: scope.into(),
            image_id: image.into(),
            mean_entropy_union: Some(union),
            mean_entropy_all: 0.01,
            n_samples: 10,
            seed: 7,
        }
    }

    fn dice(scope: &str, image: &str, d: f64) -> DiceRow {
        DiceRow {
            rater_id: scope.into(),
            image_id: image.into(),
            dice: d,
        }
    }

    fn sample_inputs() -> (Vec<StyleRow>, Vec<UncRow>, Vec<DiceRow>) {
        let styles = vec![
            style("r1", "A", -2.0),
            style("r2", "A", 0.0),
            style("r3", "B", 2.0),
        ];
        let uncs = vec![
            unc("r1", "s1", 0.10),
            unc("r1", "s2", 0.12),
            unc("r2", "s1", 0.20),
            unc("r2", "s2", 0.22),
            unc("r3", "s1", 0.30),
            unc("r3", "s2", 0.32),
            unc(SCOPE_GLOBAL, "s1", 0.15),
            unc("consensus:center:A", "s1", 0.18),
            unc("consensus:center:B", "s1", 0.28),
        ];
        let dices = vec![
            dice("r1", "s1", 0.90),
            dice("r2", "s1", 0.85),
            dice("r3", "s1", 0.80),
            dice(SCOPE_GLOBAL, "s1", 0.95),
        ];
        (styles, uncs, dices)
    }

    #[test]
    fn build_joins_tables_and_fits_regressions() {
        let (styles, uncs, dices) = sample_inputs();
        let bundle = build(&styles, &uncs, &dices, None, &[], serde_json::json!({}));
        let report = bundle.report();
        // Per-rater uncertainty means are linear in bias here, so the fit is
        // essentially perfect.
        let r = report.regressions.unc_vs_bias.as_ref().unwrap();
        assert!(r.r_squared > 0.999, "r^2 = {}", r.r_squared);
        assert_eq!(r.n, 3);
        assert!(report.regressions.dice_vs_bias.is_some());
        assert!(report.comparison.consensus_to_rater_ratio.is_some());
        assert_eq!(report.metadata.entropy_base, "nats");
    }

    #[test]
    fn degenerate_regressions_are_flagged_not_fatal() {
        let styles = vec![style("r1", "A", 1.0), style("r2", "A", 1.0)];
        let uncs = vec![unc("r1", "s1", 0.1), unc("r2", "s1", 0.2)];
        let bundle = build(&styles, &uncs, &[], None, &[], serde_json::json!({}));
        assert!(bundle.report().regressions.unc_vs_bias.is_none());
        assert!(bundle
            .report()
            .flags
            .iter()
            .any(|f| f.contains("uncertainty-vs-bias")));
    }

    #[test]
    fn plot_files_are_written_and_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let (styles, uncs, dices) = sample_inputs();
        let bundle = build(&styles, &uncs, &dices, None, &[], serde_json::json!({}));
        bundle.write_plots(dir.path()).unwrap();
        for name in PLOT_FILES {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let fig1: Vec<Fig1Row> = crate::tables::read_csv(&dir.path().join("fig1_style.csv")).unwrap();
        assert_eq!(fig1.len(), 3);
        let fig7: Vec<Fig7Row> =
            crate::tables::read_csv(&dir.path().join("fig7_per_center.csv")).unwrap();
        assert_eq!(fig7.len(), 2);
        assert_eq!(fig7[0].center_id, "A");
        assert!((fig7[0].mean_rater_uncertainty.unwrap() - 0.16).abs() < 1e-12);
        assert_eq!(fig7[0].consensus_uncertainty, Some(0.18));
    }

    #[test]
    fn report_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let (styles, uncs, dices) = sample_inputs();
        let staple = Some(StapleVsMajority {
            n_subjects: 2,
            mean_voxel_disagreement: 0.01,
            mean_dice: 0.99,
        });
        let bundle = build(
            &styles,
            &uncs,
            &dices,
            staple,
            &["note: sample flag".to_string()],
            serde_json::json!({"seed": 7}),
        );
        bundle.write_report(&path).unwrap();
        let loaded = load_report(&path).unwrap();
        assert_eq!(&loaded, bundle.report());

        // Rewriting produces identical bytes: nothing in the report depends
        // on when it was written.
        let first = std::fs::read(&path).unwrap();
        bundle.write_report(&path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }
}
