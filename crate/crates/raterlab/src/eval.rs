//! Evaluation primitives: Dice overlap, ordinary least squares, and the
//! consensus comparison table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tables::{DiceRow, StyleRow, UncRow};
use crate::volume::Volume;

/// Scope id under which global-consensus rows appear in unc.csv/dice.csv.
pub const SCOPE_GLOBAL: &str = "consensus:global";
/// Prefix for per-center consensus scope ids, followed by the center id.
pub const SCOPE_CENTER_PREFIX: &str = "consensus:center:";
/// Scope id of the synthesized average-over-raters comparison row.
pub const SCOPE_RATERS_AVERAGE: &str = "raters:average";

/// True when `scope` names a consensus pseudo-rater rather than a rater.
pub fn is_consensus_scope(scope: &str) -> bool {
    scope == SCOPE_GLOBAL || scope.starts_with(SCOPE_CENTER_PREFIX)
}

/// The center id of a per-center consensus scope, if it is one.
pub fn center_of_scope(scope: &str) -> Option<&str> {
    scope.strip_prefix(SCOPE_CENTER_PREFIX)
}

/// Dice overlap between two masks: 2|A∩B| / (|A| + |B|).
///
/// Two empty masks score 1.0: both agree there is nothing to segment. That
/// convention differs between tools, so downstream tables flag it.
pub fn dice(a: &Volume, b: &Volume) -> Result<f64> {
    a.check_mask()?;
    b.check_mask()?;
    a.check_same_geometry(b)?;
    let na = a.positive_count();
    let nb = b.positive_count();
    if na + nb == 0 {
        return Ok(1.0);
    }
    let intersection = a
        .values()
        .iter()
        .zip(b.values())
        .filter(|&(&x, &y)| x == 1.0 && y == 1.0)
        .count();
    Ok(2.0 * intersection as f64 / (na + nb) as f64)
}

/// Simple linear regression of y on x, with intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    /// 1 - SS_res / SS_tot, clamped to [0, 1].
    pub r_squared: f64,
    pub n: usize,
}

/// Fits y = intercept + slope * x by ordinary least squares.
///
/// Needs at least 3 points and nonzero variance in both x and y; otherwise
/// the fit is reported as undefined rather than returning a meaningless 0 or
/// 1.
pub fn ols_r2(x: &[f64], y: &[f64]) -> Result<RegressionResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "regression inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "regression needs at least 3 points, got {n}"
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "regression inputs must be finite".into(),
        ));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(Error::Undefined("zero variance in x".into()));
    }
    if syy == 0.0 {
        return Err(Error::Undefined("zero variance in y".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = yi - (intercept + slope * xi);
            r * r
        })
        .sum();
    Ok(RegressionResult {
        slope,
        intercept,
        r_squared: (1.0 - ss_res / syy).clamp(0.0, 1.0),
        n,
    })
}

/// One row of the consensus comparison: a rater, a consensus, or the
/// average-over-raters summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scope: String,
    pub center_id: Option<String>,
    pub dice: Option<f64>,
    pub uncertainty: Option<f64>,
}

/// Comparison of raters against their consensuses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    /// Global-consensus uncertainty divided by the mean single-rater
    /// uncertainty; `None` when either side is missing.
    pub consensus_to_rater_ratio: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Default)]
struct ScopeStats {
    dice_sum: f64,
    dice_n: usize,
    unc_sum: f64,
    unc_n: usize,
}

impl ScopeStats {
    fn mean_dice(&self) -> Option<f64> {
        (self.dice_n > 0).then(|| self.dice_sum / self.dice_n as f64)
    }

    fn mean_unc(&self) -> Option<f64> {
        (self.unc_n > 0).then(|| self.unc_sum / self.unc_n as f64)
    }
}

/// Builds the comparison table from the per-image CSV rows.
///
/// The scope universe is whatever appears in the uncertainty and Dice rows:
/// plain rater ids plus the consensus pseudo-raters. Uncertainty per scope is
/// the mean of the per-image union scalars; images without union voxels are
/// skipped. Missing pieces are flagged, not fatal, so a partial run still
/// produces a table.
pub fn consensus_comparison(
    style_rows: &[StyleRow],
    unc_rows: &[UncRow],
    dice_rows: &[DiceRow],
) -> ComparisonTable {
    let centers: BTreeMap<&str, &str> = style_rows
        .iter()
        .map(|r| (r.rater_id.as_str(), r.center_id.as_str()))
        .collect();

    let mut stats: BTreeMap<String, ScopeStats> = BTreeMap::new();
    for row in unc_rows {
        let s = stats.entry(row.rater_id.clone()).or_default();
        if let Some(u) = row.mean_entropy_union {
            s.unc_sum += u;
            s.unc_n += 1;
        }
    }
    for row in dice_rows {
        let s = stats.entry(row.rater_id.clone()).or_default();
        s.dice_sum += row.dice;
        s.dice_n += 1;
    }

    let mut flags = Vec::new();
    let mut rater_rows = Vec::new();
    let mut center_rows = Vec::new();
    let mut global_row = None;
    for (scope, s) in &stats {
        let row = ComparisonRow {
            scope: scope.clone(),
            center_id: if let Some(c) = center_of_scope(scope) {
                Some(c.to_string())
            } else {
                centers.get(scope.as_str()).map(|c| (*c).to_string())
            },
            dice: s.mean_dice(),
            uncertainty: s.mean_unc(),
        };
        if row.uncertainty.is_none() {
            flags.push(format!("scope {scope}: no defined uncertainty values"));
        }
        if scope == SCOPE_GLOBAL {
            global_row = Some(row);
        } else if is_consensus_scope(scope) {
            center_rows.push(row);
        } else {
            rater_rows.push(row);
        }
    }

    let rater_unc: Vec<f64> = rater_rows.iter().filter_map(|r| r.uncertainty).collect();
    let rater_dice: Vec<f64> = rater_rows.iter().filter_map(|r| r.dice).collect();
    let mean_of = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);

    let average_row = (rater_rows.len() >= 2).then(|| ComparisonRow {
        scope: SCOPE_RATERS_AVERAGE.to_string(),
        center_id: None,
        dice: mean_of(&rater_dice),
        uncertainty: mean_of(&rater_unc),
    });

    let ratio = match (&global_row, mean_of(&rater_unc)) {
        (Some(g), Some(mean_rater)) if mean_rater > 0.0 => {
            g.uncertainty.map(|gu| gu / mean_rater)
        }
        _ => None,
    };
    if global_row.is_none() {
        flags.push("no global-consensus rows; ratio undefined".into());
    }
    if ratio.is_none() && global_row.is_some() {
        flags.push("consensus-to-rater ratio undefined".into());
    }
    if rater_rows.len() < 2 {
        flags.push("fewer than 2 rater scopes; average row omitted".into());
    }

    let mut rows = rater_rows;
    rows.extend(center_rows);
    rows.extend(global_row);
    rows.extend(average_row);
    ComparisonTable {
        rows,
        consensus_to_rater_ratio: ratio,
        flags,
    }
}
