//! CSV row schemas shared between commands, plus generic readers/writers.
//!
//! Optional columns serialize as empty cells and read back as `None`, so a
//! value that is undefined for one row never blocks the rest of the table.

use std::fs::File;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::write_atomic;

/// One row of style.csv: per-rater bias and consistency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleRow {
    pub rater_id: String,
    pub center_id: String,
    pub n_images: usize,
    pub bias: f64,
    pub consistency: f64,
    pub relative_bias: Option<f64>,
    pub relative_consistency: Option<f64>,
    pub skipped_images: Option<usize>,
}

/// One row of unc.csv: per-image uncertainty scalars for one rater scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncRow {
    pub rater_id: String,
    pub image_id: String,
    pub mean_entropy_union: Option<f64>,
    pub mean_entropy_all: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// One row of dice.csv: one mask scored against its reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceRow {
    pub rater_id: String,
    pub image_id: String,
    pub dice: f64,
}

/// Serializes rows to CSV with a header line and writes atomically.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv buffer flush failed: {e}")))?;
    write_atomic(path, &bytes)
}

/// Reads a whole CSV file of one row type.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn style_rows_round_trip_with_blank_optionals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("style.csv");
        let rows = vec![
            StyleRow {
                rater_id: "r1".into(),
                center_id: "A".into(),
                n_images: 20,
                bias: -3.25,
                consistency: 1.5,
                relative_bias: Some(-0.04),
                relative_consistency: Some(0.02),
                skipped_images: Some(0),
            },
            StyleRow {
                rater_id: "r2".into(),
                center_id: "B".into(),
                n_images: 20,
                bias: 2.0,
                consistency: 0.5,
                relative_bias: None,
                relative_consistency: None,
                skipped_images: None,
            },
        ];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("rater_id,center_id,n_images,bias,consistency"));
        assert!(text.lines().nth(2).unwrap().ends_with(",,,"));
        let back: Vec<StyleRow> = read_csv(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn unc_and_dice_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let unc = vec![UncRow {
            rater_id: "consensus:global".into(),
            image_id: "sub01".into(),
            mean_entropy_union: Some(0.21),
            mean_entropy_all: 0.003,
            n_samples: 10,
            seed: 1234,
        }];
        let dice = vec![DiceRow {
            rater_id: "r1".into(),
            image_id: "sub01".into(),
            dice: 0.95,
        }];
        let unc_path = dir.path().join("unc.csv");
        let dice_path = dir.path().join("dice.csv");
        write_csv(&unc_path, &unc).unwrap();
        write_csv(&dice_path, &dice).unwrap();
        assert_eq!(read_csv::<UncRow>(&unc_path).unwrap(), unc);
        assert_eq!(read_csv::<DiceRow>(&dice_path).unwrap(), dice);
    }

    #[test]
    fn read_missing_file_names_the_path() {
        let err = read_csv::<DiceRow>(Path::new("/nonexistent/x.csv")).unwrap_err();
        assert!(err.to_string().contains("x.csv"), "{err}");
    }
}
