//! raterlab quantifies rater style in multi-rater volumetric segmentation.
//!
//! The library covers the full analysis chain:
//!
//! * style metrics: per-rater volumetric bias and consistency against a
//!   consensus ([`style`]), with relative variants and slice-wise basis;
//! * label fusion: majority voting and binary STAPLE ([`fusion`]);
//! * aleatoric uncertainty: a model-agnostic test-time-augmentation entropy
//!   harness with pluggable predictors ([`uncertainty`], [`tta`],
//!   [`predictor`]);
//! * evaluation: Dice, OLS R-squared, consensus comparison tables ([`eval`]),
//!   Davies-Bouldin cluster geometry ([`cluster`]), ASSD ([`surface`]);
//! * a synthetic cohort simulator that injects known rater styles so every
//!   metric has a recoverable ground truth ([`simulate`], [`synth`]).
//!
//! The `raterlab` binary exposes each stage as a subcommand plus a
//! `pipeline` command that chains them end to end. All seeded operations are
//! deterministic: the same inputs and seed produce byte-identical outputs,
//! independent of thread count.

pub mod cli;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod manifest;
pub mod morph;
pub mod predictor;
pub mod report;
pub mod rvol;
pub mod simulate;
pub mod style;
pub mod surface;
pub mod synth;
pub mod tables;
pub mod tta;
pub mod uncertainty;
pub mod util;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Geometry, Plane, Volume, VolumeKind};
