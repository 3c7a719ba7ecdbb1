//! Command-line interface of the `raterlab` binary.
//!
//! One subcommand per analysis stage (`simulate`, `fuse`, `style`,
//! `cluster`, `uncertainty`, `report`) plus `pipeline`, which chains them
//! over a synthetic preset cohort. Exit codes: 0 success, 1 domain error,
//! 2 usage error.

mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::eval::{SCOPE_CENTER_PREFIX, SCOPE_GLOBAL};
use crate::fusion::{self, FusionMethod, StapleParams};
use crate::manifest::DatasetManifest;
use crate::predictor::{PrecomputedPredictor, Predictor, SubprocessPredictor};
use crate::report;
use crate::style::{style_table, ConsensusScope, StyleBasis, StyleOptions};
use crate::synth::SyntheticPredictor;
use crate::tables::{read_csv, write_csv, DiceRow, StyleRow, UncRow};
use crate::tta::TtaRanges;
use crate::uncertainty::volume_uncertainty;
use crate::volume::Volume;
use crate::{cluster, rvol};

#[derive(Debug, Parser)]
#[command(
    name = "raterlab",
    version,
    about = "Rater style, label fusion and TTA-entropy analysis for multi-rater segmentation"
)]
struct Cli {
    /// Worker threads; 0 uses all cores. RATERLAB_THREADS overrides.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Log verbosity: off, error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-rater cohort.
    Simulate(SimulateArgs),
    /// Fuse one subject's masks into a consensus volume.
    Fuse(FuseArgs),
    /// Compute the per-rater style table (bias, consistency).
    Style(StyleArgs),
    /// Summarise style clusters by center, with the Davies-Bouldin index.
    Cluster(ClusterArgs),
    /// Run the test-time-augmentation entropy harness over a cohort.
    Uncertainty(UncertaintyArgs),
    /// Join style, uncertainty and Dice tables into report.json plus plot data.
    Report(ReportArgs),
    /// Run the whole analysis end to end on a synthetic preset cohort.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Grid dimensions as x,y,z voxels.
    #[arg(long, default_value = "64,64,8")]
    geometry: String,

    /// Voxel spacing in mm as x,y,z.
    #[arg(long, default_value = "1,1,1")]
    spacing: String,

    #[arg(long, default_value_t = 20)]
    subjects: usize,

    /// JSON file with the rater models (array of RaterModel objects).
    #[arg(long)]
    raters: PathBuf,

    #[arg(long, default_value_t = 7)]
    seed: u64,

    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[arg(long)]
    manifest: PathBuf,

    #[arg(long)]
    subject: String,

    #[arg(long, value_enum)]
    method: MethodArg,

    /// Fuse only the raters of this center.
    #[arg(long, conflicts_with = "raters")]
    center: Option<String>,

    /// Fuse only these raters (comma-separated ids).
    #[arg(long)]
    raters: Option<String>,

    #[arg(long)]
    out: PathBuf,

    /// Also write the STAPLE posterior volume.
    #[arg(long)]
    posterior: Option<PathBuf>,

    /// STAPLE convergence tolerance.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,

    /// STAPLE iteration cap.
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
}

#[derive(Debug, Args)]
struct StyleArgs {
    #[arg(long)]
    manifest: PathBuf,

    /// Fusion method for the consensus reference.
    #[arg(long, value_enum)]
    consensus: MethodArg,

    /// Consensus scope: "global" or "center:<id>".
    #[arg(long, default_value = "global")]
    scope: String,

    #[arg(long)]
    out: PathBuf,

    /// Also compute the relative (consensus-normalised) columns.
    #[arg(long)]
    relative: bool,

    /// Measure per z-slice instead of per volume.
    #[arg(long)]
    slice_wise: bool,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    /// Style table produced by the `style` subcommand.
    #[arg(long)]
    style: PathBuf,

    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct UncertaintyArgs {
    #[arg(long)]
    manifest: PathBuf,

    /// Predictor: "precomputed:<dir>", "cmd:<argv>" or "synthetic:<name>".
    #[arg(long)]
    predictor: String,

    /// Monte-Carlo samples per image.
    #[arg(long, default_value_t = 10)]
    n: usize,

    #[arg(long, default_value_t = 1234)]
    seed: u64,

    /// Rotation range in degrees, symmetric about 0.
    #[arg(long, default_value_t = 10.0)]
    rot: f64,

    /// Translation range in pixels, per axis.
    #[arg(long, default_value_t = 3.0)]
    trans: f64,

    /// Scale range as a delta about 1.
    #[arg(long, default_value_t = 0.02)]
    scale: f64,

    #[arg(long)]
    out: PathBuf,

    /// Directory for per-image entropy volumes (RVOL).
    #[arg(long)]
    maps_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    style: PathBuf,

    #[arg(long)]
    uncertainty: PathBuf,

    #[arg(long)]
    dice: PathBuf,

    #[arg(long)]
    out: PathBuf,

    #[arg(long)]
    plots_dir: PathBuf,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Cohort preset; "paper-shape" is the 7-rater, 3-center configuration.
    #[arg(long, default_value = "paper-shape")]
    preset: String,

    #[arg(long, default_value_t = 7)]
    seed: u64,

    /// Monte-Carlo samples per image in the uncertainty stage.
    #[arg(long, default_value_t = 10)]
    n: usize,

    #[arg(long, default_value = "raterlab-out")]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Majority,
    Staple,
}

/// Parses argv and runs the selected command, returning the process exit
/// code instead of exiting, so tests can call it in-process.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    init_logging(&cli.log_level)?;
    init_threads(cli.threads)?;
    log::info!("resolved config: {:?}", cli.command);
    match &cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Fuse(args) => run_fuse(args),
        Command::Style(args) => run_style(args),
        Command::Cluster(args) => run_cluster(args),
        Command::Uncertainty(args) => run_uncertainty(args),
        Command::Report(args) => run_report(args),
        Command::Pipeline(args) => pipeline::run(&pipeline::PipelineConfig {
            preset: args.preset.clone(),
            seed: args.seed,
            n_samples: args.n,
            out_dir: args.out_dir.clone(),
        }),
    }
}

fn init_logging(level: &str) -> Result<()> {
    let filter = level
        .parse::<log::LevelFilter>()
        .map_err(|_| Error::InvalidInput(format!("invalid log level \"{level}\"")))?;
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp(None)
        .try_init();
    Ok(())
}

fn init_threads(cli_threads: usize) -> Result<()> {
    let n = match std::env::var("RATERLAB_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            Error::InvalidInput(format!(
                "RATERLAB_THREADS must be a nonnegative integer, got \"{v}\""
            ))
        })?,
        Err(std::env::VarError::NotPresent) => cli_threads,
        Err(std::env::VarError::NotUnicode(_)) => {
            return Err(Error::InvalidInput(
                "RATERLAB_THREADS is not valid unicode".into(),
            ))
        }
    };
    if n > 0 && rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("global thread pool already initialised; --threads ignored");
    }
    Ok(())
}

fn parse3<T: std::str::FromStr>(s: &str, what: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::InvalidInput(format!(
            "{what} needs three comma-separated values, got \"{s}\""
        )));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| {
            Error::InvalidInput(format!("invalid {what} component \"{p}\""))
        })?);
    }
    match out.try_into() {
        Ok(arr) => Ok(arr),
        Err(_) => unreachable!("length checked above"),
    }
}

fn parse_scope(s: &str) -> Result<ConsensusScope> {
    if s == "global" {
        Ok(ConsensusScope::Global)
    } else if let Some(center) = s.strip_prefix("center:") {
        if center.is_empty() {
            return Err(Error::InvalidInput("empty center id in scope".into()));
        }
        Ok(ConsensusScope::Center(center.to_string()))
    } else {
        Err(Error::InvalidInput(format!(
            "invalid scope \"{s}\"; expected \"global\" or \"center:<id>\""
        )))
    }
}

/// Builds a predictor from its CLI spec string.
pub fn parse_predictor(spec: &str) -> Result<Box<dyn Predictor>> {
    if let Some(dir) = spec.strip_prefix("precomputed:") {
        Ok(Box::new(PrecomputedPredictor::new(dir)))
    } else if let Some(cmd) = spec.strip_prefix("cmd:") {
        Ok(Box::new(SubprocessPredictor::new(cmd)?))
    } else if let Some(name) = spec.strip_prefix("synthetic:") {
        Ok(Box::new(SyntheticPredictor::parse(name)?))
    } else {
        Err(Error::InvalidInput(format!(
            "unknown predictor \"{spec}\"; expected precomputed:<dir>, cmd:<argv> or synthetic:<name>"
        )))
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let dims = parse3::<usize>(&args.geometry, "--geometry")?;
    let spacing = parse3::<f64>(&args.spacing, "--spacing")?;
    let geometry = crate::volume::Geometry::new(dims, spacing)?;

    let text = std::fs::read_to_string(&args.raters).map_err(|e| Error::io(&args.raters, e))?;
    let raters: Vec<crate::simulate::RaterModel> =
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: args.raters.clone(),
            source: e,
        })?;

    let manifest = crate::simulate::write_cohort(
        geometry,
        args.subjects,
        &raters,
        &crate::simulate::PhantomConfig::default(),
        args.seed,
        &args.out_dir,
    )?;
    println!(
        "cohort: {} subjects x {} raters -> {}",
        manifest.subjects.len(),
        raters.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn check_center_exists(manifest: &DatasetManifest, center: &str) -> Result<()> {
    if manifest.centers().iter().any(|c| c == center) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("unknown center \"{center}\"")))
    }
}

fn run_fuse(args: &FuseArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let scope = match (&args.center, &args.raters) {
        (Some(c), None) => {
            check_center_exists(&manifest, c)?;
            ConsensusScope::Center(c.clone())
        }
        (None, Some(list)) => {
            let ids: Vec<String> = list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            if ids.is_empty() {
                return Err(Error::InvalidInput("--raters lists no ids".into()));
            }
            let known = manifest.raters();
            for id in &ids {
                if !known.iter().any(|(r, _)| r == id) {
                    return Err(Error::InvalidInput(format!("unknown rater \"{id}\"")));
                }
            }
            ConsensusScope::Raters(ids)
        }
        (None, None) => ConsensusScope::Global,
        (Some(_), Some(_)) => unreachable!("clap rejects --center with --raters"),
    };

    let subject = manifest.subject(&args.subject)?;
    let k = subject
        .entries
        .iter()
        .filter(|e| scope.includes(&e.rater_id, &e.center_id))
        .count();
    let method = match args.method {
        MethodArg::Majority => FusionMethod::Majority,
        MethodArg::Staple => {
            let mut params = StapleParams::default_init(k.max(1));
            params.tol = args.tol;
            params.max_iters = args.max_iters;
            FusionMethod::Staple(Some(params))
        }
    };
    if args.posterior.is_some() && args.method == MethodArg::Majority {
        return Err(Error::InvalidInput(
            "--posterior requires --method staple".into(),
        ));
    }

    let fused = fusion::fuse_subset(
        &manifest,
        &args.subject,
        |r, c| scope.includes(r, c),
        &method,
    )?;
    if !fused.converged {
        log::warn!(
            "staple stopped unconverged after {} iterations",
            fused.iterations
        );
    }
    rvol::save_volume(&fused.consensus, &args.out)?;
    if let Some(post_path) = &args.posterior {
        let posterior = fused
            .posterior
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("no posterior produced".into()))?;
        rvol::save_volume(posterior, post_path)?;
    }
    println!(
        "consensus of {} raters ({} iterations) -> {}",
        k,
        fused.iterations,
        args.out.display()
    );
    Ok(())
}

fn run_style(args: &StyleArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let scope = parse_scope(&args.scope)?;
    if let ConsensusScope::Center(c) = &scope {
        check_center_exists(&manifest, c)?;
    }
    let opts = StyleOptions {
        method: match args.consensus {
            MethodArg::Majority => FusionMethod::Majority,
            MethodArg::Staple => FusionMethod::Staple(None),
        },
        scope,
        basis: if args.slice_wise {
            StyleBasis::Slice
        } else {
            StyleBasis::Volume
        },
        with_relative: args.relative,
    };
    let table = style_table(&manifest, &opts)?;
    write_csv(&args.out, &table.rows)?;
    println!("{} rater rows -> {}", table.rows.len(), args.out.display());
    Ok(())
}

fn run_cluster(args: &ClusterArgs) -> Result<()> {
    let rows: Vec<StyleRow> = read_csv(&args.style)?;
    let points: Vec<cluster::StylePoint> = rows
        .iter()
        .map(|r| cluster::StylePoint {
            rater_id: r.rater_id.clone(),
            center_id: r.center_id.clone(),
            coords: [r.bias, r.consistency],
        })
        .collect();
    let report = cluster::cluster_report(&points)?;
    report::write_json(&args.out, &report)?;
    println!(
        "{} clusters, db_index {:?} -> {}",
        report.n_clusters,
        report.db_index,
        args.out.display()
    );
    Ok(())
}

/// File name for a saved entropy map; scope separators become `_` so
/// consensus pseudo-rater ids stay filesystem-safe.
fn entropy_map_path(dir: &Path, subject_id: &str, scope: &str) -> PathBuf {
    dir.join(format!("{subject_id}__{}.rvol", scope.replace(':', "_")))
}

/// Runs the harness on one volume and returns its CSV row, saving the
/// entropy map when a directory is given.
pub(crate) fn uncertainty_row(
    volume: &Volume,
    predictor: &dyn Predictor,
    n: usize,
    ranges: &TtaRanges,
    seed: u64,
    scope: &str,
    image_id: &str,
    maps_dir: Option<&Path>,
) -> Result<UncRow> {
    let res = volume_uncertainty(volume, predictor, n, ranges, seed)?;
    if let Some(dir) = maps_dir {
        rvol::save_volume(&res.entropy, &entropy_map_path(dir, image_id, scope))?;
    }
    Ok(UncRow {
        rater_id: scope.to_string(),
        image_id: image_id.to_string(),
        mean_entropy_union: res.mean_union,
        mean_entropy_all: res.mean_all,
        n_samples: res.n_samples,
        seed: res.seed,
    })
}

fn run_uncertainty(args: &UncertaintyArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let ranges = TtaRanges::new(args.rot, args.trans, args.scale)?;
    let predictor = parse_predictor(&args.predictor)?;
    if let Some(dir) = &args.maps_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let maps_dir = args.maps_dir.as_deref();

    let mut rows = Vec::new();
    // Individual raters, then per-center consensuses, then the global
    // consensus, each measured with identical TTA draws (same seed).
    for (rater_id, _center) in manifest.raters() {
        for subject in &manifest.subjects {
            let Some(entry) = subject.entries.iter().find(|e| e.rater_id == rater_id) else {
                continue;
            };
            let volume = manifest.load_mask(entry)?;
            rows.push(uncertainty_row(
                &volume,
                predictor.as_ref(),
                args.n,
                &ranges,
                args.seed,
                &rater_id,
                &subject.subject_id,
                maps_dir,
            )?);
        }
    }
    for center in manifest.centers() {
        let scope = format!("{SCOPE_CENTER_PREFIX}{center}");
        for subject in &manifest.subjects {
            if !subject.entries.iter().any(|e| e.center_id == center) {
                continue;
            }
            let fused = fusion::fuse_subset(
                &manifest,
                &subject.subject_id,
                |_, c| c == center,
                &FusionMethod::Majority,
            )?;
            rows.push(uncertainty_row(
                &fused.consensus,
                predictor.as_ref(),
                args.n,
                &ranges,
                args.seed,
                &scope,
                &subject.subject_id,
                maps_dir,
            )?);
        }
    }
    for subject in &manifest.subjects {
        let fused = fusion::fuse_subset(
            &manifest,
            &subject.subject_id,
            |_, _| true,
            &FusionMethod::Majority,
        )?;
        rows.push(uncertainty_row(
            &fused.consensus,
            predictor.as_ref(),
            args.n,
            &ranges,
            args.seed,
            SCOPE_GLOBAL,
            &subject.subject_id,
            maps_dir,
        )?);
    }

    write_csv(&args.out, &rows)?;
    println!("{} uncertainty rows -> {}", rows.len(), args.out.display());
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<()> {
    let style: Vec<StyleRow> = read_csv(&args.style)?;
    let unc: Vec<UncRow> = read_csv(&args.uncertainty)?;
    let dice: Vec<DiceRow> = read_csv(&args.dice)?;
    let config = serde_json::json!({
        "command": "report",
        "style": args.style.to_string_lossy(),
        "uncertainty": args.uncertainty.to_string_lossy(),
        "dice": args.dice.to_string_lossy(),
        "out": args.out.to_string_lossy(),
        "plots_dir": args.plots_dir.to_string_lossy(),
    });
    let bundle = report::build(&style, &unc, &dice, None, &[], config);
    bundle.write_report(&args.out)?;
    bundle.write_plots(&args.plots_dir)?;
    println!(
        "report -> {} (plots in {})",
        args.out.display(),
        args.plots_dir.display()
    );
    Ok(())
}
