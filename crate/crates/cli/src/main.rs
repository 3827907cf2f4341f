//! `pur`: synthetic worlds, CAMELS ingest, FDCs, training, holdout
//! experiments, evaluation, encoder-feature export and box plots.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pur_core::experiments::ErrorClass;

mod commands;

use commands::CliError;

const CONFIG_SCHEMA: &str = r#"Experiment config (TOML):

  name = "pur-desk"
  forcing_variables = ["prcp"]          # empty: every non-discharge column
  log_variables = ["prcp"]              # shifted-log before z-scoring
  workers = 4                           # optional
  feature_attributes = ["aridity"]      # joined onto exported features

  [data]                                # relative to the config file
  attributes = "attributes.csv"
  gauges = "gauges.csv"
  regions = "regions.csv"
  forcing_dir = "forcing"
  flow_dir = "flow"
  signatures = "signatures.csv"         # optional, export-features only

  [split]
  kind = "pur_regional"                 # temporal | pub_kfold | pur_regional
  train_start = "1985-10-01"
  train_end = "1995-09-30"
  test_start = "1995-10-01"
  test_end = "2005-09-30"
  k = 12                                # pub_kfold only
  fold = 3                              # optional, 1-based
  region = "R1"                         # optional

  [aliases]                             # needed by the 5-attr selection
  slope = "slope_mean"
  area = "area_gages2"
  forest_fraction = "frac_forest"
  soil_porosity = "soil_porosity"
  max_soil_water = "max_water_content"

  [ensemble]
  selections = ["full-attr", "5-attr", "no-attr"]
  seeds = [1, 2, 3, 4, 5, 6]

  [[scenarios]]
  use_fdc = false
  [[scenarios]]
  use_fdc = true
  fraction = 0.1                        # share of held-out basins with their own FDC

  [model]
  hidden = 256
  dropout = 0.5
  seq_len = 365
  epochs = 30
  batch_basins = 256
  learning_rate = 1e-3
  # optional: batches_per_epoch, clip_norm (1.0), warmup_days (seq_len),
  # [model.encoder] conv = [{ out_channels, kernel, stride, pad }, ...],
  #                 pooling = { max = 2 } | "none", output_features = 20

Flags override the file."#;

#[derive(Debug, Parser)]
#[command(
    name = "pur",
    version,
    about = "FDC-informed LSTM streamflow modeling for ungauged regions"
)]
#[command(after_long_help = CONFIG_SCHEMA)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Temporal,
    Pub,
    Pur,
}

/// Split and model overrides shared by `train`, `experiment`, `eval` and `export-features`.
#[derive(Debug, Clone, Args)]
struct Overrides {
    /// Holdout protocol.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Held-out region (PUR).
    #[arg(long)]
    region: Option<String>,
    /// Number of folds (PUB).
    #[arg(long)]
    k: Option<usize>,
    /// Single fold, 1-based (PUB).
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic linear-reservoir world and a matching experiment config.
    Synth {
        #[arg(long, default_value_t = 30)]
        basins: usize,
        #[arg(long, default_value_t = 2)]
        regions: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 4 * 365)]
        days: usize,
        /// Two fixed baseflow fractions `LOW,HIGH` instead of regional drift.
        #[arg(long, value_name = "LOW,HIGH")]
        two_class: Option<String>,
        /// Also write the world in the raw CAMELS layout under `<run-dir>/camels-raw`.
        #[arg(long)]
        camels: bool,
        #[arg(long, default_value = "run")]
        run_dir: PathBuf,
    },
    /// Convert raw CAMELS files, or check a config's data and summarize it.
    Ingest {
        /// Experiment config to validate (writes `ingest.json`).
        #[arg(long, conflicts_with = "camels_root")]
        config: Option<PathBuf>,
        /// Root of an unpacked CAMELS distribution.
        #[arg(long)]
        camels_root: Option<PathBuf>,
        /// Forcing product under `basin_mean_forcing`.
        #[arg(long, default_value = "daymet", requires = "camels_root")]
        forcing: String,
        /// CSV `huc_02,region` grouping HUC2 codes into regions.
        #[arg(long, requires = "camels_root")]
        huc_regions: Option<PathBuf>,
        /// File of gauge ids (one per line) to keep.
        #[arg(long, requires = "camels_root")]
        basin_list: Option<PathBuf>,
        /// Converted dataset directory; default `<run-dir>/data`.
        #[arg(long, requires = "camels_root")]
        out: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        run_dir: PathBuf,
    },
    /// Training-period FDCs for every basin (`fdc.csv`).
    Fdc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "run")]
        run_dir: PathBuf,
    },
    /// Train one model on the first (or selected) split plan.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "full-attr")]
        selection: String,
        /// Train without FDC input.
        #[arg(long)]
        no_fdc: bool,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = "run")]
        run_dir: PathBuf,
    },
    /// Run every split plan x FDC scenario x ensemble member, or rerun a manifest.
    #[command(after_long_help = CONFIG_SCHEMA)]
    Experiment {
        #[arg(long, required_unless_present = "manifest")]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "manifest")]
        seed: Option<u64>,
        /// Re-execute a recorded run into `--run-dir`.
        #[arg(long, conflicts_with_all = ["config", "seed"])]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        workers: Option<usize>,
        /// Comma-separated input selections.
        #[arg(long, value_delimiter = ',')]
        selections: Option<Vec<String>>,
        /// Comma-separated member seeds.
        #[arg(long, value_delimiter = ',')]
        member_seeds: Option<Vec<u64>>,
        #[arg(long, default_value = "run")]
        run_dir: PathBuf,
    },
    /// Score a checkpoint on the test side of its split plan.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Needed for PUB folds and for `--fraction`.
        #[arg(long)]
        seed: Option<u64>,
        /// Share of test basins keeping their own FDC; others migrate.
        #[arg(long, requires = "seed")]
        fraction: Option<f64>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = "run")]
        run_dir: PathBuf,
    },
    /// Encoder outputs for every basin's FDC, joined with signatures.
    ExportFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "run")]
        run_dir: PathBuf,
    },
    /// Per-region SVG box plots from an experiment run directory.
    Plot {
        #[arg(long, default_value = "run")]
        run_dir: PathBuf,
        #[arg(long, default_value = "nse", value_parser = ["nse", "kge"])]
        metric: String,
        /// Another run (e.g. temporal) drawn as a `reference` box.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
        y_min: f64,
        /// Output file; default `<run-dir>/boxplot_<metric>.svg`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &CliError) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Runtime => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
