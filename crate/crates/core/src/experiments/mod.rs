//! Holdout protocols, FDC availability scenarios, input-selection
//! ensembles and their evaluation reports.

mod config;
mod features;
mod plot;
mod report;
mod run;
mod scenario;
mod split;

pub use config::{DataPaths, EnsembleConfig, ExperimentConfig, ModelSettings, SplitConfig};
pub use features::{export_features, read_basin_columns, FeatureRow, FeatureTable};
pub use plot::{box_stats, render_boxplot_svg, BoxGroup, BoxStats};
pub use report::{
    assemble_report, ensemble_mean, read_metrics_csv, Aggregate, BasinObs, EvalReport,
    MemberOutput, MetricRow, SignatureRow, ENSEMBLE,
};
pub use run::{
    build_training_context, member_label, observed_discharge, plans_for, predict_range,
    rerun_from_manifest, run_ensemble, run_experiment, train_member, Dataset, EnsembleOutcome,
    EnsembleSpec, MemberSpec, RunEntry, RunManifest, TrainingContext, MANIFEST_FILE,
};
pub use scenario::{apply_fdc_scenario, compute_fdc_store, FdcAssignment, FdcScenario};
pub use split::{
    default_test_range, default_train_range, make_pub_kfold, make_pur_splits, make_temporal_split,
    SplitKind, SplitPlan,
};

use thiserror::Error;

use crate::catalog::CatalogError;
use crate::fdc::FdcError;
use crate::metrics::MetricsError;
use crate::network::NetworkError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{basins} basins cannot form {k} folds")]
    TooFewBasins { basins: usize, k: usize },
    #[error("basin {0} has no region label")]
    UnlabeledBasin(String),
    #[error("basin {0} is not in the catalog")]
    UnknownBasin(String),
    #[error("every ensemble member failed: {0}")]
    AllMembersFailed(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Fdc(#[from] FdcError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

/// Coarse error class, mapped to process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Runtime,
}

impl ExperimentError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ExperimentError::Config(_)
            | ExperimentError::Toml(_)
            | ExperimentError::TooFewBasins { .. } => ErrorClass::Config,
            ExperimentError::Network(NetworkError::InvalidConfig(_))
            | ExperimentError::Network(NetworkError::MissingAlias(_))
            | ExperimentError::Network(NetworkError::UnknownColumn { .. })
            | ExperimentError::Train(TrainError::InvalidConfig(_)) => ErrorClass::Config,
            ExperimentError::Data(_)
            | ExperimentError::UnlabeledBasin(_)
            | ExperimentError::UnknownBasin(_)
            | ExperimentError::Catalog(_)
            | ExperimentError::Fdc(_)
            | ExperimentError::Csv(_)
            | ExperimentError::Train(TrainError::WindowTooLong { .. })
            | ExperimentError::Train(TrainError::Data { .. }) => ErrorClass::Data,
            _ => ErrorClass::Runtime,
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;
