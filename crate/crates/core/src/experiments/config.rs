//! TOML experiment configuration.
//!
//! ```toml
//! name = "pur-desk"
//! forcing_variables = ["prcp"]          # empty: every non-discharge column
//! log_variables = ["prcp"]              # shifted-log before z-scoring
//! workers = 4                           # optional; default one per member
//! feature_attributes = ["aridity"]      # joined onto exported features
//!
//! [data]                                # relative to the config file
//! attributes = "attributes.csv"
//! gauges = "gauges.csv"
//! regions = "regions.csv"
//! forcing_dir = "forcing"
//! flow_dir = "flow"
//!
//! [split]
//! kind = "pur_regional"                 # temporal | pub_kfold | pur_regional
//! train_start = "1985-10-01"
//! train_end = "1995-09-30"
//! test_start = "1995-10-01"
//! test_end = "2005-09-30"
//! k = 12                                # pub_kfold only
//! fold = 3                              # optional: run a single fold (1-based)
//! region = "R1"                         # optional: run a single region
//!
//! [aliases]                             # required for 5-attr
//! slope = "slope_mean"
//! area = "area_gages2"
//! forest_fraction = "frac_forest"
//! soil_porosity = "soil_porosity"
//! max_soil_water = "max_water_content"
//!
//! [ensemble]
//! selections = ["full-attr", "5-attr", "no-attr"]
//! seeds = [1, 2, 3, 4, 5, 6]
//!
//! [[scenarios]]
//! use_fdc = false
//! [[scenarios]]
//! use_fdc = true
//! fraction = 1.0
//!
//! [model]
//! hidden = 256
//! dropout = 0.5
//! seq_len = 365
//! epochs = 50
//! batch_basins = 100
//! learning_rate = 1e-3
//! # optional: batches_per_epoch, clip_norm (1.0), warmup_days (seq_len), [model.encoder]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentError, FdcScenario, Result, SplitKind};
use crate::catalog::DateRange;
use crate::network::{EncoderConfig, InputSelection, FIVE_ATTRIBUTES};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub attributes: PathBuf,
    pub gauges: PathBuf,
    pub regions: PathBuf,
    pub forcing_dir: PathBuf,
    pub flow_dir: PathBuf,
    /// Optional `basin_id,...` table of discharge-derived signatures. Only
    /// joined onto exported features, never a model input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signatures: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub kind: SplitKind,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub fold: Option<usize>,
    #[serde(default)]
    pub region: Option<String>,
}

impl SplitConfig {
    pub fn train_range(&self) -> DateRange {
        DateRange::new(self.train_start, self.train_end)
    }

    pub fn test_range(&self) -> DateRange {
        DateRange::new(self.test_start, self.test_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub selections: Vec<InputSelection>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub hidden: usize,
    pub dropout: f64,
    pub seq_len: usize,
    pub epochs: usize,
    pub batch_basins: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub batches_per_epoch: Option<usize>,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    /// Days of forcing run through the LSTM before the evaluated range;
    /// defaults to `seq_len`.
    #[serde(default)]
    pub warmup_days: Option<usize>,
    #[serde(default)]
    pub encoder: EncoderConfig,
}

fn default_clip() -> f64 {
    1.0
}

impl ModelSettings {
    pub fn train_config(&self, seed: u64, scenario: &str) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_basins: self.batch_basins,
            batches_per_epoch: self.batches_per_epoch,
            seq_len: self.seq_len,
            learning_rate: self.learning_rate,
            seed,
            clip_norm: self.clip_norm,
            fdc_scenario: Some(scenario.to_string()),
        }
    }

    pub fn warmup(&self) -> usize {
        self.warmup_days.unwrap_or(self.seq_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub forcing_variables: Vec<String>,
    #[serde(default)]
    pub log_variables: Vec<String>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub feature_attributes: Vec<String>,
    pub data: DataPaths,
    pub split: SplitConfig,
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
    pub ensemble: EnsembleConfig,
    pub scenarios: Vec<FdcScenario>,
    pub model: ModelSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse, validate, and resolve data paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.resolve(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.name.trim().is_empty() {
            return bad("name must not be empty".into());
        }
        let (train, test) = (self.split.train_range(), self.split.test_range());
        if train.days() == 0 || test.days() == 0 {
            return bad(format!("empty date range: train {train}, test {test}"));
        }
        if self.split.kind == SplitKind::Temporal && train.overlaps(&test) {
            return bad(format!("train range {train} overlaps test range {test}"));
        }
        match (self.split.kind, self.split.k) {
            (SplitKind::PubKfold, None) => return bad("pub_kfold needs k".into()),
            (SplitKind::PubKfold, Some(k)) if k < 2 => return bad(format!("k = {k} < 2")),
            (SplitKind::PubKfold, Some(k)) => {
                if let Some(f) = self.split.fold {
                    if f == 0 || f > k {
                        return bad(format!("fold {f} outside 1..={k}"));
                    }
                }
            }
            _ => {}
        }
        if self.split.region.is_some() && self.split.kind != SplitKind::PurRegional {
            return bad("region only applies to pur_regional".into());
        }
        if self.ensemble.selections.is_empty() || self.ensemble.seeds.is_empty() {
            return bad("ensemble needs at least one selection and one seed".into());
        }
        let mut seeds = self.ensemble.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.ensemble.seeds.len() {
            return bad("ensemble seeds must be distinct".into());
        }
        let mut sels = self.ensemble.selections.clone();
        sels.sort();
        sels.dedup();
        if sels.len() != self.ensemble.selections.len() {
            return bad("ensemble selections must be distinct".into());
        }
        if self.ensemble.selections.contains(&InputSelection::FiveAttr) {
            for name in FIVE_ATTRIBUTES {
                if !self.aliases.contains_key(name) {
                    return bad(format!("5-attr selection needs an alias for {name}"));
                }
            }
        }
        if self.scenarios.is_empty() {
            return bad("at least one scenario".into());
        }
        for s in &self.scenarios {
            if !(s.fraction > 0.0 && s.fraction <= 1.0) {
                return bad(format!("fdc fraction {} outside (0, 1]", s.fraction));
            }
        }
        let m = &self.model;
        if m.hidden == 0 || m.seq_len == 0 || m.batch_basins == 0 || m.batches_per_epoch == Some(0)
        {
            return bad("model sizes must be >= 1".into());
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return bad(format!("dropout {} outside [0, 1)", m.dropout));
        }
        if !(m.learning_rate > 0.0 && m.clip_norm > 0.0) {
            return bad("learning_rate and clip_norm must be positive".into());
        }
        if self.scenarios.iter().any(|s| s.use_fdc) {
            m.encoder
                .conv_output()
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

impl DataPaths {
    pub fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.attributes,
            &mut self.gauges,
            &mut self.regions,
            &mut self.forcing_dir,
            &mut self.flow_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut self.signatures {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Same layout as [`crate::synth::write_world`] output.
    pub fn in_dir(dir: &Path) -> Self {
        DataPaths {
            attributes: dir.join("attributes.csv"),
            gauges: dir.join("gauges.csv"),
            regions: dir.join("regions.csv"),
            forcing_dir: dir.join("forcing"),
            flow_dir: dir.join("flow"),
            signatures: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
name = "t"
forcing_variables = ["prcp"]
log_variables = ["prcp"]

[data]
attributes = "attributes.csv"
gauges = "gauges.csv"
regions = "regions.csv"
forcing_dir = "forcing"
flow_dir = "flow"

[split]
kind = "pur_regional"
train_start = "2000-01-01"
train_end = "2001-12-31"
test_start = "2002-01-01"
test_end = "2003-12-29"

[ensemble]
selections = ["no-attr"]
seeds = [1]

[[scenarios]]
use_fdc = true

[model]
hidden = 8
dropout = 0.0
seq_len = 50
epochs = 1
batch_basins = 4
learning_rate = 0.01
"#;

    #[test]
    fn parse_and_defaults() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.scenarios[0].fraction, 1.0);
        assert_eq!(c.model.encoder, EncoderConfig::default());
        assert_eq!(c.model.clip_norm, 1.0);
        assert_eq!(c.model.warmup(), 50);
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            ("seeds = [1]", "seeds = [1, 1]"),
            ("selections = [\"no-attr\"]", "selections = [\"5-attr\"]"),
            ("kind = \"pur_regional\"", "kind = \"pub_kfold\""),
            ("dropout = 0.0", "dropout = 1.0"),
            ("use_fdc = true", "use_fdc = true\nfraction = 0.0"),
            ("hidden = 8", "hidden = 8\nbogus = 1"),
            (
                "test_start = \"2002-01-01\"",
                "test_start = \"2001-06-01\"\n",
            ),
        ];
        for (from, to) in cases {
            let text = SAMPLE.replace(from, to);
            let text = if from.starts_with("test_start") {
                text.replace("pur_regional", "temporal")
            } else {
                text
            };
            assert!(ExperimentConfig::from_toml(&text).is_err(), "{to}");
        }
    }

    #[test]
    fn relative_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        std::fs::write(&p, SAMPLE).unwrap();
        let c = ExperimentConfig::load(&p).unwrap();
        assert_eq!(c.data, DataPaths::in_dir(dir.path()));
    }
}
