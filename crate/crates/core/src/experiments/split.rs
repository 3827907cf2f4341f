//! Holdout protocols: temporal, randomized k-fold over basins, and
//! leave-one-region-out.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};
use crate::catalog::{Catalog, DateRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Temporal,
    PubKfold,
    PurRegional,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Temporal => "temporal",
            SplitKind::PubKfold => "pub_kfold",
            SplitKind::PurRegional => "pur_regional",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    /// Fold number or region label; `"all"` for the temporal split.
    pub label: String,
    pub train_basins: Vec<String>,
    pub test_basins: Vec<String>,
    pub train_range: DateRange,
    pub test_range: DateRange,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

pub fn default_train_range() -> DateRange {
    DateRange::new(ymd(1985, 10, 1), ymd(1995, 9, 30))
}

pub fn default_test_range() -> DateRange {
    DateRange::new(ymd(1995, 10, 1), ymd(2005, 9, 30))
}

fn check_ranges(train: &DateRange, test: &DateRange) -> Result<()> {
    if train.days() == 0 || test.days() == 0 {
        return Err(ExperimentError::Config(format!(
            "empty date range ({train} / {test})"
        )));
    }
    Ok(())
}

impl SplitPlan {
    /// Check the invariants of the plan's kind.
    pub fn validate(&self) -> Result<()> {
        check_ranges(&self.train_range, &self.test_range)?;
        let train: BTreeSet<&String> = self.train_basins.iter().collect();
        let test: BTreeSet<&String> = self.test_basins.iter().collect();
        match self.kind {
            SplitKind::Temporal => {
                if train != test {
                    return Err(ExperimentError::Config(
                        "temporal split needs identical basin sets".into(),
                    ));
                }
                if self.train_range.overlaps(&self.test_range) {
                    return Err(ExperimentError::Config(format!(
                        "train range {} overlaps test range {}",
                        self.train_range, self.test_range
                    )));
                }
            }
            SplitKind::PubKfold | SplitKind::PurRegional => {
                if let Some(id) = train.intersection(&test).next() {
                    return Err(ExperimentError::Config(format!(
                        "basin {id} in both train and test sets"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "{} {}: {} train / {} test basins, train {}, test {}",
            self.kind.as_str(),
            self.label,
            self.train_basins.len(),
            self.test_basins.len(),
            self.train_range,
            self.test_range
        )
    }
}

/// Every basin in both sets, with disjoint train and test periods.
pub fn make_temporal_split(
    catalog: &Catalog,
    train: DateRange,
    test: DateRange,
) -> Result<SplitPlan> {
    if catalog.is_empty() {
        log::warn!("temporal split of an empty catalog");
    }
    let ids = catalog.ids();
    let plan = SplitPlan {
        kind: SplitKind::Temporal,
        label: "all".into(),
        train_basins: ids.clone(),
        test_basins: ids,
        train_range: train,
        test_range: test,
    };
    plan.validate()?;
    Ok(plan)
}

/// `k` plans whose test sets partition `basins`; sizes differ by at most one.
pub fn make_pub_kfold(
    basins: &[String],
    k: usize,
    seed: u64,
    train: DateRange,
    test: DateRange,
) -> Result<Vec<SplitPlan>> {
    let mut ids: Vec<String> = basins.to_vec();
    ids.sort();
    ids.dedup();
    if k < 2 || ids.len() < k {
        return Err(ExperimentError::TooFewBasins {
            basins: ids.len(),
            k,
        });
    }
    check_ranges(&train, &test)?;
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (q, r) = (ids.len() / k, ids.len() % k);
    let mut plans = Vec::with_capacity(k);
    let mut start = 0;
    for fold in 0..k {
        let size = q + usize::from(fold < r);
        let mut test_ids = ids[start..start + size].to_vec();
        let mut train_ids: Vec<String> = ids[..start]
            .iter()
            .chain(&ids[start + size..])
            .cloned()
            .collect();
        test_ids.sort();
        train_ids.sort();
        start += size;
        plans.push(SplitPlan {
            kind: SplitKind::PubKfold,
            label: format!("fold{}", fold + 1),
            train_basins: train_ids,
            test_basins: test_ids,
            train_range: train,
            test_range: test,
        });
    }
    Ok(plans)
}

/// One plan per region: that region is held out, all others train.
pub fn make_pur_splits(
    catalog: &Catalog,
    train: DateRange,
    test: DateRange,
) -> Result<Vec<SplitPlan>> {
    check_ranges(&train, &test)?;
    let mut regions = BTreeSet::new();
    for b in &catalog.basins {
        match &b.region {
            Some(r) if !r.is_empty() => {
                regions.insert(r.clone());
            }
            _ => return Err(ExperimentError::UnlabeledBasin(b.id.clone())),
        }
    }
    if regions.len() < 2 {
        return Err(ExperimentError::Config(format!(
            "regional holdout needs at least 2 regions, found {}",
            regions.len()
        )));
    }
    Ok(regions
        .into_iter()
        .map(|region| {
            let (test_ids, train_ids): (Vec<_>, Vec<_>) = catalog
                .basins
                .iter()
                .partition(|b| b.region.as_deref() == Some(region.as_str()));
            SplitPlan {
                kind: SplitKind::PurRegional,
                label: region,
                train_basins: train_ids.into_iter().map(|b| b.id.clone()).collect(),
                test_basins: test_ids.into_iter().map(|b| b.id.clone()).collect(),
                train_range: train,
                test_range: test,
            }
        })
        .collect())
}
