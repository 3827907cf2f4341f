//! FDC availability scenarios for held-out basins.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result, SplitPlan};
use crate::catalog::{Catalog, DailySeries, DateRange};
use crate::fdc::{build_availability, compute_fdc, haversine_km, migrate_fdc, Fdc, FdcError};

/// Whether the model sees FDCs and, if so, what fraction of held-out
/// basins have their own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdcScenario {
    pub use_fdc: bool,
    #[serde(default = "one")]
    pub fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl FdcScenario {
    pub const NONE: FdcScenario = FdcScenario {
        use_fdc: false,
        fraction: 1.0,
    };

    pub fn with_fraction(fraction: f64) -> Self {
        FdcScenario {
            use_fdc: true,
            fraction,
        }
    }

    /// `no-fdc`, `all-fdc`, `1-3-fdc`, `1-10-fdc`, or `fdc-<fraction>`.
    pub fn label(&self) -> String {
        if !self.use_fdc {
            return "no-fdc".into();
        }
        if self.fraction == 1.0 {
            return "all-fdc".into();
        }
        let inv = 1.0 / self.fraction;
        if (inv - inv.round()).abs() < 1e-9 {
            format!("1-{}-fdc", inv.round() as u64)
        } else {
            format!("fdc-{}", self.fraction)
        }
    }
}

/// One row of the assignment table recorded in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdcAssignment {
    pub basin_id: String,
    pub source_basin_id: String,
    pub distance_km: f64,
    /// `true` for training basins.
    pub train: bool,
}

/// FDCs over `period` for `basins`; basins with too little data are left
/// out with a warning.
pub fn compute_fdc_store(
    series: &BTreeMap<String, DailySeries>,
    basins: &[String],
    period: &DateRange,
) -> Result<BTreeMap<String, Fdc>> {
    let mut store = BTreeMap::new();
    for id in basins {
        let Some(s) = series.get(id) else {
            log::warn!("basin {id}: no series, no FDC");
            continue;
        };
        match compute_fdc(s, period) {
            Ok(f) => {
                store.insert(id.clone(), f);
            }
            Err(FdcError::InsufficientData { basin, count }) => {
                log::warn!("basin {basin}: {count} observed days in {period}, no FDC");
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(store)
}

/// FDC per basin for the plan's train and test basins.
///
/// Training basins use their own FDC. Of the test basins that have one in
/// `store`, a `fraction` (at least one) keep it; the rest take the FDC of
/// the nearest such basin in the test set. Training basins serve as donors
/// only when no test basin has an FDC at all.
pub fn apply_fdc_scenario(
    plan: &SplitPlan,
    catalog: &Catalog,
    fraction: f64,
    seed: u64,
    store: &BTreeMap<String, Fdc>,
) -> Result<(BTreeMap<String, Fdc>, Vec<FdcAssignment>)> {
    let record = |id: &String| {
        catalog
            .get(id)
            .ok_or_else(|| ExperimentError::UnknownBasin(id.clone()))
    };
    let mut assigned = BTreeMap::new();
    let mut table = Vec::new();
    for id in &plan.train_basins {
        let fdc = store.get(id).ok_or_else(|| {
            ExperimentError::Data(format!(
                "training basin {id} has no FDC from the training period"
            ))
        })?;
        assigned.insert(id.clone(), fdc.clone());
        table.push(FdcAssignment {
            basin_id: id.clone(),
            source_basin_id: id.clone(),
            distance_km: 0.0,
            train: true,
        });
    }

    let held_out: Vec<&String> = plan
        .test_basins
        .iter()
        .filter(|id| !assigned.contains_key(*id))
        .collect();
    let gauged: Vec<String> = held_out
        .iter()
        .filter(|id| store.contains_key(**id))
        .map(|s| (*s).clone())
        .collect();
    let mask = build_availability(&gauged, fraction, seed)?;
    let mut donors: Vec<(&crate::catalog::BasinRecord, &Fdc)> = Vec::new();
    for id in &gauged {
        if mask.is_available(id) {
            donors.push((record(id)?, &store[id]));
        }
    }
    if donors.is_empty() {
        log::warn!("no held-out basin has an FDC; migrating from training basins");
        for id in &plan.train_basins {
            donors.push((record(id)?, &store[id]));
        }
    }
    for id in held_out {
        let target = record(id)?;
        let fdc = migrate_fdc(target, &donors)?;
        let src = record(&fdc.source_basin_id)?;
        table.push(FdcAssignment {
            basin_id: id.clone(),
            source_basin_id: fdc.source_basin_id.clone(),
            distance_km: haversine_km(target.lat, target.lon, src.lat, src.lon),
            train: false,
        });
        assigned.insert(id.clone(), fdc);
    }
    Ok((assigned, table))
}
