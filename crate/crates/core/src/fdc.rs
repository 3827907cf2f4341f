//! Flow duration curves: 100 exceedance percentiles per basin, their
//! normalization for the encoder, and nearest-neighbor migration to basins
//! that lack one.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{BasinRecord, DailySeries, DateRange, NormEntry, Transform};

pub const FDC_POINTS: usize = 100;
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error)]
pub enum FdcError {
    #[error("basin {basin}: only {count} observed discharge days, need {FDC_POINTS}")]
    InsufficientData { basin: String, count: usize },
    #[error("basin {0} has no discharge variable")]
    NoDischarge(String),
    #[error("no gauged basin to migrate an FDC from")]
    EmptyGaugedSet,
    #[error("availability fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("invalid FDC for basin {basin}: {msg}")]
    Invalid { basin: String, msg: String },
    #[error("FDC normalization: {0}")]
    Norm(#[from] crate::catalog::CatalogError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FdcError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fdc {
    pub basin_id: String,
    /// Discharge (mm/day) at exceedance probabilities 0.005, 0.015, ..., 0.995.
    pub values: Vec<f64>,
    pub source_basin_id: String,
    pub period: DateRange,
}

impl Fdc {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| {
            Err(FdcError::Invalid {
                basin: self.basin_id.clone(),
                msg: msg.to_string(),
            })
        };
        if self.values.len() != FDC_POINTS {
            return bad("wrong number of points");
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("values must be finite and non-negative");
        }
        if self.values.windows(2).any(|w| w[0] < w[1]) {
            return bad("values must be non-increasing");
        }
        Ok(())
    }

    pub fn is_migrated(&self) -> bool {
        self.basin_id != self.source_basin_id
    }
}

/// Exceedance probability of percentile slot `i` (0-based).
pub fn exceedance_probability(i: usize) -> f64 {
    (i as f64 + 0.5) / FDC_POINTS as f64
}

/// Empirical FDC of the observed discharge within `period`. Flows are
/// sorted descending and slot `i` takes the linearly interpolated order
/// statistic at position `p_i · (n − 1)`.
pub fn compute_fdc(series: &DailySeries, period: &DateRange) -> Result<Fdc> {
    let (flows, mask) = series
        .discharge(series.day_span(period))
        .ok_or_else(|| FdcError::NoDischarge(series.basin_id.clone()))?;
    let mut observed: Vec<f64> = flows
        .into_iter()
        .zip(mask)
        .filter(|(_, m)| *m)
        .map(|(q, _)| q)
        .collect();
    if observed.len() < FDC_POINTS {
        return Err(FdcError::InsufficientData {
            basin: series.basin_id.clone(),
            count: observed.len(),
        });
    }
    observed.sort_by(|a, b| b.total_cmp(a));
    let values = fdc_from_sorted_desc(&observed);
    let fdc = Fdc {
        basin_id: series.basin_id.clone(),
        values,
        source_basin_id: series.basin_id.clone(),
        period: *period,
    };
    fdc.validate()?;
    Ok(fdc)
}

fn fdc_from_sorted_desc(sorted: &[f64]) -> Vec<f64> {
    let last = (sorted.len() - 1) as f64;
    (0..FDC_POINTS)
        .map(|i| {
            let h = exceedance_probability(i) * last;
            let lo = h.floor() as usize;
            let frac = h - lo as f64;
            if frac == 0.0 || lo + 1 >= sorted.len() {
                sorted[lo]
            } else {
                sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
            }
        })
        .collect()
}

/// Pooled shifted-log z-score statistics over a set of training FDCs.
pub fn fit_fdc_norm<'a>(fdcs: impl IntoIterator<Item = &'a Fdc>) -> Result<NormEntry> {
    let pooled: Vec<f64> = fdcs
        .into_iter()
        .flat_map(|f| f.values.iter().copied())
        .collect();
    Ok(NormEntry::fit("fdc", Transform::ShiftedLog, &pooled)?)
}

/// Encoder input: elementwise shifted log then z-score with the pooled statistics.
pub fn normalize_fdc(fdc: &Fdc, stats: &NormEntry) -> Vec<f64> {
    fdc.values.iter().map(|&v| stats.normalize(v)).collect()
}

pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// The FDC of the gauged basin nearest to `target` by great-circle distance,
/// relabelled for `target`. A gauged target keeps its own FDC. Equal
/// distances go to the lexicographically smallest donor id.
pub fn migrate_fdc(target: &BasinRecord, gauged: &[(&BasinRecord, &Fdc)]) -> Result<Fdc> {
    if gauged.is_empty() {
        return Err(FdcError::EmptyGaugedSet);
    }
    if let Some((_, own)) = gauged.iter().find(|(b, _)| b.id == target.id) {
        return Ok((*own).clone());
    }
    let mut best: Option<(f64, &BasinRecord, &Fdc)> = None;
    for &(donor, fdc) in gauged {
        let d = haversine_km(target.lat, target.lon, donor.lat, donor.lon);
        let better = match best {
            None => true,
            Some((bd, bb, _)) => d < bd || (d == bd && donor.id < bb.id),
        };
        if better {
            best = Some((d, donor, fdc));
        }
    }
    let (_, donor, fdc) = best.expect("non-empty");
    Ok(Fdc {
        basin_id: target.id.clone(),
        values: fdc.values.clone(),
        source_basin_id: donor.id.clone(),
        period: fdc.period,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityMask {
    pub available: BTreeMap<String, bool>,
    pub fraction: f64,
    pub seed: u64,
}

impl AvailabilityMask {
    pub fn is_available(&self, id: &str) -> bool {
        self.available.get(id).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.available.values().filter(|&&v| v).count()
    }
}

/// Mark `max(1, round(fraction · N))` basins as having an FDC. The subset
/// depends only on the basin set (not its order), `fraction` and `seed`.
pub fn build_availability(basins: &[String], fraction: f64, seed: u64) -> Result<AvailabilityMask> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(FdcError::InvalidFraction(fraction));
    }
    let mut ids: Vec<String> = basins.to_vec();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    let count = if n == 0 {
        0
    } else {
        ((fraction * n as f64).round() as usize).clamp(1, n)
    };
    let mut order = ids.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let chosen: std::collections::HashSet<&String> = order.iter().take(count).collect();
    let available = ids
        .iter()
        .map(|id| (id.clone(), chosen.contains(id)))
        .collect();
    Ok(AvailabilityMask {
        available,
        fraction,
        seed,
    })
}

/// Write `basin_id,source_basin_id,p001,...,p100`.
pub fn write_fdc_csv<'a>(path: &Path, fdcs: impl IntoIterator<Item = &'a Fdc>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = String::from("basin_id,source_basin_id");
    for i in 1..=FDC_POINTS {
        header.push_str(&format!(",p{i:03}"));
    }
    writeln!(out, "{header}")?;
    for f in fdcs {
        let mut line = format!("{},{}", f.basin_id, f.source_basin_id);
        for v in &f.values {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Read an FDC export; `period` is not stored in the file and must be supplied.
pub fn read_fdc_csv(path: &Path, period: DateRange) -> Result<Vec<Fdc>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let basin_id = rec.get(0).unwrap_or_default().to_string();
        let values = rec
            .iter()
            .skip(2)
            .map(|c| {
                c.parse::<f64>().map_err(|_| FdcError::Invalid {
                    basin: basin_id.clone(),
                    msg: format!("bad value {c:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let fdc = Fdc {
            source_basin_id: rec.get(1).unwrap_or_default().to_string(),
            basin_id,
            values,
            period,
        };
        fdc.validate()?;
        out.push(fdc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::DISCHARGE;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn d0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2000, 1, 1).unwrap()
    }

    pub(crate) fn series_from(flows: &[f64], observed: &[bool]) -> DailySeries {
        DailySeries {
            basin_id: "b".into(),
            start_date: d0(),
            variables: vec![DISCHARGE.into()],
            values: flows.to_vec(),
            mask: observed.to_vec(),
        }
    }

    fn full_period(n: usize) -> DateRange {
        DateRange::new(d0(), d0() + chrono::Duration::days(n as i64 - 1))
    }

    /// Ascending-order type-7 quantile at non-exceedance 1 − p.
    fn oracle(flows: &[f64]) -> Vec<f64> {
        let mut asc = flows.to_vec();
        asc.sort_by(f64::total_cmp);
        let n = asc.len();
        (1..=100)
            .map(|i| {
                let p = (i as f64 - 0.5) / 100.0;
                let pos = (1.0 - p) * (n - 1) as f64;
                let k = pos.floor() as usize;
                let k1 = (k + 1).min(n - 1);
                asc[k] * (1.0 - (pos - k as f64)) + asc[k1] * (pos - k as f64)
            })
            .collect()
    }

    #[test]
    fn constant_series_gives_flat_curve() {
        let s = series_from(&[3.0; 1000], &[true; 1000]);
        let f = compute_fdc(&s, &full_period(1000)).unwrap();
        assert_eq!(f.values, vec![3.0; 100]);
    }

    #[test]
    fn ramp_matches_oracle() {
        let flows: Vec<f64> = (1..=1000).map(f64::from).collect();
        let s = series_from(&flows, &[true; 1000]);
        let f = compute_fdc(&s, &full_period(1000)).unwrap();
        for (a, b) in f.values.iter().zip(oracle(&flows)) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
        // highest flows first
        assert!(f.values[0] > 990.0 && f.values[99] < 11.0);
    }

    #[test]
    fn needs_one_hundred_observed_days() {
        let mut mask = vec![true; 150];
        mask[99..].iter_mut().for_each(|m| *m = false);
        let s = series_from(&[1.0; 150], &mask);
        assert!(matches!(
            compute_fdc(&s, &full_period(150)),
            Err(FdcError::InsufficientData { count: 99, .. })
        ));
    }

    #[test]
    fn masked_days_and_out_of_period_days_ignored() {
        let mut flows = vec![2.0; 300];
        let mut mask = vec![true; 300];
        flows[5] = 1e6;
        mask[5] = false;
        flows[250] = 1e6; // outside period
        let s = series_from(&flows, &mask);
        let f = compute_fdc(&s, &full_period(200)).unwrap();
        assert_eq!(f.values, vec![2.0; 100]);
    }

    fn rec(id: &str, lat: f64, lon: f64) -> BasinRecord {
        BasinRecord {
            id: id.into(),
            lat,
            lon,
            area_km2: 1.0,
            attributes: vec![],
            region: None,
        }
    }

    fn flat(id: &str, v: f64) -> Fdc {
        Fdc {
            basin_id: id.into(),
            values: vec![v; 100],
            source_basin_id: id.into(),
            period: full_period(100),
        }
    }

    #[test]
    fn migrate_self_nearest_and_tie() {
        let t = rec("t", 40.0, -100.0);
        let (fa, fb) = (flat("t", 1.0), flat("far", 2.0));
        let far = rec("far", 42.0, -100.0);
        let got = migrate_fdc(&t, &[(&t, &fa), (&far, &fb)]).unwrap();
        assert_eq!(got.source_basin_id, "t");

        // ~10 km and ~200 km north of the target
        let near = rec("near", 40.0 + 10.0 / 111.195, -100.0);
        let far = rec("far", 40.0 + 200.0 / 111.195, -100.0);
        let (fnear, ffar) = (flat("near", 5.0), flat("far", 6.0));
        let got = migrate_fdc(&t, &[(&far, &ffar), (&near, &fnear)]).unwrap();
        assert_eq!(
            (got.basin_id.as_str(), got.source_basin_id.as_str()),
            ("t", "near")
        );
        assert_eq!(got.values, vec![5.0; 100]);

        let a = rec("01", 41.0, -100.0);
        let b = rec("02", 39.0, -100.0);
        let (f1, f2) = (flat("01", 1.0), flat("02", 2.0));
        let got = migrate_fdc(&t, &[(&b, &f2), (&a, &f1)]).unwrap();
        assert_eq!(got.source_basin_id, "01");

        assert!(matches!(
            migrate_fdc(&t, &[]),
            Err(FdcError::EmptyGaugedSet)
        ));
    }

    #[test]
    fn haversine_known_distance() {
        // one degree of latitude on the 6371 km sphere
        let d = haversine_km(0.0, 0.0, 1.0, 0.0);
        assert!((d - 6371.0 * std::f64::consts::PI / 180.0).abs() < 1e-9);
        assert_eq!(haversine_km(10.0, 20.0, 10.0, 20.0), 0.0);
    }

    #[test]
    fn availability_rules() {
        let ids: Vec<String> = (0..30).map(|i| format!("{i:02}")).collect();
        let all = build_availability(&ids, 1.0, 3).unwrap();
        assert_eq!(all.count(), 30);
        let tenth = build_availability(&ids, 0.1, 3).unwrap();
        assert_eq!(tenth.count(), 3);
        let mut rev = ids.clone();
        rev.reverse();
        assert_eq!(tenth, build_availability(&rev, 0.1, 3).unwrap());
        assert_eq!(build_availability(&ids, 1.0 / 3.0, 1).unwrap().count(), 10);
        assert_eq!(build_availability(&ids[..7], 0.1, 1).unwrap().count(), 1);
        assert!(matches!(
            build_availability(&ids, 0.0, 1),
            Err(FdcError::InvalidFraction(_))
        ));
        assert!(matches!(
            build_availability(&ids, 1.5, 1),
            Err(FdcError::InvalidFraction(_))
        ));
    }

    #[test]
    fn normalized_fdc_properties() {
        let f = Fdc {
            values: (0..100).map(|i| 50.0 / (i as f64 + 1.0)).collect(),
            ..flat("x", 0.0)
        };
        let stats = fit_fdc_norm([&f, &flat("y", 0.3)]).unwrap();
        let z = normalize_fdc(&f, &stats);
        assert!(z.windows(2).all(|w| w[0] >= w[1]));
        for (zi, v) in z.iter().zip(&f.values) {
            assert!(((stats.denormalize(*zi) - v) / v).abs() < 1e-10);
        }
        let center_flow = Transform::ShiftedLog.inverse(stats.center);
        let at_center = normalize_fdc(&flat("c", center_flow), &stats);
        assert!(at_center.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fdc.csv");
        let f = Fdc {
            values: (0..100).map(|i| 1.0 / (i as f64 + 1.0)).collect(),
            source_basin_id: "donor".into(),
            ..flat("x", 0.0)
        };
        write_fdc_csv(&p, [&f]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("basin_id,source_basin_id,p001,p002,"));
        assert!(text.lines().next().unwrap().ends_with(",p100"));
        assert_eq!(read_fdc_csv(&p, f.period).unwrap(), vec![f]);
    }

    proptest! {
        #[test]
        fn permutation_invariant(flows in prop::collection::vec(0.0f64..100.0, 100..400), seed in any::<u64>()) {
            let n = flows.len();
            let a = compute_fdc(&series_from(&flows, &vec![true; n]), &full_period(n)).unwrap();
            let mut shuffled = flows.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = compute_fdc(&series_from(&shuffled, &vec![true; n]), &full_period(n)).unwrap();
            prop_assert_eq!(a.values, b.values);
        }

        #[test]
        fn scales_linearly(flows in prop::collection::vec(0.0f64..100.0, 100..300), c in 0.01f64..100.0) {
            let n = flows.len();
            let base = compute_fdc(&series_from(&flows, &vec![true; n]), &full_period(n)).unwrap();
            let scaled: Vec<f64> = flows.iter().map(|q| q * c).collect();
            let s = compute_fdc(&series_from(&scaled, &vec![true; n]), &full_period(n)).unwrap();
            for (a, b) in base.values.iter().zip(&s.values) {
                prop_assert!((a * c - b).abs() <= 1e-12 * b.abs().max(1e-300));
            }
            // powers of two scale bit-exactly
            let doubled: Vec<f64> = flows.iter().map(|q| q * 4.0).collect();
            let s4 = compute_fdc(&series_from(&doubled, &vec![true; n]), &full_period(n)).unwrap();
            for (a, b) in base.values.iter().zip(&s4.values) {
                prop_assert_eq!(a * 4.0, *b);
            }
        }
    }
}
