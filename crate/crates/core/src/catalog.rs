//! Basin metadata, static attributes, and daily forcing/discharge series in
//! the CSV layouts below, plus normalization statistics.
//!
//! | file            | header                                 |
//! |-----------------|----------------------------------------|
//! | attributes      | `basin_id,<attr1>,<attr2>,...`         |
//! | gauges          | `basin_id,lat,lon,area_km2`            |
//! | regions         | `basin_id,region`                      |
//! | forcing (basin) | `date,<var1>,...` (ISO-8601 dates)     |
//! | flow (basin)    | `date,q_cfs`                           |

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name given to the discharge column (mm/day) in a [`DailySeries`].
pub const DISCHARGE: &str = "discharge";

/// Shift added before taking logs of precipitation and discharge, in mm/day.
pub const LOG_EPSILON: f64 = 0.1;

const CFS_TO_M3S: f64 = 0.0283168;
const SECONDS_PER_DAY: f64 = 86400.0;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: malformed row at line {line}: {msg}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("duplicate basin id {0}")]
    DuplicateBasinId(String),
    #[error("basin {basin} is missing attribute {name}")]
    MissingAttribute { basin: String, name: String },
    #[error("basin {0} has no gauge record")]
    MissingGauge(String),
    #[error("basin {basin}: {msg}")]
    InvalidGauge { basin: String, msg: String },
    #[error("{path}: date gap: {msg}")]
    DateGap { path: PathBuf, msg: String },
    #[error("basin {basin}: non-finite discharge after unit conversion on {date}")]
    UnitOverflow { basin: String, date: NaiveDate },
    #[error("variable {0} is constant over the training set")]
    DegenerateVariable(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CatalogError>;

/// Inclusive calendar date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        DateRange { start, end }
    }

    /// Number of days, 0 when `end < start`.
    pub fn days(&self) -> usize {
        ((self.end - self.start).num_days() + 1).max(0) as usize
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        d >= self.start && d <= self.end
    }

    pub fn overlaps(&self, other: &DateRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl std::fmt::Display for DateRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub area_km2: f64,
    /// Attribute values in catalog column order.
    pub attributes: Vec<(String, f64)>,
    pub region: Option<String>,
}

impl BasinRecord {
    pub fn attribute(&self, name: &str) -> Option<f64> {
        self.attributes
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub attribute_names: Vec<String>,
    pub basins: Vec<BasinRecord>,
}

impl Catalog {
    pub fn get(&self, id: &str) -> Option<&BasinRecord> {
        self.basins.iter().find(|b| b.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.basins.iter().map(|b| b.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.basins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basins.is_empty()
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    if !path.exists() {
        return Err(CatalogError::MissingFile(path.to_path_buf()));
    }
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| malformed(path, 1, e.to_string()))
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> CatalogError {
    CatalogError::MalformedRow {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

type Rows = Vec<(usize, Vec<String>)>;

/// Header plus data rows; `line` numbers are 1-based file lines.
fn read_rows(path: &Path) -> Result<(Vec<String>, Rows)> {
    let mut rdr = open_csv(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| malformed(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| malformed(path, line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(malformed(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok((header, rows))
}

fn expect_header(path: &Path, header: &[String], expected: &[&str]) -> Result<()> {
    if header.len() < expected.len() || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(malformed(
            path,
            1,
            format!("expected header starting with {expected:?}, found {header:?}"),
        ));
    }
    Ok(())
}

fn parse_f64(path: &Path, line: usize, cell: &str, what: &str) -> Result<f64> {
    cell.parse::<f64>()
        .map_err(|_| malformed(path, line, format!("cannot parse {what} from {cell:?}")))
}

/// Load basins from the attribute, gauge and region files. Basin order and
/// attribute order follow the attribute file.
pub fn load_catalog(attr_path: &Path, gauge_path: &Path, region_path: &Path) -> Result<Catalog> {
    let (header, rows) = read_rows(attr_path)?;
    expect_header(attr_path, &header, &["basin_id"])?;
    let attribute_names: Vec<String> = header[1..].to_vec();

    let (gheader, grows) = read_rows(gauge_path)?;
    expect_header(
        gauge_path,
        &gheader,
        &["basin_id", "lat", "lon", "area_km2"],
    )?;
    let mut gauges: HashMap<String, (f64, f64, f64)> = HashMap::new();
    for (line, row) in &grows {
        let lat = parse_f64(gauge_path, *line, &row[1], "lat")?;
        let lon = parse_f64(gauge_path, *line, &row[2], "lon")?;
        let area = parse_f64(gauge_path, *line, &row[3], "area_km2")?;
        if gauges.insert(row[0].clone(), (lat, lon, area)).is_some() {
            return Err(CatalogError::DuplicateBasinId(row[0].clone()));
        }
    }

    let (rheader, rrows) = read_rows(region_path)?;
    expect_header(region_path, &rheader, &["basin_id", "region"])?;
    let mut regions: HashMap<String, String> = HashMap::new();
    for (_, row) in rrows {
        if row[1].is_empty() {
            continue;
        }
        if regions.insert(row[0].clone(), row[1].clone()).is_some() {
            return Err(CatalogError::DuplicateBasinId(row[0].clone()));
        }
    }

    let mut seen = HashSet::new();
    let mut basins = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let id = row[0].clone();
        if id.is_empty() {
            return Err(malformed(attr_path, line, "empty basin_id"));
        }
        if !seen.insert(id.clone()) {
            return Err(CatalogError::DuplicateBasinId(id));
        }
        let mut attributes = Vec::with_capacity(attribute_names.len());
        for (name, cell) in attribute_names.iter().zip(&row[1..]) {
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                return Err(CatalogError::MissingAttribute {
                    basin: id,
                    name: name.clone(),
                });
            }
            attributes.push((name.clone(), parse_f64(attr_path, line, cell, name)?));
        }
        let &(lat, lon, area_km2) = gauges
            .get(&id)
            .ok_or_else(|| CatalogError::MissingGauge(id.clone()))?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(CatalogError::InvalidGauge {
                basin: id,
                msg: format!("coordinates ({lat}, {lon}) out of range"),
            });
        }
        if !(area_km2 > 0.0 && area_km2.is_finite()) {
            return Err(CatalogError::InvalidGauge {
                basin: id,
                msg: format!("area {area_km2} must be positive"),
            });
        }
        let region = regions.get(&id).cloned();
        basins.push(BasinRecord {
            id,
            lat,
            lon,
            area_km2,
            attributes,
            region,
        });
    }
    Ok(Catalog {
        attribute_names,
        basins,
    })
}

/// Contiguous daily series. `values` is row-major `[days × variables]`;
/// `mask[i]` is `true` when `values[i]` was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    pub basin_id: String,
    pub start_date: NaiveDate,
    pub variables: Vec<String>,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DailySeries {
    pub fn days(&self) -> usize {
        if self.variables.is_empty() {
            0
        } else {
            self.values.len() / self.variables.len()
        }
    }

    pub fn range(&self) -> DateRange {
        DateRange::new(
            self.start_date,
            self.start_date + chrono::Duration::days(self.days() as i64 - 1),
        )
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn date_at(&self, day: usize) -> NaiveDate {
        self.start_date + chrono::Duration::days(day as i64)
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start_date).num_days();
        (d >= 0 && (d as usize) < self.days()).then_some(d as usize)
    }

    /// Day indices `[lo, hi)` of the part of `range` covered by this series.
    pub fn day_span(&self, range: &DateRange) -> std::ops::Range<usize> {
        let own = self.range();
        let start = range.start.max(own.start);
        let end = range.end.min(own.end);
        if end < start {
            return 0..0;
        }
        let lo = (start - self.start_date).num_days() as usize;
        let hi = (end - self.start_date).num_days() as usize + 1;
        lo..hi
    }

    pub fn get(&self, day: usize, var: usize) -> Option<f64> {
        let i = day * self.variables.len() + var;
        self.mask[i].then(|| self.values[i])
    }

    /// Column values and mask over `days`.
    pub fn column(&self, var: usize, days: std::ops::Range<usize>) -> (Vec<f64>, Vec<bool>) {
        let nv = self.variables.len();
        days.map(|d| {
            let i = d * nv + var;
            (
                if self.mask[i] { self.values[i] } else { 0.0 },
                self.mask[i],
            )
        })
        .unzip()
    }

    pub fn discharge(&self, days: std::ops::Range<usize>) -> Option<(Vec<f64>, Vec<bool>)> {
        self.var_index(DISCHARGE).map(|v| self.column(v, days))
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }
}

struct DatedTable {
    start: NaiveDate,
    columns: Vec<String>,
    /// per-day row of optional values
    rows: Vec<Vec<Option<f64>>>,
}

fn read_dated(path: &Path) -> Result<DatedTable> {
    let (header, rows) = read_rows(path)?;
    expect_header(path, &header, &["date"])?;
    let mut start = None;
    let mut prev: Option<NaiveDate> = None;
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let date = parse_date(&row[0])
            .ok_or_else(|| malformed(path, line, format!("bad date {:?}", row[0])))?;
        if let Some(p) = prev {
            if date != p + chrono::Duration::days(1) {
                return Err(CatalogError::DateGap {
                    path: path.to_path_buf(),
                    msg: format!("{p} followed by {date} at line {line}"),
                });
            }
        } else {
            start = Some(date);
        }
        prev = Some(date);
        let mut vals = Vec::with_capacity(row.len() - 1);
        for cell in &row[1..] {
            if cell.is_empty()
                || cell.eq_ignore_ascii_case("nan")
                || cell.eq_ignore_ascii_case("na")
            {
                vals.push(None);
            } else {
                let v = parse_f64(path, line, cell, "value")?;
                vals.push(v.is_finite().then_some(v));
            }
        }
        out.push(vals);
    }
    let start = start.ok_or_else(|| CatalogError::DateGap {
        path: path.to_path_buf(),
        msg: "no rows".into(),
    })?;
    Ok(DatedTable {
        start,
        columns: header[1..].to_vec(),
        rows: out,
    })
}

/// Volumetric ft³/s to depth mm/day over `area_km2`.
pub fn cfs_to_mm_per_day(q_cfs: f64, area_km2: f64) -> f64 {
    q_cfs * CFS_TO_M3S * SECONDS_PER_DAY / (area_km2 * 1e6) * 1000.0
}

/// Merge a basin's forcing and flow files onto their union date range.
/// Days absent from one file are masked for that file's variables; negative
/// discharge is masked.
pub fn load_daily(
    forcing_path: &Path,
    flow_path: &Path,
    basin: &BasinRecord,
) -> Result<DailySeries> {
    let forcing = read_dated(forcing_path)?;
    let flow = read_dated(flow_path)?;
    if flow.columns != ["q_cfs"] {
        return Err(malformed(flow_path, 1, "expected header date,q_cfs"));
    }
    let f_range = DateRange::new(
        forcing.start,
        forcing.start + chrono::Duration::days(forcing.rows.len() as i64 - 1),
    );
    let q_range = DateRange::new(
        flow.start,
        flow.start + chrono::Duration::days(flow.rows.len() as i64 - 1),
    );
    if !f_range.overlaps(&q_range) {
        return Err(CatalogError::DateGap {
            path: flow_path.to_path_buf(),
            msg: format!("forcing {f_range} and flow {q_range} do not overlap"),
        });
    }
    let start = f_range.start.min(q_range.start);
    let end = f_range.end.max(q_range.end);
    let days = DateRange::new(start, end).days();
    let mut variables = forcing.columns.clone();
    variables.push(DISCHARGE.to_string());
    let nv = variables.len();
    let mut values = vec![0.0; days * nv];
    let mut mask = vec![false; days * nv];
    let f_off = (forcing.start - start).num_days() as usize;
    for (d, row) in forcing.rows.iter().enumerate() {
        for (v, cell) in row.iter().enumerate() {
            if let Some(x) = cell {
                values[(f_off + d) * nv + v] = *x;
                mask[(f_off + d) * nv + v] = true;
            }
        }
    }
    let q_off = (flow.start - start).num_days() as usize;
    for (d, row) in flow.rows.iter().enumerate() {
        let Some(q) = row[0] else { continue };
        if q < 0.0 {
            continue;
        }
        let mm = cfs_to_mm_per_day(q, basin.area_km2);
        if !mm.is_finite() {
            return Err(CatalogError::UnitOverflow {
                basin: basin.id.clone(),
                date: flow.start + chrono::Duration::days(d as i64),
            });
        }
        let i = (q_off + d) * nv + nv - 1;
        values[i] = mm;
        mask[i] = true;
    }
    Ok(DailySeries {
        basin_id: basin.id.clone(),
        start_date: start,
        variables,
        values,
        mask,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    /// `y = ln(x + LOG_EPSILON)`
    ShiftedLog,
}

impl Transform {
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::ShiftedLog => (x + LOG_EPSILON).ln(),
        }
    }

    pub fn inverse(self, y: f64) -> f64 {
        match self {
            Transform::Identity => y,
            Transform::ShiftedLog => y.exp() - LOG_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEntry {
    pub name: String,
    pub transform: Transform,
    pub center: f64,
    pub scale: f64,
}

impl NormEntry {
    /// Fit center and sample standard deviation of the transformed values.
    pub fn fit(name: &str, transform: Transform, values: &[f64]) -> Result<NormEntry> {
        let t: Vec<f64> = values.iter().map(|&x| transform.forward(x)).collect();
        let n = t.len();
        if n < 2 {
            return Err(CatalogError::DegenerateVariable(name.to_string()));
        }
        let center = t.iter().sum::<f64>() / n as f64;
        let var = t.iter().map(|y| (y - center).powi(2)).sum::<f64>() / (n - 1) as f64;
        let scale = var.sqrt();
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(CatalogError::DegenerateVariable(name.to_string()));
        }
        Ok(NormEntry {
            name: name.to_string(),
            transform,
            center,
            scale,
        })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (self.transform.forward(x) - self.center) / self.scale
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        self.transform.inverse(z * self.scale + self.center)
    }
}

/// Normalization for every series variable, every attribute, and the pooled FDC values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub variables: Vec<NormEntry>,
    pub attributes: Vec<NormEntry>,
    #[serde(default)]
    pub fdc: Option<NormEntry>,
}

/// Which basins and days feed the statistics.
#[derive(Debug, Clone)]
pub struct NormConfig<'a> {
    pub train_basins: &'a [String],
    pub train_range: DateRange,
    /// Forcing variables that get the shifted-log transform (discharge always does).
    pub log_variables: &'a [String],
}

/// Fit statistics on the training basins over the training range, unmasked entries only.
pub fn fit_norm_stats(
    catalog: &Catalog,
    series: &BTreeMap<String, DailySeries>,
    config: &NormConfig<'_>,
) -> Result<NormStats> {
    let train: Vec<&DailySeries> = config
        .train_basins
        .iter()
        .filter_map(|id| series.get(id))
        .collect();
    let variables = match train.first() {
        Some(s) => s.variables.clone(),
        None => Vec::new(),
    };
    let mut var_entries = Vec::with_capacity(variables.len());
    for name in &variables {
        let mut pooled = Vec::new();
        for s in &train {
            let v = s
                .var_index(name)
                .ok_or_else(|| CatalogError::MissingAttribute {
                    basin: s.basin_id.clone(),
                    name: name.clone(),
                })?;
            let span = s.day_span(&config.train_range);
            let (vals, mask) = s.column(v, span);
            pooled.extend(
                vals.into_iter()
                    .zip(mask)
                    .filter(|(_, m)| *m)
                    .map(|(x, _)| x),
            );
        }
        let transform = if name == DISCHARGE || config.log_variables.contains(name) {
            Transform::ShiftedLog
        } else {
            Transform::Identity
        };
        var_entries.push(NormEntry::fit(name, transform, &pooled)?);
    }
    let mut attr_entries = Vec::with_capacity(catalog.attribute_names.len());
    for name in &catalog.attribute_names {
        let vals: Vec<f64> = config
            .train_basins
            .iter()
            .filter_map(|id| catalog.get(id))
            .filter_map(|b| b.attribute(name))
            .collect();
        // A constant attribute carries no information; center it with unit scale.
        let entry = NormEntry::fit(name, Transform::Identity, &vals).unwrap_or_else(|_| {
            log::warn!("attribute {name} is constant over the training basins");
            NormEntry {
                name: name.clone(),
                transform: Transform::Identity,
                center: vals.first().copied().unwrap_or(0.0),
                scale: 1.0,
            }
        });
        attr_entries.push(entry);
    }
    Ok(NormStats {
        variables: var_entries,
        attributes: attr_entries,
        fdc: None,
    })
}

impl NormStats {
    pub fn variable(&self, name: &str) -> Option<&NormEntry> {
        self.variables.iter().find(|e| e.name == name)
    }

    pub fn attribute(&self, name: &str) -> Option<&NormEntry> {
        self.attributes.iter().find(|e| e.name == name)
    }

    /// Normalized copy of `series`; masked entries become 0 and the mask is unchanged.
    pub fn normalize_series(&self, series: &DailySeries) -> Result<DailySeries> {
        let entries: Vec<&NormEntry> = series
            .variables
            .iter()
            .map(|v| {
                self.variable(v)
                    .ok_or_else(|| CatalogError::DegenerateVariable(v.clone()))
            })
            .collect::<Result<_>>()?;
        let nv = entries.len();
        let values = series
            .values
            .iter()
            .zip(&series.mask)
            .enumerate()
            .map(|(i, (&x, &m))| if m { entries[i % nv].normalize(x) } else { 0.0 })
            .collect();
        Ok(DailySeries {
            values,
            ..series.clone()
        })
    }

    /// Inverse of [`NormStats::normalize_series`] on observed entries.
    pub fn denormalize_series(&self, series: &DailySeries) -> Result<DailySeries> {
        let entries: Vec<&NormEntry> = series
            .variables
            .iter()
            .map(|v| {
                self.variable(v)
                    .ok_or_else(|| CatalogError::DegenerateVariable(v.clone()))
            })
            .collect::<Result<_>>()?;
        let nv = entries.len();
        let values = series
            .values
            .iter()
            .zip(&series.mask)
            .enumerate()
            .map(|(i, (&z, &m))| {
                if m {
                    entries[i % nv].denormalize(z)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(DailySeries {
            values,
            ..series.clone()
        })
    }
}
