//! Conversion of the public CAMELS distribution into the catalog layout
//! read by [`crate::catalog`].
//!
//! Expected input under `root`:
//! - `camels_*.txt`: `;`-separated attribute tables keyed by `gauge_id`
//!   (`camels_topo.txt` must provide `gauge_lat`, `gauge_lon`, `area_gages2`;
//!   `camels_name.txt` provides `huc_02`; `camels_hydro.txt` columns are
//!   discharge signatures and go to `signatures.csv` instead);
//! - `basin_mean_forcing/<source>/<huc>/<id>_lump_*forcing*.txt`: three
//!   header lines (lat, elevation, area), a column line
//!   `Year Mnth Day Hr <var>(<unit>) ...`, then whitespace-separated rows;
//! - `usgs_streamflow/<huc>/<id>_streamflow_qc.txt`: rows of
//!   `id year month day Q flag`, `Q = -999` meaning missing.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::catalog::CatalogError;

type Result<T> = std::result::Result<T, CatalogError>;

fn io_err(path: &Path, source: std::io::Error) -> CatalogError {
    CatalogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> CatalogError {
    CatalogError::MalformedRow {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Discharge-derived signatures: written to `signatures.csv`, not used as inputs.
const SIGNATURE_TABLE: &str = "camels_hydro.txt";

/// Columns that describe the gauge rather than the catchment.
const NON_ATTRIBUTES: [&str; 5] = ["gauge_id", "gauge_lat", "gauge_lon", "huc_02", "gauge_name"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionSummary {
    pub basins: Vec<String>,
    pub attribute_columns: Vec<String>,
    pub signature_columns: Vec<String>,
    /// Numeric columns left out because some basin has a non-finite value.
    pub dropped_columns: Vec<String>,
    pub forcing_variables: Vec<String>,
    pub regions: BTreeMap<String, usize>,
}

struct Table {
    columns: Vec<String>,
    rows: BTreeMap<String, Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(path, 1, "empty file"))?;
    let columns: Vec<String> = header.split(';').map(|c| c.trim().to_string()).collect();
    if columns.first().map(String::as_str) != Some("gauge_id") {
        return Err(malformed(path, 1, "first column must be gauge_id"));
    }
    let mut rows = BTreeMap::new();
    for (i, line) in lines {
        let cells: Vec<String> = line.split(';').map(|c| c.trim().to_string()).collect();
        if cells.len() != columns.len() {
            return Err(malformed(
                path,
                i + 1,
                format!("{} cells, expected {}", cells.len(), columns.len()),
            ));
        }
        rows.insert(normalize_id(&cells[0]), cells);
    }
    Ok(Table { columns, rows })
}

/// Gauge ids are 8-digit USGS numbers; some files drop the leading zero.
fn normalize_id(id: &str) -> String {
    format!("{:0>8}", id.trim())
}

fn find_file(dir: &Path, pred: &dyn Fn(&str) -> bool) -> Result<Option<PathBuf>> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Ok(None);
    };
    let mut entries: Vec<_> = entries.filter_map(|e| e.ok()).map(|e| e.path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            if let Some(found) = find_file(&p, pred)? {
                return Ok(Some(found));
            }
        } else if p.file_name().and_then(|n| n.to_str()).is_some_and(pred) {
            return Ok(Some(p));
        }
    }
    Ok(None)
}

fn date(path: &Path, line: usize, y: &str, m: &str, d: &str) -> Result<NaiveDate> {
    let p = |s: &str| {
        s.parse::<u32>()
            .map_err(|_| malformed(path, line, format!("bad date field {s:?}")))
    };
    NaiveDate::from_ymd_opt(p(y)? as i32, p(m)?, p(d)?)
        .ok_or_else(|| malformed(path, line, "invalid date"))
}

/// Write `rows` as a contiguous daily CSV, filling gaps with empty cells.
fn write_daily(
    path: &Path,
    header: &str,
    width: usize,
    rows: &[(NaiveDate, Vec<String>)],
) -> Result<()> {
    let mut out =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    let w = |out: &mut std::io::BufWriter<std::fs::File>, s: String| {
        writeln!(out, "{s}").map_err(|e| io_err(path, e))
    };
    w(&mut out, header.to_string())?;
    let mut prev: Option<NaiveDate> = None;
    for (d, cells) in rows {
        if let Some(p) = prev {
            if *d <= p {
                return Err(CatalogError::DateGap {
                    path: path.to_path_buf(),
                    msg: format!("{d} does not follow {p}"),
                });
            }
            let mut gap = p.succ_opt().expect("date in range");
            while gap < *d {
                w(&mut out, format!("{gap}{}", ",".repeat(width)))?;
                gap = gap.succ_opt().expect("date in range");
            }
        }
        w(&mut out, format!("{d},{}", cells.join(",")))?;
        prev = Some(*d);
    }
    out.flush().map_err(|e| io_err(path, e))
}

fn convert_forcing(src: &Path, dst: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(src).map_err(|e| io_err(src, e))?;
    let lines: Vec<&str> = text.lines().collect();
    let header = lines
        .get(3)
        .ok_or_else(|| malformed(src, 4, "missing column line"))?;
    let cols: Vec<&str> = header.split_whitespace().collect();
    if cols.len() < 5 || !cols[0].eq_ignore_ascii_case("year") {
        return Err(malformed(src, 4, "expected Year Mnth Day Hr ..."));
    }
    let vars: Vec<String> = cols[4..]
        .iter()
        .map(|c| c.split('(').next().unwrap_or(c).to_lowercase())
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(4) {
        let cells: Vec<&str> = line.split_whitespace().collect();
        if cells.is_empty() {
            continue;
        }
        if cells.len() != cols.len() {
            return Err(malformed(src, i + 1, "wrong number of columns"));
        }
        let d = date(src, i + 1, cells[0], cells[1], cells[2])?;
        let vals = cells[4..]
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map(|v| {
                        if v.is_finite() {
                            v.to_string()
                        } else {
                            String::new()
                        }
                    })
                    .map_err(|_| malformed(src, i + 1, format!("bad value {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((d, vals));
    }
    write_daily(dst, &format!("date,{}", vars.join(",")), vars.len(), &rows)?;
    Ok(vars)
}

fn convert_flow(src: &Path, dst: &Path) -> Result<()> {
    let text = std::fs::read_to_string(src).map_err(|e| io_err(src, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cells: Vec<&str> = line.split_whitespace().collect();
        if cells.is_empty() {
            continue;
        }
        if cells.len() < 5 {
            return Err(malformed(src, i + 1, "expected id year month day Q [flag]"));
        }
        let d = date(src, i + 1, cells[1], cells[2], cells[3])?;
        let q: f64 = cells[4]
            .parse()
            .map_err(|_| malformed(src, i + 1, format!("bad discharge {:?}", cells[4])))?;
        let cell = if q < 0.0 || !q.is_finite() {
            String::new()
        } else {
            q.to_string()
        };
        rows.push((d, vec![cell]));
    }
    write_daily(dst, "date,q_cfs", 1, &rows)
}

/// Convert CAMELS under `root` into `attributes.csv`, `gauges.csv`,
/// `regions.csv`, `forcing/<id>.csv` and `flow/<id>.csv` under `out`.
///
/// `forcing_source` picks the `basin_mean_forcing` subdirectory (`daymet`,
/// `maurer`, `nldas`). Regions come from `huc_regions` (HUC2 code to region
/// label) or default to `HUC<code>`. `only` restricts the basin set.
pub fn convert_camels(
    root: &Path,
    out: &Path,
    forcing_source: &str,
    huc_regions: Option<&BTreeMap<String, String>>,
    only: Option<&[String]>,
) -> Result<ConversionSummary> {
    let mut tables = Vec::new();
    let mut names: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| io_err(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("camels_") && n.ends_with(".txt"))
        })
        .collect();
    names.sort();
    for p in &names {
        tables.push((p.clone(), read_table(p)?));
    }
    let topo = root.join("camels_topo.txt");
    let (_, topo_table) = tables
        .iter()
        .find(|(p, _)| *p == topo)
        .ok_or_else(|| CatalogError::MissingFile(topo.clone()))?;

    let mut basins: Vec<String> = topo_table.rows.keys().cloned().collect();
    if let Some(only) = only {
        let keep: BTreeSet<String> = only.iter().map(|s| normalize_id(s)).collect();
        basins.retain(|b| keep.contains(b));
    }
    if basins.is_empty() {
        return Err(CatalogError::MissingGauge("no basins selected".into()));
    }

    // Merge every table's columns, keeping those numeric for all selected basins.
    let mut columns: Vec<String> = Vec::new();
    let mut signature_names: BTreeSet<String> = BTreeSet::new();
    let mut values: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for (path, t) in &tables {
        for (ci, c) in t.columns.iter().enumerate().skip(1) {
            if values.contains_key(c) {
                continue;
            }
            let mut col = BTreeMap::new();
            for b in &basins {
                let row = t
                    .rows
                    .get(b)
                    .ok_or_else(|| CatalogError::MissingAttribute {
                        basin: b.clone(),
                        name: format!("row in {}", path.display()),
                    })?;
                col.insert(b.clone(), row[ci].clone());
            }
            if path.file_name().and_then(|n| n.to_str()) == Some(SIGNATURE_TABLE) {
                signature_names.insert(c.clone());
            }
            columns.push(c.clone());
            values.insert(c.clone(), col);
        }
    }
    let get = |col: &str, b: &str| -> Result<String> {
        values
            .get(col)
            .and_then(|c| c.get(b))
            .cloned()
            .ok_or_else(|| CatalogError::MissingAttribute {
                basin: b.to_string(),
                name: col.to_string(),
            })
    };
    let mut attribute_columns = Vec::new();
    let mut signature_columns = Vec::new();
    let mut dropped = Vec::new();
    for c in &columns {
        if NON_ATTRIBUTES.contains(&c.as_str()) {
            continue;
        }
        let parsed: Vec<Option<f64>> = values[c].values().map(|v| v.parse::<f64>().ok()).collect();
        if parsed.iter().all(|v| v.is_none()) {
            continue;
        }
        if signature_names.contains(c) {
            signature_columns.push(c.clone());
        } else if parsed.iter().all(|v| v.is_some_and(f64::is_finite)) {
            attribute_columns.push(c.clone());
        } else {
            dropped.push(c.clone());
        }
    }

    std::fs::create_dir_all(out.join("forcing")).map_err(|e| io_err(out, e))?;
    std::fs::create_dir_all(out.join("flow")).map_err(|e| io_err(out, e))?;
    let mut attrs = format!("basin_id,{}\n", attribute_columns.join(","));
    let mut signatures = format!("basin_id,{}\n", signature_columns.join(","));
    let mut gauges = String::from("basin_id,lat,lon,area_km2\n");
    let mut regions_csv = String::from("basin_id,region\n");
    let mut region_counts = BTreeMap::new();
    let mut forcing_variables: Option<Vec<String>> = None;
    for b in &basins {
        let cells: Vec<String> = attribute_columns
            .iter()
            .map(|c| get(c, b))
            .collect::<Result<_>>()?;
        attrs.push_str(&format!("{b},{}\n", cells.join(",")));
        let sig: Vec<String> = signature_columns
            .iter()
            .map(|c| {
                let v = get(c, b)?;
                Ok(if v.parse::<f64>().is_ok_and(f64::is_finite) {
                    v
                } else {
                    "NA".into()
                })
            })
            .collect::<Result<_>>()?;
        signatures.push_str(&format!("{b},{}\n", sig.join(",")));
        gauges.push_str(&format!(
            "{b},{},{},{}\n",
            get("gauge_lat", b)?,
            get("gauge_lon", b)?,
            get("area_gages2", b)?
        ));
        let region = match get("huc_02", b) {
            Ok(h) => {
                let h = format!("{:0>2}", h);
                match huc_regions {
                    Some(map) => {
                        map.get(&h)
                            .cloned()
                            .ok_or_else(|| CatalogError::MissingAttribute {
                                basin: b.clone(),
                                name: format!("region for HUC {h}"),
                            })?
                    }
                    None => format!("HUC{h}"),
                }
            }
            Err(_) => String::new(),
        };
        *region_counts.entry(region.clone()).or_insert(0) += 1;
        regions_csv.push_str(&format!("{b},{region}\n"));

        let forcing_dir = root.join("basin_mean_forcing").join(forcing_source);
        let fsrc = find_file(&forcing_dir, &|n: &str| {
            n.starts_with(b.as_str()) && n.contains("forcing")
        })?
        .ok_or_else(|| {
            CatalogError::MissingFile(forcing_dir.join(format!("{b}_lump_*forcing*.txt")))
        })?;
        let vars = convert_forcing(&fsrc, &out.join("forcing").join(format!("{b}.csv")))?;
        match &forcing_variables {
            None => forcing_variables = Some(vars),
            Some(v) if *v != vars => {
                return Err(malformed(
                    &fsrc,
                    4,
                    "forcing columns differ from other basins",
                ));
            }
            _ => {}
        }
        let flow_dir = root.join("usgs_streamflow");
        let qsrc = find_file(&flow_dir, &|n: &str| {
            n.starts_with(b.as_str()) && n.contains("streamflow")
        })?
        .ok_or_else(|| {
            CatalogError::MissingFile(flow_dir.join(format!("{b}_streamflow_qc.txt")))
        })?;
        convert_flow(&qsrc, &out.join("flow").join(format!("{b}.csv")))?;
    }
    let write = |name: &str, s: &str| {
        std::fs::write(out.join(name), s).map_err(|e| io_err(&out.join(name), e))
    };
    write("attributes.csv", &attrs)?;
    write("gauges.csv", &gauges)?;
    write("regions.csv", &regions_csv)?;
    if !signature_columns.is_empty() {
        write("signatures.csv", &signatures)?;
    }
    Ok(ConversionSummary {
        basins,
        attribute_columns,
        signature_columns,
        dropped_columns: dropped,
        forcing_variables: forcing_variables.unwrap_or_default(),
        regions: region_counts,
    })
}
