//! Encoder feature export for correlation analysis.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::{ExperimentError, Result};
use crate::catalog::NormEntry;
use crate::fdc::{normalize_fdc, Fdc};
use crate::network::StreamflowModel;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub basin_id: String,
    pub features: Vec<f64>,
    pub extras: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub n_features: usize,
    pub extra_columns: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

/// Eval-mode encoder output for each basin in `basins`, in order.
pub fn export_features(
    model: &StreamflowModel,
    fdc_norm: &NormEntry,
    basins: &[String],
    fdcs: &BTreeMap<String, Fdc>,
) -> Result<FeatureTable> {
    if !model.config.use_fdc {
        return Err(ExperimentError::Config(
            "feature export needs a model trained with FDCs".into(),
        ));
    }
    let rows = basins
        .iter()
        .map(|id| {
            let fdc = fdcs
                .get(id)
                .ok_or_else(|| ExperimentError::Data(format!("basin {id} has no FDC")))?;
            Ok(FeatureRow {
                basin_id: id.clone(),
                features: model.encode(&normalize_fdc(fdc, fdc_norm))?.0,
                extras: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(FeatureTable {
        n_features: model.config.encoder.output_features,
        extra_columns: Vec::new(),
        rows,
    })
}

/// Named numeric columns of a `basin_id,...` CSV; `NA`, empty and
/// non-numeric cells are left out. Errors if a requested column is absent.
pub fn read_basin_columns(
    path: &Path,
    names: &[String],
) -> Result<Vec<(String, BTreeMap<String, f64>)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let idx = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| ExperimentError::Data(format!("{}: no column {n}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<(String, BTreeMap<String, f64>)> =
        names.iter().map(|n| (n.clone(), BTreeMap::new())).collect();
    for rec in reader.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        for (k, &i) in idx.iter().enumerate() {
            if let Some(v) = rec
                .get(i)
                .and_then(|c| c.parse::<f64>().ok())
                .filter(|v| v.is_finite())
            {
                out[k].1.insert(id.clone(), v);
            }
        }
    }
    Ok(out)
}

impl FeatureTable {
    /// Append a column; basins absent from `values` get `NA`.
    pub fn join(&mut self, name: &str, values: &BTreeMap<String, f64>) {
        self.extra_columns.push(name.to_string());
        for r in &mut self.rows {
            r.extras.push(values.get(&r.basin_id).copied());
        }
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.features[feature]).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["basin_id".to_string()];
        header.extend((1..=self.n_features).map(|i| format!("f{i:02}")));
        header.extend(self.extra_columns.iter().cloned());
        writeln!(out, "{}", header.join(","))?;
        for r in &self.rows {
            let mut cells = vec![r.basin_id.clone()];
            cells.extend(r.features.iter().map(|v| v.to_string()));
            cells.extend(
                r.extras
                    .iter()
                    .map(|v| v.map_or("NA".into(), |x| x.to_string())),
            );
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}
