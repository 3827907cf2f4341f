//! Per-basin evaluation tables and their medians.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};
use crate::metrics::{acf1, baseflow_index, kge, median, nse, MetricValue, MetricsError};
use crate::network::InputSelection;

/// Observed discharge of one test basin over the test range.
#[derive(Debug, Clone, PartialEq)]
pub struct BasinObs {
    pub basin_id: String,
    pub obs: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Physical-unit predictions of one trained model for every test basin.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberOutput {
    pub label: String,
    pub selection: InputSelection,
    pub seed: u64,
    pub predictions: BTreeMap<String, Vec<f64>>,
}

pub const ENSEMBLE: &str = "ensemble";

/// Elementwise running mean. Identical inputs come back bit-for-bit.
pub fn ensemble_mean(series: &[&[f64]]) -> Vec<f64> {
    let Some(first) = series.first() else {
        return Vec::new();
    };
    let mut mean = first.to_vec();
    for (k, s) in series.iter().enumerate().skip(1) {
        let w = 1.0 / (k + 1) as f64;
        for (m, &x) in mean.iter_mut().zip(s.iter()) {
            *m += (x - *m) * w;
        }
    }
    mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub basin_id: String,
    pub member: String,
    pub nse: MetricValue,
    pub kge: MetricValue,
    pub n_obs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureRow {
    pub basin_id: String,
    pub acf1_obs: MetricValue,
    pub bfi_obs: MetricValue,
    /// Observed fraction of test-range days.
    pub coverage: f64,
    pub n_obs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub member: String,
    pub median_nse: Option<f64>,
    pub median_kge: Option<f64>,
    pub n_defined: usize,
    pub n_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub signatures: Vec<SignatureRow>,
    /// One entry per member, per selection mean, `ensemble`, and
    /// `pooled-members` (median over every member row).
    pub aggregates: Vec<Aggregate>,
    pub partial: bool,
    pub failed_members: Vec<String>,
}

fn score(obs: &BasinObs, sim: &[f64], member: &str) -> Result<MetricRow> {
    if sim.len() != obs.obs.len() {
        return Err(ExperimentError::Metrics(MetricsError::LengthMismatch {
            obs: obs.obs.len(),
            sim: sim.len(),
            mask: obs.mask.len(),
        }));
    }
    Ok(MetricRow {
        basin_id: obs.basin_id.clone(),
        member: member.to_string(),
        nse: nse(&obs.obs, &obs.mask, sim)?,
        kge: kge(&obs.obs, &obs.mask, sim)?,
        n_obs: obs.mask.iter().filter(|&&m| m).count(),
    })
}

fn aggregate(member: &str, rows: &[&MetricRow]) -> Aggregate {
    let nses: Vec<MetricValue> = rows.iter().map(|r| r.nse).collect();
    let kges: Vec<MetricValue> = rows.iter().map(|r| r.kge).collect();
    let (m_nse, n_def, n_undef) = match median(&nses) {
        Ok(s) => (Some(s.median), s.n_defined, s.n_undefined),
        Err(_) => (None, 0, nses.len()),
    };
    Aggregate {
        member: member.to_string(),
        median_nse: m_nse,
        median_kge: median(&kges).ok().map(|s| s.median),
        n_defined: n_def,
        n_undefined: n_undef,
    }
}

/// Score every member, every per-selection mean hydrograph and the full
/// ensemble mean against `obs`.
pub fn assemble_report(
    obs: &[BasinObs],
    members: &[MemberOutput],
    failed: Vec<String>,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    let missing = |m: &MemberOutput, id: &str| {
        ExperimentError::Data(format!(
            "member {} has no prediction for basin {id}",
            m.label
        ))
    };
    for m in members {
        for o in obs {
            let sim = m
                .predictions
                .get(&o.basin_id)
                .ok_or_else(|| missing(m, &o.basin_id))?;
            rows.push(score(o, sim, &m.label)?);
        }
    }
    let member_rows = rows.len();

    let mut groups: Vec<(String, Vec<&MemberOutput>)> = Vec::new();
    for sel in InputSelection::ALL {
        let ms: Vec<&MemberOutput> = members.iter().filter(|m| m.selection == sel).collect();
        if !ms.is_empty() {
            groups.push((sel.as_str().to_string(), ms));
        }
    }
    if !members.is_empty() {
        groups.push((ENSEMBLE.to_string(), members.iter().collect()));
    }
    for (label, ms) in &groups {
        for o in obs {
            let preds: Vec<&[f64]> = ms
                .iter()
                .map(|m| m.predictions[&o.basin_id].as_slice())
                .collect();
            rows.push(score(o, &ensemble_mean(&preds), label)?);
        }
    }

    let signatures = obs
        .iter()
        .map(|o| {
            let n_obs = o.mask.iter().filter(|&&m| m).count();
            Ok(SignatureRow {
                basin_id: o.basin_id.clone(),
                acf1_obs: acf1(&o.obs, &o.mask)?,
                bfi_obs: baseflow_index(&o.obs, &o.mask)?,
                coverage: if o.obs.is_empty() {
                    0.0
                } else {
                    n_obs as f64 / o.obs.len() as f64
                },
                n_obs,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut aggregates = Vec::new();
    let mut labels: Vec<&str> = members.iter().map(|m| m.label.as_str()).collect();
    labels.extend(groups.iter().map(|(l, _)| l.as_str()));
    for label in labels {
        let rs: Vec<&MetricRow> = rows.iter().filter(|r| r.member == label).collect();
        aggregates.push(aggregate(label, &rs));
    }
    let pooled: Vec<&MetricRow> = rows[..member_rows].iter().collect();
    aggregates.push(aggregate("pooled-members", &pooled));

    Ok(EvalReport {
        rows,
        signatures,
        aggregates,
        partial: !failed.is_empty(),
        failed_members: failed,
    })
}

impl EvalReport {
    pub fn aggregate(&self, member: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.member == member)
    }

    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "basin_id,member,nse,kge,n_obs")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.basin_id,
                r.member,
                r.nse.to_cell(),
                r.kge.to_cell(),
                r.n_obs
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_signatures_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "basin_id,acf1_obs,bfi_obs,coverage,n_obs")?;
        for s in &self.signatures {
            writeln!(
                out,
                "{},{},{},{},{}",
                s.basin_id,
                s.acf1_obs.to_cell(),
                s.bfi_obs.to_cell(),
                s.coverage,
                s.n_obs
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_aggregate_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            partial: bool,
            failed_members: &'a [String],
            aggregates: &'a [Aggregate],
        }
        let s = Summary {
            partial: self.partial,
            failed_members: &self.failed_members,
            aggregates: &self.aggregates,
        };
        std::fs::write(path, serde_json::to_string_pretty(&s)? + "\n")?;
        Ok(())
    }

    /// `metrics.csv`, `signatures.csv` and `aggregate.json` under `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_metrics_csv(&dir.join("metrics.csv"))?;
        self.write_signatures_csv(&dir.join("signatures.csv"))?;
        self.write_aggregate_json(&dir.join("aggregate.json"))
    }
}

/// Parse a `basin_id,member,nse,kge,n_obs` file back into rows.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let cell = |s: &str| -> Result<MetricValue> {
        if s == "NA" {
            Ok(MetricValue::Undefined(
                crate::metrics::UndefinedReason::InsufficientData,
            ))
        } else {
            s.parse::<f64>()
                .map(MetricValue::Defined)
                .map_err(|_| ExperimentError::Data(format!("bad metric cell {s:?}")))
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(ExperimentError::Data(format!(
                "{}: expected 5 columns",
                path.display()
            )));
        }
        rows.push(MetricRow {
            basin_id: rec[0].to_string(),
            member: rec[1].to_string(),
            nse: cell(&rec[2])?,
            kge: cell(&rec[3])?,
            n_obs: rec[4]
                .parse()
                .map_err(|_| ExperimentError::Data(format!("bad n_obs {:?}", &rec[4])))?,
        });
    }
    Ok(rows)
}
