//! Hydrologic skill scores (NSE, KGE) and flow signatures (lag-1
//! autocorrelation, baseflow index).
//!
//! Every function takes an observation slice plus an observed/missing mask
//! (`true` = observed). Masked entries are skipped entirely. Scores that are
//! mathematically undefined come back as [`MetricValue::Undefined`] with a
//! reason rather than NaN.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: obs {obs}, sim {sim}, mask {mask}")]
    LengthMismatch { obs: usize, sim: usize, mask: usize },
    #[error("negative flow {value} at index {index}")]
    NegativeFlow { index: usize, value: f64 },
    #[error("no defined values to aggregate")]
    AllUndefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UndefinedReason {
    ZeroVarianceObs,
    ZeroMeanObs,
    InsufficientData,
    AllMasked,
}

impl UndefinedReason {
    pub fn as_str(self) -> &'static str {
        match self {
            UndefinedReason::ZeroVarianceObs => "zero-variance-obs",
            UndefinedReason::ZeroMeanObs => "zero-mean-obs",
            UndefinedReason::InsufficientData => "insufficient-data",
            UndefinedReason::AllMasked => "all-masked",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricValue {
    Defined(f64),
    Undefined(UndefinedReason),
}

impl MetricValue {
    pub fn value(self) -> Option<f64> {
        match self {
            MetricValue::Defined(v) => Some(v),
            MetricValue::Undefined(_) => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, MetricValue::Defined(_))
    }

    /// CSV cell: shortest round-trip float, or `NA`.
    pub fn to_cell(self) -> String {
        match self {
            MetricValue::Defined(v) => format!("{v}"),
            MetricValue::Undefined(_) => "NA".to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn check_lengths(obs: &[f64], mask: &[bool], sim: &[f64]) -> Result<()> {
    if obs.len() != sim.len() || obs.len() != mask.len() {
        return Err(MetricsError::LengthMismatch {
            obs: obs.len(),
            sim: sim.len(),
            mask: mask.len(),
        });
    }
    Ok(())
}

/// Unmasked (obs, sim) pairs, or the reason there are too few of them.
fn observed_pairs(
    obs: &[f64],
    mask: &[bool],
    sim: &[f64],
) -> std::result::Result<(Vec<f64>, Vec<f64>), UndefinedReason> {
    let (o, s): (Vec<f64>, Vec<f64>) = obs
        .iter()
        .zip(sim)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&o, &s), _)| (o, s))
        .unzip();
    match o.len() {
        0 => Err(UndefinedReason::AllMasked),
        1 => Err(UndefinedReason::InsufficientData),
        _ => Ok((o, s)),
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Nash–Sutcliffe efficiency over unmasked entries.
pub fn nse(obs: &[f64], mask: &[bool], sim: &[f64]) -> Result<MetricValue> {
    check_lengths(obs, mask, sim)?;
    let (o, s) = match observed_pairs(obs, mask, sim) {
        Ok(p) => p,
        Err(reason) => return Ok(MetricValue::Undefined(reason)),
    };
    let mu = mean(&o);
    let ss_obs: f64 = o.iter().map(|x| (x - mu).powi(2)).sum();
    if ss_obs == 0.0 {
        return Ok(MetricValue::Undefined(UndefinedReason::ZeroVarianceObs));
    }
    let ss_res: f64 = o.iter().zip(&s).map(|(x, y)| (y - x).powi(2)).sum();
    Ok(MetricValue::Defined(1.0 - ss_res / ss_obs))
}

/// Kling–Gupta efficiency, 2009 formulation (variability ratio of standard
/// deviations). A constant simulation has correlation taken as 0.
pub fn kge(obs: &[f64], mask: &[bool], sim: &[f64]) -> Result<MetricValue> {
    check_lengths(obs, mask, sim)?;
    let (o, s) = match observed_pairs(obs, mask, sim) {
        Ok(p) => p,
        Err(reason) => return Ok(MetricValue::Undefined(reason)),
    };
    let (mo, ms) = (mean(&o), mean(&s));
    let var_o = o.iter().map(|x| (x - mo).powi(2)).sum::<f64>();
    let var_s = s.iter().map(|x| (x - ms).powi(2)).sum::<f64>();
    if var_o == 0.0 {
        return Ok(MetricValue::Undefined(UndefinedReason::ZeroVarianceObs));
    }
    if mo == 0.0 {
        return Ok(MetricValue::Undefined(UndefinedReason::ZeroMeanObs));
    }
    let cov: f64 = o.iter().zip(&s).map(|(x, y)| (x - mo) * (y - ms)).sum();
    let r = if var_s == 0.0 {
        0.0
    } else {
        cov / (var_o * var_s).sqrt()
    };
    let alpha = (var_s / var_o).sqrt();
    let beta = ms / mo;
    let ed = ((r - 1.0).powi(2) + (alpha - 1.0).powi(2) + (beta - 1.0).powi(2)).sqrt();
    Ok(MetricValue::Defined(1.0 - ed))
}

/// Pearson correlation between `x[t]` and `x[t+1]` over pairs where both days are observed.
pub fn acf1(series: &[f64], mask: &[bool]) -> Result<MetricValue> {
    if series.len() != mask.len() {
        return Err(MetricsError::LengthMismatch {
            obs: series.len(),
            sim: series.len(),
            mask: mask.len(),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Ok(MetricValue::Undefined(UndefinedReason::AllMasked));
    }
    let (a, b): (Vec<f64>, Vec<f64>) = (0..series.len().saturating_sub(1))
        .filter(|&t| mask[t] && mask[t + 1])
        .map(|t| (series[t], series[t + 1]))
        .unzip();
    if a.len() < 3 {
        return Ok(MetricValue::Undefined(UndefinedReason::InsufficientData));
    }
    let (ma, mb) = (mean(&a), mean(&b));
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Ok(MetricValue::Undefined(UndefinedReason::ZeroVarianceObs));
    }
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    Ok(MetricValue::Defined(cov / (va.sqrt() * vb.sqrt())))
}

pub const BFI_ALPHA: f64 = 0.925;
pub const BFI_MIN_RUN: usize = 90;

/// One Lyne–Hollick pass; returns the baseflow component.
fn lyne_hollick_pass(flow: &[f64], alpha: f64) -> Vec<f64> {
    let mut base = Vec::with_capacity(flow.len());
    let mut quick_prev = 0.0;
    for (t, &q) in flow.iter().enumerate() {
        let quick = if t == 0 {
            0.0
        } else {
            let raw = alpha * quick_prev + 0.5 * (1.0 + alpha) * (q - flow[t - 1]);
            raw.clamp(0.0, q)
        };
        base.push(q - quick);
        quick_prev = quick;
    }
    base
}

/// Baseflow separated by a three-pass (forward, backward, forward) Lyne–Hollick filter.
pub fn baseflow_separation(flow: &[f64], alpha: f64) -> Vec<f64> {
    let b1 = lyne_hollick_pass(flow, alpha);
    let rev: Vec<f64> = b1.into_iter().rev().collect();
    let b2: Vec<f64> = lyne_hollick_pass(&rev, alpha).into_iter().rev().collect();
    lyne_hollick_pass(&b2, alpha)
}

/// Baseflow index Σ baseflow / Σ flow, filtered separately over each run of
/// at least [`BFI_MIN_RUN`] consecutive observed days.
pub fn baseflow_index(series: &[f64], mask: &[bool]) -> Result<MetricValue> {
    if series.len() != mask.len() {
        return Err(MetricsError::LengthMismatch {
            obs: series.len(),
            sim: series.len(),
            mask: mask.len(),
        });
    }
    for (index, (&q, &m)) in series.iter().zip(mask).enumerate() {
        if m && q < 0.0 {
            return Err(MetricsError::NegativeFlow { index, value: q });
        }
    }
    if !mask.iter().any(|&m| m) {
        return Ok(MetricValue::Undefined(UndefinedReason::AllMasked));
    }
    let (mut base_total, mut flow_total, mut used) = (0.0, 0.0, false);
    for run in contiguous_runs(mask) {
        if run.len() < BFI_MIN_RUN {
            continue;
        }
        let flow = &series[run];
        base_total += baseflow_separation(flow, BFI_ALPHA).iter().sum::<f64>();
        flow_total += flow.iter().sum::<f64>();
        used = true;
    }
    if !used {
        return Ok(MetricValue::Undefined(UndefinedReason::InsufficientData));
    }
    if flow_total == 0.0 {
        return Ok(MetricValue::Undefined(UndefinedReason::ZeroVarianceObs));
    }
    Ok(MetricValue::Defined(base_total / flow_total))
}

fn contiguous_runs(mask: &[bool]) -> Vec<std::ops::Range<usize>> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push(s..mask.len());
    }
    runs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianSummary {
    pub median: f64,
    pub n_defined: usize,
    pub n_undefined: usize,
}

/// Median over defined values; even counts average the middle two.
pub fn median(values: &[MetricValue]) -> Result<MedianSummary> {
    let mut defined: Vec<f64> = values.iter().filter_map(|v| v.value()).collect();
    if defined.is_empty() {
        return Err(MetricsError::AllUndefined);
    }
    defined.sort_by(f64::total_cmp);
    let n = defined.len();
    let median = if n % 2 == 1 {
        defined[n / 2]
    } else {
        0.5 * (defined[n / 2 - 1] + defined[n / 2])
    };
    Ok(MedianSummary {
        median,
        n_defined: n,
        n_undefined: values.len() - n,
    })
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks). `None` when
/// either side is constant or fewer than two pairs are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}
