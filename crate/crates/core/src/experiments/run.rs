//! Training and evaluating ensemble members for a split plan.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    apply_fdc_scenario, assemble_report, compute_fdc_store, make_pub_kfold, make_pur_splits,
    make_temporal_split, BasinObs, EvalReport, ExperimentConfig, ExperimentError, FdcAssignment,
    FdcScenario, MemberOutput, Result, SplitKind, SplitPlan,
};
use crate::catalog::{
    fit_norm_stats, load_catalog, load_daily, Catalog, DailySeries, DateRange, NormConfig,
    NormStats, DISCHARGE,
};
use crate::fdc::{fit_fdc_norm, normalize_fdc, Fdc};
use crate::network::{
    select_attributes, InputSelection, ModelCheckpoint, ModelConfig, StreamflowModel,
};
use crate::training::{normalized_attributes, prepare_basin, train, write_loss_trace, LossRecord};

use super::ModelSettings;

/// Catalog plus every basin's raw daily series.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub catalog: Catalog,
    pub series: BTreeMap<String, DailySeries>,
}

impl Dataset {
    /// Load the catalog and `<id>.csv` forcing and flow files for every basin.
    pub fn load(paths: &super::DataPaths) -> Result<Self> {
        let catalog = load_catalog(&paths.attributes, &paths.gauges, &paths.regions)?;
        let mut series = BTreeMap::new();
        for b in &catalog.basins {
            let file = format!("{}.csv", b.id);
            let s = load_daily(
                &paths.forcing_dir.join(&file),
                &paths.flow_dir.join(&file),
                b,
            )?;
            series.insert(b.id.clone(), s);
        }
        Ok(Dataset { catalog, series })
    }

    pub fn series(&self, id: &str) -> Result<&DailySeries> {
        self.series
            .get(id)
            .ok_or_else(|| ExperimentError::Data(format!("basin {id} has no daily series")))
    }

    fn record(&self, id: &str) -> Result<&crate::catalog::BasinRecord> {
        self.catalog
            .get(id)
            .ok_or_else(|| ExperimentError::UnknownBasin(id.to_string()))
    }
}

/// Everything fitted from the training side of a plan. Built only from
/// training basins over the training range.
#[derive(Debug, Clone)]
pub struct TrainingContext {
    pub plan: SplitPlan,
    pub norm: NormStats,
    pub forcing_variables: Vec<String>,
    /// Training-period FDCs of the training basins (empty without FDCs).
    pub train_fdcs: BTreeMap<String, Fdc>,
    normalized: BTreeMap<String, DailySeries>,
}

pub fn build_training_context(
    dataset: &Dataset,
    plan: &SplitPlan,
    forcing_variables: &[String],
    log_variables: &[String],
    use_fdc: bool,
) -> Result<TrainingContext> {
    plan.validate()?;
    if plan.train_basins.is_empty() {
        return Err(ExperimentError::Data(format!(
            "plan {} has no training basins",
            plan.label
        )));
    }
    let train_series: BTreeMap<String, DailySeries> = plan
        .train_basins
        .iter()
        .map(|id| Ok((id.clone(), dataset.series(id)?.clone())))
        .collect::<Result<_>>()?;
    let mut norm = fit_norm_stats(
        &dataset.catalog,
        &train_series,
        &NormConfig {
            train_basins: &plan.train_basins,
            train_range: plan.train_range,
            log_variables,
        },
    )?;
    let forcing_variables = if forcing_variables.is_empty() {
        let first = &train_series[&plan.train_basins[0]];
        first
            .variables
            .iter()
            .filter(|v| *v != DISCHARGE)
            .cloned()
            .collect()
    } else {
        forcing_variables.to_vec()
    };
    let mut train_fdcs = BTreeMap::new();
    if use_fdc {
        train_fdcs = compute_fdc_store(&train_series, &plan.train_basins, &plan.train_range)?;
        if let Some(id) = plan
            .train_basins
            .iter()
            .find(|id| !train_fdcs.contains_key(*id))
        {
            return Err(ExperimentError::Data(format!(
                "training basin {id} has too little discharge in {} for an FDC",
                plan.train_range
            )));
        }
        norm.fdc = Some(fit_fdc_norm(train_fdcs.values())?);
    }
    let normalized = train_series
        .iter()
        .map(|(id, s)| Ok((id.clone(), norm.normalize_series(s)?)))
        .collect::<Result<_>>()?;
    Ok(TrainingContext {
        plan: plan.clone(),
        norm,
        forcing_variables,
        train_fdcs,
        normalized,
    })
}

impl TrainingContext {
    pub fn model_config(
        &self,
        catalog: &Catalog,
        settings: &ModelSettings,
        aliases: &BTreeMap<String, String>,
        selection: InputSelection,
    ) -> Result<ModelConfig> {
        Ok(ModelConfig {
            selection,
            use_fdc: self.norm.fdc.is_some(),
            forcing_variables: self.forcing_variables.clone(),
            attribute_names: select_attributes(selection, &catalog.attribute_names, aliases)?,
            hidden: settings.hidden,
            dropout: settings.dropout,
            encoder: settings.encoder.clone(),
        })
    }
}

/// Train one model on the context's training basins. `seed` drives both the
/// weight initialization and the batch/dropout stream.
pub fn train_member(
    dataset: &Dataset,
    ctx: &TrainingContext,
    settings: &ModelSettings,
    aliases: &BTreeMap<String, String>,
    selection: InputSelection,
    seed: u64,
    scenario: &str,
) -> Result<(StreamflowModel, Vec<LossRecord>)> {
    let cfg = ctx.model_config(&dataset.catalog, settings, aliases, selection)?;
    let mut basins = Vec::with_capacity(ctx.plan.train_basins.len());
    for id in &ctx.plan.train_basins {
        let record = dataset.record(id)?;
        let attrs = normalized_attributes(record, &cfg.attribute_names, &ctx.norm)?;
        let fdc = ctx
            .norm
            .fdc
            .as_ref()
            .map(|entry| normalize_fdc(&ctx.train_fdcs[id], entry));
        basins.push(prepare_basin(
            &ctx.normalized[id],
            &ctx.plan.train_range,
            &cfg,
            attrs,
            fdc,
        )?);
    }
    let model = StreamflowModel::new(cfg, seed)?;
    let outcome = train(
        model,
        &basins,
        &settings.train_config(seed.rotate_left(17) ^ 0xA5A5_5A5A, scenario),
    )?;
    Ok((outcome.model, outcome.trace))
}

/// Observed discharge (mm/day) and mask over the covered part of `range`.
pub fn observed_discharge(
    series: &DailySeries,
    range: &DateRange,
) -> Result<(Vec<f64>, Vec<bool>)> {
    series
        .discharge(series.day_span(range))
        .ok_or_else(|| ExperimentError::Data(format!("basin {} has no discharge", series.basin_id)))
}

/// Physical-unit predictions over the covered part of `range`, after
/// running up to `warmup` earlier days of forcing through the model.
/// Discharge observations are never read.
pub fn predict_range(
    model: &StreamflowModel,
    norm: &NormStats,
    series: &DailySeries,
    basin: &crate::catalog::BasinRecord,
    fdc: Option<&Fdc>,
    range: &DateRange,
    warmup: usize,
) -> Result<Vec<f64>> {
    let mut forcing_only = series.clone();
    if let Some(q) = series.var_index(DISCHARGE) {
        let nv = series.variables.len();
        for d in 0..series.days() {
            forcing_only.mask[d * nv + q] = false;
            forcing_only.values[d * nv + q] = 0.0;
        }
    }
    let normalized = norm.normalize_series(&forcing_only)?;
    let start = range.start - chrono::Duration::days(warmup as i64);
    let extended = DateRange::new(start, range.end);
    let cfg = &model.config;
    let attrs = normalized_attributes(basin, &cfg.attribute_names, norm)?;
    let fdc_in = match (cfg.use_fdc, fdc, &norm.fdc) {
        (false, _, _) => None,
        (true, Some(f), Some(entry)) => Some(normalize_fdc(f, entry)),
        _ => {
            return Err(ExperimentError::Data(format!(
                "basin {}: model needs an FDC and its normalization",
                basin.id
            )))
        }
    };
    let data = prepare_basin(&normalized, &extended, cfg, attrs, fdc_in)?;
    let skip = series.day_span(&extended).len() - series.day_span(range).len();
    if data.days() == 0 || skip >= data.days() {
        return Err(ExperimentError::Data(format!(
            "basin {} has no days in {range}",
            basin.id
        )));
    }
    let pred = model.predict(&data.full_input())?;
    let q = norm
        .variable(DISCHARGE)
        .ok_or_else(|| ExperimentError::Data("no discharge normalization".into()))?;
    Ok(pred[skip..].iter().map(|&z| q.denormalize(z)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberSpec {
    pub selection: InputSelection,
    pub seed: u64,
}

pub fn member_label(selection: InputSelection, seed: u64) -> String {
    format!("{}-seed{seed}", selection.as_str())
}

/// Input selections × seeds for one FDC scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub selections: Vec<InputSelection>,
    pub seeds: Vec<u64>,
    pub scenario: FdcScenario,
}

impl EnsembleSpec {
    pub fn members(&self) -> Vec<MemberSpec> {
        self.selections
            .iter()
            .flat_map(|&selection| {
                self.seeds
                    .iter()
                    .map(move |&seed| MemberSpec { selection, seed })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub report: EvalReport,
    pub assignments: Vec<FdcAssignment>,
    pub models: Vec<(String, StreamflowModel, Vec<LossRecord>)>,
    pub norm: NormStats,
}

fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(23);
    z = (z ^ (z >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    z = (z ^ (z >> 33)).wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    z ^ (z >> 33)
}

/// Train every member of `spec` on `plan` (up to `workers` at a time) and
/// score them, their per-selection means and the full ensemble mean on the
/// plan's test basins and range. Failed members are reported, not fatal.
pub fn run_ensemble(
    dataset: &Dataset,
    plan: &SplitPlan,
    config: &ExperimentConfig,
    spec: &EnsembleSpec,
    seed: u64,
    workers: usize,
) -> Result<EnsembleOutcome> {
    let scenario = spec.scenario;
    let label = scenario.label();
    let ctx = build_training_context(
        dataset,
        plan,
        &config.forcing_variables,
        &config.log_variables,
        scenario.use_fdc,
    )?;
    let (assigned, assignments) = if scenario.use_fdc {
        let mut store = ctx.train_fdcs.clone();
        let held_out: Vec<String> = plan
            .test_basins
            .iter()
            .filter(|id| !store.contains_key(*id))
            .cloned()
            .collect();
        store.extend(compute_fdc_store(
            &dataset.series,
            &held_out,
            &plan.train_range,
        )?);
        apply_fdc_scenario(
            plan,
            &dataset.catalog,
            scenario.fraction,
            mix_seed(seed, 0xFDC),
            &store,
        )?
    } else {
        (BTreeMap::new(), Vec::new())
    };

    let obs: Vec<BasinObs> = plan
        .test_basins
        .iter()
        .map(|id| {
            let (obs, mask) = observed_discharge(dataset.series(id)?, &plan.test_range)?;
            Ok(BasinObs {
                basin_id: id.clone(),
                obs,
                mask,
            })
        })
        .collect::<Result<_>>()?;

    let members = spec.members();
    let run_member = |m: &MemberSpec| -> Result<(MemberOutput, StreamflowModel, Vec<LossRecord>)> {
        let member_seed = mix_seed(seed, m.seed);
        let (model, trace) = train_member(
            dataset,
            &ctx,
            &config.model,
            &config.aliases,
            m.selection,
            member_seed,
            &label,
        )?;
        let mut predictions = BTreeMap::new();
        for id in &plan.test_basins {
            let pred = predict_range(
                &model,
                &ctx.norm,
                dataset.series(id)?,
                dataset.record(id)?,
                assigned.get(id),
                &plan.test_range,
                config.model.warmup(),
            )?;
            predictions.insert(id.clone(), pred);
        }
        let out = MemberOutput {
            label: member_label(m.selection, m.seed),
            selection: m.selection,
            seed: m.seed,
            predictions,
        };
        Ok((out, model, trace))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExperimentError::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<(MemberOutput, StreamflowModel, Vec<LossRecord>)>> =
        pool.install(|| members.par_iter().map(run_member).collect());

    let mut outputs = Vec::new();
    let mut models = Vec::new();
    let mut failed = Vec::new();
    let mut first_err = None;
    for (m, r) in members.iter().zip(results) {
        match r {
            Ok((out, model, trace)) => {
                models.push((out.label.clone(), model, trace));
                outputs.push(out);
            }
            Err(e) => {
                let name = member_label(m.selection, m.seed);
                log::error!("member {name} failed: {e}");
                failed.push(name);
                first_err.get_or_insert(e.to_string());
            }
        }
    }
    if outputs.is_empty() {
        return Err(ExperimentError::AllMembersFailed(
            first_err.unwrap_or_default(),
        ));
    }
    let report = assemble_report(&obs, &outputs, failed)?;
    Ok(EnsembleOutcome {
        report,
        assignments,
        models,
        norm: ctx.norm,
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub plan: String,
    pub scenario: String,
    /// Relative to the run directory.
    pub report_dir: String,
    pub member_seeds: BTreeMap<String, u64>,
    pub checkpoints: Vec<String>,
    pub fdc_assignments: Vec<FdcAssignment>,
    pub partial: bool,
    pub failed_members: Vec<String>,
}

/// Enough to re-execute a run: the resolved config, the seed, the plans
/// and what each ensemble produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub config: ExperimentConfig,
    pub splits: Vec<SplitPlan>,
    pub runs: Vec<RunEntry>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.config.hash() != m.config_hash {
            return Err(ExperimentError::Config(format!(
                "{}: config hash mismatch (edited manifest?)",
                path.display()
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// The plans a config selects.
pub fn plans_for(
    config: &ExperimentConfig,
    catalog: &Catalog,
    seed: u64,
) -> Result<Vec<SplitPlan>> {
    let (train, test) = (config.split.train_range(), config.split.test_range());
    let plans = match config.split.kind {
        SplitKind::Temporal => vec![make_temporal_split(catalog, train, test)?],
        SplitKind::PubKfold => {
            let k = config
                .split
                .k
                .ok_or_else(|| ExperimentError::Config("pub_kfold needs k".into()))?;
            let all = make_pub_kfold(&catalog.ids(), k, mix_seed(seed, 0xF01D), train, test)?;
            match config.split.fold {
                Some(f) => vec![all[f - 1].clone()],
                None => all,
            }
        }
        SplitKind::PurRegional => {
            let all = make_pur_splits(catalog, train, test)?;
            match &config.split.region {
                Some(r) => {
                    let p: Vec<SplitPlan> = all.into_iter().filter(|p| &p.label == r).collect();
                    if p.is_empty() {
                        return Err(ExperimentError::Config(format!("no basins in region {r}")));
                    }
                    p
                }
                None => all,
            }
        }
    };
    Ok(plans)
}

fn default_workers(config: &ExperimentConfig) -> usize {
    let members = config.ensemble.selections.len() * config.ensemble.seeds.len();
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    config.workers.unwrap_or(members.min(cores)).max(1)
}

/// Run every plan × scenario of `config`, writing reports, member
/// checkpoints and `manifest.json` under `out_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    seed: u64,
    dataset: &Dataset,
    out_dir: &Path,
) -> Result<RunManifest> {
    config.validate()?;
    let workers = default_workers(config);
    let plans = plans_for(config, &dataset.catalog, seed)?;
    std::fs::create_dir_all(out_dir)?;
    let mut runs = Vec::new();
    for plan in &plans {
        log::info!("{}", plan.describe());
        for scenario in &config.scenarios {
            let spec = EnsembleSpec {
                selections: config.ensemble.selections.clone(),
                seeds: config.ensemble.seeds.clone(),
                scenario: *scenario,
            };
            let rel = PathBuf::from(format!("{}-{}", plan.kind.as_str(), plan.label))
                .join(scenario.label());
            let dir = out_dir.join(&rel);
            log::info!(
                "running {} ({} members)",
                rel.display(),
                spec.members().len()
            );
            let outcome = run_ensemble(dataset, plan, config, &spec, seed, workers)?;
            outcome.report.write_all(&dir)?;
            let member_dir = dir.join("members");
            std::fs::create_dir_all(&member_dir)?;
            let mut checkpoints = Vec::new();
            let mut member_seeds = BTreeMap::new();
            for (label, model, trace) in &outcome.models {
                let seed_used = spec
                    .members()
                    .iter()
                    .find(|m| &member_label(m.selection, m.seed) == label)
                    .map_or(0, |m| mix_seed(seed, m.seed));
                member_seeds.insert(label.clone(), seed_used);
                let ck = ModelCheckpoint::new(model, outcome.norm.clone(), seed_used);
                ck.save(&member_dir.join(format!("{label}.json")))?;
                write_loss_trace(&member_dir.join(format!("{label}.loss.csv")), trace)?;
                checkpoints.push(
                    rel.join("members")
                        .join(format!("{label}.json"))
                        .display()
                        .to_string(),
                );
            }
            runs.push(RunEntry {
                plan: plan.label.clone(),
                scenario: scenario.label(),
                report_dir: rel.display().to_string(),
                member_seeds,
                checkpoints,
                fdc_assignments: outcome.assignments,
                partial: outcome.report.partial,
                failed_members: outcome.report.failed_members.clone(),
            });
        }
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        seed,
        workers,
        config: config.clone(),
        splits: plans,
        runs,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Re-execute the run recorded in `manifest` into `out_dir`.
pub fn rerun_from_manifest(manifest: &RunManifest, out_dir: &Path) -> Result<RunManifest> {
    let dataset = Dataset::load(&manifest.config.data)?;
    let fresh = run_experiment(&manifest.config, manifest.seed, &dataset, out_dir)?;
    if fresh.splits != manifest.splits {
        return Err(ExperimentError::Data(
            "data changed: split plans differ from the manifest".into(),
        ));
    }
    Ok(fresh)
}
