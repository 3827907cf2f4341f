use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use pur_core::camels::convert_camels;
use pur_core::experiments::*;
use pur_core::fdc::{write_fdc_csv, Fdc};
use pur_core::metrics::{acf1, baseflow_index, spearman};
use pur_core::network::{InputSelection, ModelCheckpoint};
use pur_core::synth::{make_world, write_camels_format, write_world, PhiLayout, WorldConfig};
use pur_core::training::write_loss_trace;
use serde_json::json;

use super::{Command, Overrides, SplitArg};

#[derive(Debug)]
pub enum CliError {
    Core(ExperimentError),
    Config(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn class(&self) -> ErrorClass {
        match self {
            CliError::Core(e) => e.class(),
            CliError::Config(_) => ErrorClass::Config,
            CliError::Data(_) => ErrorClass::Data,
            CliError::Runtime(_) => ErrorClass::Runtime,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Data(m) => write!(f, "data: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl<E: Into<ExperimentError>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(ExperimentError::from)?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn load_config(path: &Path, o: Option<&Overrides>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = o {
        if let Some(s) = o.split {
            cfg.split.kind = match s {
                SplitArg::Temporal => SplitKind::Temporal,
                SplitArg::Pub => SplitKind::PubKfold,
                SplitArg::Pur => SplitKind::PurRegional,
            };
            if cfg.split.kind != SplitKind::PurRegional {
                cfg.split.region = None;
            }
            if cfg.split.kind != SplitKind::PubKfold {
                cfg.split.fold = None;
            }
        }
        if o.region.is_some() {
            cfg.split.region = o.region.clone();
        }
        if o.k.is_some() {
            cfg.split.k = o.k;
        }
        if o.fold.is_some() {
            cfg.split.fold = o.fold;
        }
        if let Some(e) = o.epochs {
            cfg.model.epochs = e;
        }
        cfg.validate()?;
    }
    Ok(cfg)
}

fn parse_selection(s: &str) -> Result<InputSelection> {
    s.parse::<InputSelection>().map_err(|_| {
        CliError::Config(format!(
            "unknown input selection {s:?} (full-attr, 5-attr, no-attr)"
        ))
    })
}

/// The single plan `train`/`eval` work on.
fn single_plan(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<SplitPlan> {
    let plans = plans_for(cfg, &dataset.catalog, seed)?;
    if plans.len() > 1 {
        log::warn!(
            "{} plans; using {} (choose with --region or --fold)",
            plans.len(),
            plans[0].label
        );
    }
    Ok(plans
        .into_iter()
        .next()
        .expect("plans_for returns at least one plan"))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            basins,
            regions,
            seed,
            days,
            two_class,
            camels,
            run_dir,
        } => synth(
            basins,
            regions,
            seed,
            days,
            two_class.as_deref(),
            camels,
            &run_dir,
        ),
        Command::Ingest {
            config,
            camels_root,
            forcing,
            huc_regions,
            basin_list,
            out,
            run_dir,
        } => match (config, camels_root) {
            (Some(c), None) => ingest_config(&c, &run_dir),
            (None, Some(root)) => ingest_camels(
                &root,
                &forcing,
                huc_regions.as_deref(),
                basin_list.as_deref(),
                &out.unwrap_or_else(|| run_dir.join("data")),
                &run_dir,
            ),
            _ => Err(CliError::Config(
                "ingest needs --config or --camels-root".into(),
            )),
        },
        Command::Fdc { config, run_dir } => fdc(&config, &run_dir),
        Command::Train {
            config,
            seed,
            selection,
            no_fdc,
            overrides,
            run_dir,
        } => train(&config, seed, &selection, no_fdc, &overrides, &run_dir),
        Command::Experiment {
            config,
            seed,
            manifest,
            overrides,
            workers,
            selections,
            member_seeds,
            run_dir,
        } => match manifest {
            Some(m) => rerun(&m, &run_dir),
            None => {
                let (config, seed) = config
                    .zip(seed)
                    .ok_or_else(|| CliError::Config("--config and --seed are required".into()))?;
                experiment(
                    &config,
                    seed,
                    &overrides,
                    workers,
                    selections,
                    member_seeds,
                    &run_dir,
                )
            }
        },
        Command::Eval {
            checkpoint,
            config,
            seed,
            fraction,
            overrides,
            run_dir,
        } => eval(&checkpoint, &config, seed, fraction, &overrides, &run_dir),
        Command::ExportFeatures {
            checkpoint,
            config,
            run_dir,
        } => export(&checkpoint, &config, &run_dir),
        Command::Plot {
            run_dir,
            metric,
            reference,
            y_min,
            out,
        } => plot(&run_dir, &metric, reference.as_deref(), y_min, out),
    }
}

fn desk_config_toml(name: &str, first_region: &str) -> String {
    format!(
        r#"# Desk-scale preset written by `pur synth`.
name = "{name}"
forcing_variables = ["prcp"]
log_variables = ["prcp"]
feature_attributes = ["phi_noisy", "k_res_noisy"]

[data]
attributes = "data/attributes.csv"
gauges = "data/gauges.csv"
regions = "data/regions.csv"
forcing_dir = "data/forcing"
flow_dir = "data/flow"

[split]
kind = "pur_regional"
train_start = "2000-01-01"
train_end = "2001-12-31"
test_start = "2002-01-01"
test_end = "2003-12-30"
region = "{first_region}"

# phi_noisy carries the baseflow split; decoys stand in for the other two
[aliases]
slope = "k_res_noisy"
area = "area_km2"
forest_fraction = "decoy_1"
soil_porosity = "decoy_2"
max_soil_water = "phi_noisy"

[ensemble]
selections = ["full-attr", "5-attr", "no-attr"]
seeds = [1, 2]

[[scenarios]]
use_fdc = false

[[scenarios]]
use_fdc = true
fraction = 1.0

[[scenarios]]
use_fdc = true
fraction = 0.3333333333333333

[[scenarios]]
use_fdc = true
fraction = 0.1

[model]
hidden = 16
dropout = 0.0
seq_len = 100
epochs = 100
batch_basins = 8
batches_per_epoch = 10
learning_rate = 0.01
"#
    )
}

fn synth(
    basins: usize,
    regions: usize,
    seed: u64,
    days: usize,
    two_class: Option<&str>,
    camels: bool,
    run_dir: &Path,
) -> Result<()> {
    if regions == 0 || basins < regions {
        return Err(CliError::Config(format!(
            "need basins >= regions >= 1 (got {basins}, {regions})"
        )));
    }
    if days < 4 * 365 {
        log::warn!("{days} days do not cover the preset's 2000-2003 train/test ranges");
    }
    let mut wc = WorldConfig::new(basins, regions, seed);
    wc.days = days;
    if let Some(spec) = two_class {
        let parts: Vec<f64> = spec
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CliError::Config(format!("--two-class expects LOW,HIGH, got {spec:?}")))?;
        match parts.as_slice() {
            [low, high] if (0.0..=1.0).contains(low) && (0.0..=1.0).contains(high) => {
                wc.phi_layout = PhiLayout::TwoClass {
                    low: *low,
                    high: *high,
                };
            }
            _ => {
                return Err(CliError::Config(format!(
                    "--two-class expects two fractions in [0, 1], got {spec:?}"
                )))
            }
        }
    }
    let world = make_world(&wc);
    let data = run_dir.join("data");
    write_world(&world, &data)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", data.display())))?;
    if camels {
        let raw = run_dir.join("camels-raw");
        create_dir(&raw)?;
        write_camels_format(&world, &raw)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", raw.display())))?;
    }
    let truth: Vec<serde_json::Value> = world
        .specs
        .iter()
        .map(|s| json!({"basin_id": s.id, "region": s.region, "k_res": s.k_res, "phi": s.phi}))
        .collect();
    write_json(
        &run_dir.join("world.json"),
        &json!({"config": wc_json(&wc), "basins": truth}),
    )?;
    let config_path = run_dir.join("experiment.toml");
    let text = desk_config_toml(&format!("synth-{seed}"), &world.specs[0].region);
    ExperimentConfig::from_toml(&text)?;
    std::fs::write(&config_path, text).map_err(|e| CliError::Runtime(e.to_string()))?;
    log::info!(
        "wrote {} basins to {} and {}",
        basins,
        data.display(),
        config_path.display()
    );
    Ok(())
}

fn wc_json(wc: &WorldConfig) -> serde_json::Value {
    json!({
        "n_basins": wc.n_basins,
        "n_regions": wc.n_regions,
        "seed": wc.seed,
        "start": wc.start.to_string(),
        "days": wc.days,
        "phi_layout": format!("{:?}", wc.phi_layout),
    })
}

fn ingest_config(config: &Path, run_dir: &Path) -> Result<()> {
    let cfg = load_config(config, None)?;
    let dataset = Dataset::load(&cfg.data)?;
    let mut regions: BTreeMap<String, usize> = BTreeMap::new();
    let mut basins = Vec::new();
    for b in &dataset.catalog.basins {
        *regions
            .entry(b.region.clone().unwrap_or_default())
            .or_default() += 1;
        let s = dataset.series(&b.id)?;
        let coverage = |r: &pur_core::catalog::DateRange| -> Result<f64> {
            let (_, m) = observed_discharge(s, r)?;
            Ok(if r.days() == 0 {
                0.0
            } else {
                m.iter().filter(|&&x| x).count() as f64 / r.days() as f64
            })
        };
        basins.push(json!({
            "basin_id": b.id,
            "region": b.region,
            "first_day": s.start_date.to_string(),
            "days": s.days(),
            "train_coverage": coverage(&cfg.split.train_range())?,
            "test_coverage": coverage(&cfg.split.test_range())?,
        }));
    }
    for v in &cfg.forcing_variables {
        if let Some(id) = dataset
            .series
            .values()
            .find(|s| s.var_index(v).is_none())
            .map(|s| s.basin_id.clone())
        {
            return Err(CliError::Data(format!(
                "basin {id} has no forcing column {v}"
            )));
        }
    }
    create_dir(run_dir)?;
    write_json(
        &run_dir.join("ingest.json"),
        &json!({
            "config": cfg.name,
            "config_hash": cfg.hash(),
            "attributes": dataset.catalog.attribute_names,
            "regions": regions,
            "basins": basins,
        }),
    )?;
    log::info!(
        "{} basins in {} regions look valid",
        dataset.catalog.len(),
        regions.len()
    );
    Ok(())
}

fn ingest_camels(
    root: &Path,
    forcing: &str,
    huc_regions: Option<&Path>,
    basin_list: Option<&Path>,
    out: &Path,
    run_dir: &Path,
) -> Result<()> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
    };
    let map = match huc_regions {
        Some(p) => {
            let mut m = BTreeMap::new();
            for (i, line) in read(p)?.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || (i == 0 && line.starts_with("huc")) {
                    continue;
                }
                let (h, r) = line.split_once(',').ok_or_else(|| {
                    CliError::Data(format!("{}:{}: expected huc_02,region", p.display(), i + 1))
                })?;
                m.insert(format!("{:0>2}", h.trim()), r.trim().to_string());
            }
            Some(m)
        }
        None => None,
    };
    let only: Option<Vec<String>> = match basin_list {
        Some(p) => Some(read(p)?.split_whitespace().map(str::to_string).collect()),
        None => None,
    };
    let summary = convert_camels(root, out, forcing, map.as_ref(), only.as_deref())
        .map_err(ExperimentError::from)?;
    if !summary.dropped_columns.is_empty() {
        log::warn!(
            "dropped attributes with missing values: {}",
            summary.dropped_columns.join(", ")
        );
    }
    create_dir(run_dir)?;
    write_json(
        &run_dir.join("ingest.json"),
        &serde_json::to_value(&summary).map_err(ExperimentError::from)?,
    )?;
    log::info!(
        "converted {} basins ({} attributes, {} regions) into {}",
        summary.basins.len(),
        summary.attribute_columns.len(),
        summary.regions.len(),
        out.display()
    );
    Ok(())
}

fn fdc(config: &Path, run_dir: &Path) -> Result<()> {
    let cfg = load_config(config, None)?;
    let dataset = Dataset::load(&cfg.data)?;
    let ids = dataset.catalog.ids();
    let period = cfg.split.train_range();
    let store = compute_fdc_store(&dataset.series, &ids, &period)?;
    let missing: Vec<&String> = ids.iter().filter(|id| !store.contains_key(*id)).collect();
    if !missing.is_empty() {
        log::warn!("{} basins lack data for an FDC in {period}", missing.len());
    }
    create_dir(run_dir)?;
    let path = run_dir.join("fdc.csv");
    write_fdc_csv(&path, store.values()).map_err(ExperimentError::from)?;
    log::info!("wrote {} FDCs to {}", store.len(), path.display());
    Ok(())
}

fn train(
    config: &Path,
    seed: u64,
    selection: &str,
    no_fdc: bool,
    overrides: &Overrides,
    run_dir: &Path,
) -> Result<()> {
    let cfg = load_config(config, Some(overrides))?;
    let selection = parse_selection(selection)?;
    let dataset = Dataset::load(&cfg.data)?;
    let plan = single_plan(&cfg, &dataset, seed)?;
    log::info!("{}", plan.describe());
    let scenario = if no_fdc {
        FdcScenario::NONE
    } else {
        FdcScenario::with_fraction(1.0)
    };
    let ctx = build_training_context(
        &dataset,
        &plan,
        &cfg.forcing_variables,
        &cfg.log_variables,
        scenario.use_fdc,
    )?;
    let (model, trace) = train_member(
        &dataset,
        &ctx,
        &cfg.model,
        &cfg.aliases,
        selection,
        seed,
        &scenario.label(),
    )?;
    create_dir(run_dir)?;
    ModelCheckpoint::new(&model, ctx.norm.clone(), seed).save(&run_dir.join("model.json"))?;
    write_loss_trace(&run_dir.join("loss.csv"), &trace)?;
    if let Some(last) = trace.last() {
        log::info!("final loss {:.4} after {} steps", last.loss, trace.len());
    }
    log::info!("wrote {}", run_dir.join("model.json").display());
    Ok(())
}

fn experiment(
    config: &Path,
    seed: u64,
    overrides: &Overrides,
    workers: Option<usize>,
    selections: Option<Vec<String>>,
    member_seeds: Option<Vec<u64>>,
    run_dir: &Path,
) -> Result<()> {
    let mut cfg = load_config(config, Some(overrides))?;
    if workers.is_some() {
        cfg.workers = workers;
    }
    if let Some(s) = selections {
        cfg.ensemble.selections = s
            .iter()
            .map(|x| parse_selection(x))
            .collect::<Result<_>>()?;
    }
    if let Some(s) = member_seeds {
        cfg.ensemble.seeds = s;
    }
    cfg.validate()?;
    let dataset = Dataset::load(&cfg.data)?;
    let manifest = run_experiment(&cfg, seed, &dataset, run_dir)?;
    for run in &manifest.runs {
        if run.partial {
            log::warn!(
                "{}: partial ensemble, failed {:?}",
                run.report_dir,
                run.failed_members
            );
        }
        let agg = std::fs::read_to_string(run_dir.join(&run.report_dir).join("aggregate.json"))
            .unwrap_or_default();
        let ens: Option<f64> = serde_json::from_str::<serde_json::Value>(&agg)
            .ok()
            .and_then(|v| {
                v["aggregates"]
                    .as_array()?
                    .iter()
                    .find(|a| a["member"] == ENSEMBLE)?["median_nse"]
                    .as_f64()
            });
        match ens {
            Some(v) => log::info!("{}: ensemble median NSE {v:.3}", run.report_dir),
            None => log::info!("{}: done", run.report_dir),
        }
    }
    log::info!("wrote {}", run_dir.join(MANIFEST_FILE).display());
    Ok(())
}

fn rerun(manifest_path: &Path, run_dir: &Path) -> Result<()> {
    let manifest = RunManifest::load(manifest_path)?;
    if manifest.tool_version != env!("CARGO_PKG_VERSION") {
        log::warn!("manifest written by version {}", manifest.tool_version);
    }
    rerun_from_manifest(&manifest, run_dir)?;
    log::info!(
        "reran {} into {}",
        manifest_path.display(),
        run_dir.display()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |x| format!("{x:.3}"))
}

fn load_checkpoint(path: &Path) -> Result<(ModelCheckpoint, pur_core::network::StreamflowModel)> {
    let ck = ModelCheckpoint::load(path)?;
    let model = ck.model()?;
    Ok((ck, model))
}

fn eval(
    checkpoint: &Path,
    config: &Path,
    seed: Option<u64>,
    fraction: Option<f64>,
    overrides: &Overrides,
    run_dir: &Path,
) -> Result<()> {
    let cfg = load_config(config, Some(overrides))?;
    if cfg.split.kind == SplitKind::PubKfold && seed.is_none() {
        return Err(CliError::Config("PUB folds depend on --seed".into()));
    }
    let (ck, model) = load_checkpoint(checkpoint)?;
    let dataset = Dataset::load(&cfg.data)?;
    let plan = single_plan(&cfg, &dataset, seed.unwrap_or(0))?;
    log::info!("{}", plan.describe());
    let norm = &ck.manifest.norm_stats;
    let fdcs: BTreeMap<String, Fdc> = if model.config.use_fdc {
        let ids: Vec<String> = plan
            .test_basins
            .iter()
            .chain(&plan.train_basins)
            .cloned()
            .collect();
        let store = compute_fdc_store(&dataset.series, &ids, &plan.train_range)?;
        match fraction {
            Some(f) => apply_fdc_scenario(&plan, &dataset.catalog, f, seed.unwrap_or(0), &store)?.0,
            None => store,
        }
    } else {
        BTreeMap::new()
    };
    let mut obs = Vec::new();
    let mut predictions = BTreeMap::new();
    for id in &plan.test_basins {
        let series = dataset.series(id)?;
        let record = dataset
            .catalog
            .get(id)
            .ok_or_else(|| ExperimentError::UnknownBasin(id.clone()))?;
        let pred = predict_range(
            &model,
            norm,
            series,
            record,
            fdcs.get(id),
            &plan.test_range,
            cfg.model.warmup(),
        )?;
        let (o, mask) = observed_discharge(series, &plan.test_range)?;
        obs.push(BasinObs {
            basin_id: id.clone(),
            obs: o,
            mask,
        });
        predictions.insert(id.clone(), pred);
    }
    let member = MemberOutput {
        label: member_label(model.config.selection, ck.manifest.seed),
        selection: model.config.selection,
        seed: ck.manifest.seed,
        predictions,
    };
    let report = assemble_report(&obs, &[member], Vec::new())?;
    report.write_all(run_dir)?;
    if let Some(a) = report.aggregate(ENSEMBLE) {
        log::info!(
            "median NSE {}, median KGE {} over {} basins",
            fmt_opt(a.median_nse),
            fmt_opt(a.median_kge),
            a.n_defined
        );
    }
    log::info!("wrote reports to {}", run_dir.display());
    Ok(())
}

fn export(checkpoint: &Path, config: &Path, run_dir: &Path) -> Result<()> {
    let cfg = load_config(config, None)?;
    let (ck, model) = load_checkpoint(checkpoint)?;
    let fdc_norm = ck.manifest.norm_stats.fdc.clone().ok_or_else(|| {
        CliError::Config("checkpoint has no FDC normalization (trained with --no-fdc?)".into())
    })?;
    let dataset = Dataset::load(&cfg.data)?;
    let period = cfg.split.train_range();
    let ids = dataset.catalog.ids();
    let fdcs = compute_fdc_store(&dataset.series, &ids, &period)?;
    let usable: Vec<String> = ids
        .iter()
        .filter(|id| fdcs.contains_key(*id))
        .cloned()
        .collect();
    let mut table = export_features(&model, &fdc_norm, &usable, &fdcs)?;

    let mut bfi = BTreeMap::new();
    let mut acf = BTreeMap::new();
    for id in &usable {
        let (q, m) = observed_discharge(dataset.series(id)?, &period)?;
        if let Some(v) = baseflow_index(&q, &m)
            .map_err(ExperimentError::from)?
            .value()
        {
            bfi.insert(id.clone(), v);
        }
        if let Some(v) = acf1(&q, &m).map_err(ExperimentError::from)?.value() {
            acf.insert(id.clone(), v);
        }
    }
    table.join("bfi_obs", &bfi);
    table.join("acf1_obs", &acf);
    let mut from_signatures = Vec::new();
    for name in &cfg.feature_attributes {
        if dataset.catalog.attribute_names.contains(name) {
            let col = dataset
                .catalog
                .basins
                .iter()
                .filter_map(|b| b.attribute(name).map(|v| (b.id.clone(), v)))
                .collect();
            table.join(name, &col);
        } else {
            from_signatures.push(name.clone());
        }
    }
    if !from_signatures.is_empty() {
        let path = cfg.data.signatures.as_ref().ok_or_else(|| {
            CliError::Config(format!(
                "feature attributes {from_signatures:?} are not catalog attributes and [data] has no signatures file"
            ))
        })?;
        for (name, col) in read_basin_columns(path, &from_signatures)? {
            table.join(&name, &col);
        }
    }
    create_dir(run_dir)?;
    table.write_csv(&run_dir.join("features.csv"))?;

    let mut corr = String::from("feature,column,spearman,n\n");
    for (j, name) in table.extra_columns.iter().enumerate() {
        let pairs: Vec<(usize, f64)> = table
            .rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.extras[j].map(|v| (i, v)))
            .collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        for f in 0..table.n_features {
            let x: Vec<f64> = pairs.iter().map(|p| table.rows[p.0].features[f]).collect();
            let rho = spearman(&x, &y).map_or("NA".to_string(), |r| r.to_string());
            corr.push_str(&format!("f{:02},{name},{rho},{}\n", f + 1, y.len()));
        }
    }
    let path = run_dir.join("feature_correlations.csv");
    std::fs::write(&path, corr).map_err(|e| CliError::Runtime(e.to_string()))?;
    log::info!(
        "wrote {} basins x {} features to {}",
        table.rows.len(),
        table.n_features,
        run_dir.display()
    );
    Ok(())
}

fn metric_values(
    rows: &[MetricRow],
    metric: &str,
    member: &str,
    basins: Option<&[String]>,
) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.member == member)
        .filter(|r| basins.is_none_or(|b| b.contains(&r.basin_id)))
        .filter_map(|r| {
            if metric == "kge" {
                r.kge.value()
            } else {
                r.nse.value()
            }
        })
        .collect()
}

fn plot(
    run_dir: &Path,
    metric: &str,
    reference: Option<&Path>,
    y_min: f64,
    out: Option<PathBuf>,
) -> Result<()> {
    let manifest = RunManifest::load(&run_dir.join(MANIFEST_FILE))?;
    let reference_rows = match reference {
        Some(dir) => {
            let m = RunManifest::load(&dir.join(MANIFEST_FILE))?;
            let mut rows = Vec::new();
            for run in m
                .runs
                .iter()
                .filter(|r| r.scenario == FdcScenario::NONE.label())
            {
                rows.extend(read_metrics_csv(
                    &dir.join(&run.report_dir).join("metrics.csv"),
                )?);
            }
            Some(rows)
        }
        None => None,
    };
    let mut cluster_labels: Vec<String> = manifest
        .config
        .ensemble
        .selections
        .iter()
        .map(|s| s.as_str().to_string())
        .collect();
    cluster_labels.push(ENSEMBLE.to_string());
    let mut panels = Vec::new();
    for plan in &manifest.splits {
        let mut by_scenario = Vec::new();
        for run in manifest.runs.iter().filter(|r| r.plan == plan.label) {
            let rows = read_metrics_csv(&run_dir.join(&run.report_dir).join("metrics.csv"))?;
            by_scenario.push((run.scenario.clone(), rows));
        }
        if by_scenario.is_empty() {
            continue;
        }
        let clusters = cluster_labels
            .iter()
            .map(|label| {
                let mut boxes = Vec::new();
                if let Some(rows) = &reference_rows {
                    boxes.push((
                        "reference".to_string(),
                        metric_values(rows, metric, label, Some(&plan.test_basins)),
                    ));
                }
                for (scenario, rows) in &by_scenario {
                    boxes.push((scenario.clone(), metric_values(rows, metric, label, None)));
                }
                (label.clone(), boxes)
            })
            .collect();
        panels.push(BoxGroup {
            title: format!(
                "{} {} ({} basins)",
                plan.kind.as_str(),
                plan.label,
                plan.test_basins.len()
            ),
            clusters,
        });
    }
    if panels.is_empty() {
        return Err(CliError::Data(format!(
            "{} records no finished runs",
            run_dir.display()
        )));
    }
    let svg = render_boxplot_svg(&metric.to_uppercase(), &panels, y_min);
    let path = out.unwrap_or_else(|| run_dir.join(format!("boxplot_{metric}.svg")));
    std::fs::write(&path, svg)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}
