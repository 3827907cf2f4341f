//! Synthetic multi-basin worlds driven by two parallel linear reservoirs.
//!
//! Each basin splits daily rain between a fast store (coefficient `k`) and a
//! slow store (coefficient `k / 10`): a fraction `phi` goes to the slow
//! store. Outflow from a store is `k · S`, and storage updates as
//! `S ← S + inflow − k · S`. Regions differ systematically in `(k, phi)`, so
//! holding one out is a genuine extrapolation test.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::{BasinRecord, Catalog, DailySeries, DISCHARGE};

pub const PRECIP: &str = "prcp";

/// Single linear store.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearReservoir {
    pub k: f64,
    pub storage: f64,
}

impl LinearReservoir {
    /// Emit `k · S` for this day, then add `inflow`.
    pub fn step(&mut self, inflow: f64) -> f64 {
        let out = self.k * self.storage;
        self.storage = self.storage + inflow - out;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RainRegime {
    pub mean_intensity: f64,
    pub wet_probability: f64,
    pub seed: u64,
}

impl RainRegime {
    pub fn mean_daily(&self) -> f64 {
        self.mean_intensity * self.wet_probability
    }

    /// Bernoulli wet days with exponential depths.
    pub fn generate(&self, days: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let depth = Exp::new(1.0 / self.mean_intensity).expect("positive intensity");
        (0..days)
            .map(|_| {
                if rng.random::<f64>() < self.wet_probability {
                    depth.sample(&mut rng)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthBasinSpec {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub area_km2: f64,
    /// Fast-store coefficient per day, in (0, 1).
    pub k_res: f64,
    /// Fraction of rain routed to the slow store, in [0, 1].
    pub phi: f64,
    pub rain: RainRegime,
    pub region: String,
    pub attributes: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub precip: Vec<f64>,
    pub discharge: Vec<f64>,
    pub initial_storage: f64,
    pub final_storage: f64,
}

/// Run the two-store model from equilibrium storage for `days` days.
pub fn simulate_precip(k_res: f64, phi: f64, precip: &[f64], mean_daily: f64) -> Simulation {
    let k_slow = k_res / 10.0;
    let mut fast = LinearReservoir {
        k: k_res,
        storage: (1.0 - phi) * mean_daily / k_res,
    };
    let mut slow = LinearReservoir {
        k: k_slow,
        storage: phi * mean_daily / k_slow,
    };
    let initial_storage = fast.storage + slow.storage;
    let discharge = precip
        .iter()
        .map(|&p| fast.step((1.0 - phi) * p) + slow.step(phi * p))
        .collect();
    Simulation {
        precip: precip.to_vec(),
        discharge,
        initial_storage,
        final_storage: fast.storage + slow.storage,
    }
}

pub fn simulate(spec: &SynthBasinSpec, days: usize) -> Simulation {
    let precip = spec.rain.generate(days);
    simulate_precip(spec.k_res, spec.phi, &precip, spec.rain.mean_daily())
}

/// `DailySeries` with `prcp` and `discharge` (mm/day), fully observed.
pub fn to_series(id: &str, start: NaiveDate, sim: &Simulation) -> DailySeries {
    let values = sim
        .precip
        .iter()
        .zip(&sim.discharge)
        .flat_map(|(&p, &q)| [p, q])
        .collect::<Vec<f64>>();
    DailySeries {
        basin_id: id.to_string(),
        start_date: start,
        variables: vec![PRECIP.to_string(), DISCHARGE.to_string()],
        mask: vec![true; values.len()],
        values,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhiLayout {
    /// `phi` drifts with region alongside `k`.
    Regional,
    /// Basins alternate between two fixed `phi` values regardless of region.
    TwoClass { low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_basins: usize,
    pub n_regions: usize,
    pub seed: u64,
    pub start: NaiveDate,
    pub days: usize,
    pub phi_layout: PhiLayout,
}

impl WorldConfig {
    pub fn new(n_basins: usize, n_regions: usize, seed: u64) -> Self {
        WorldConfig {
            n_basins,
            n_regions,
            seed,
            start: NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
            days: 4 * 365,
            phi_layout: PhiLayout::Regional,
        }
    }
}

pub const ATTRIBUTE_COLUMNS: [&str; 6] = [
    "area_km2",
    "k_res_noisy",
    "phi_noisy",
    "mean_prcp",
    "decoy_1",
    "decoy_2",
];

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub config: WorldConfig,
    pub specs: Vec<SynthBasinSpec>,
    pub catalog: Catalog,
    pub series: BTreeMap<String, DailySeries>,
}

impl SynthWorld {
    pub fn spec(&self, id: &str) -> Option<&SynthBasinSpec> {
        self.specs.iter().find(|s| s.id == id)
    }
}

pub fn region_label(r: usize) -> String {
    format!("R{}", r + 1)
}

/// Build a world in memory. Region `r` of `n` occupies its own longitude
/// band; its `k` centre rises and (for [`PhiLayout::Regional`]) its `phi`
/// centre falls with `r`.
pub fn make_world(config: &WorldConfig) -> SynthWorld {
    assert!(config.n_regions >= 1 && config.n_basins >= config.n_regions);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let denom = (config.n_regions.max(2) - 1) as f64;
    let mut specs = Vec::with_capacity(config.n_basins);
    let mut per_region = vec![0usize; config.n_regions];
    for i in 0..config.n_basins {
        let r = i * config.n_regions / config.n_basins;
        let j = per_region[r];
        per_region[r] += 1;
        let shift = r as f64 / denom;
        let k_res = (0.25 + 0.25 * shift + rng.random_range(-0.15..0.15)).clamp(0.05, 0.9);
        let phi = match config.phi_layout {
            PhiLayout::Regional => {
                (0.7 - 0.4 * shift + rng.random_range(-0.25..0.25)).clamp(0.0, 1.0)
            }
            PhiLayout::TwoClass { low, high } => {
                if i % 2 == 0 {
                    low
                } else {
                    high
                }
            }
        };
        let rain = RainRegime {
            mean_intensity: rng.random_range(4.0..9.0),
            wet_probability: rng.random_range(0.25..0.5),
            seed: rng.random(),
        };
        let area_km2 = (rng.random_range(50.0..1000.0f64) * 10.0).round() / 10.0;
        let attributes = vec![
            ("area_km2".to_string(), area_km2),
            (
                "k_res_noisy".to_string(),
                k_res + 0.03 * noise.sample(&mut rng),
            ),
            ("phi_noisy".to_string(), phi + 0.08 * noise.sample(&mut rng)),
            ("mean_prcp".to_string(), rain.mean_daily()),
            ("decoy_1".to_string(), noise.sample(&mut rng)),
            ("decoy_2".to_string(), noise.sample(&mut rng)),
        ];
        specs.push(SynthBasinSpec {
            id: format!("{:08}", 1_000_000 * (r + 1) + j + 1),
            lat: 35.0 + (j / 5) as f64 * 0.8,
            lon: -120.0 + 8.0 * r as f64 + (j % 5) as f64 * 0.8,
            area_km2,
            k_res,
            phi,
            rain,
            region: region_label(r),
            attributes,
        });
    }
    let series = specs
        .iter()
        .map(|s| {
            (
                s.id.clone(),
                to_series(&s.id, config.start, &simulate(s, config.days)),
            )
        })
        .collect();
    let catalog = Catalog {
        attribute_names: ATTRIBUTE_COLUMNS.iter().map(|s| s.to_string()).collect(),
        basins: specs
            .iter()
            .map(|s| BasinRecord {
                id: s.id.clone(),
                lat: s.lat,
                lon: s.lon,
                area_km2: s.area_km2,
                attributes: s.attributes.clone(),
                region: Some(s.region.clone()),
            })
            .collect(),
    };
    SynthWorld {
        config: config.clone(),
        specs,
        catalog,
        series,
    }
}

fn mm_to_cfs(q_mm: f64, area_km2: f64) -> f64 {
    q_mm / 1000.0 * area_km2 * 1e6 / 86400.0 / 0.0283168
}

/// Write the world as catalog-format CSVs under `dir`:
/// `attributes.csv`, `gauges.csv`, `regions.csv`, `forcing/<id>.csv`, `flow/<id>.csv`.
pub fn write_world(world: &SynthWorld, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir.join("forcing"))?;
    std::fs::create_dir_all(dir.join("flow"))?;
    let mut attrs = format!("basin_id,{}\n", world.catalog.attribute_names.join(","));
    let mut gauges = String::from("basin_id,lat,lon,area_km2\n");
    let mut regions = String::from("basin_id,region\n");
    for b in &world.catalog.basins {
        let vals: Vec<String> = b.attributes.iter().map(|(_, v)| format!("{v}")).collect();
        attrs.push_str(&format!("{},{}\n", b.id, vals.join(",")));
        gauges.push_str(&format!("{},{},{},{}\n", b.id, b.lat, b.lon, b.area_km2));
        regions.push_str(&format!("{},{}\n", b.id, b.region.as_deref().unwrap_or("")));
    }
    std::fs::write(dir.join("attributes.csv"), attrs)?;
    std::fs::write(dir.join("gauges.csv"), gauges)?;
    std::fs::write(dir.join("regions.csv"), regions)?;
    for b in &world.catalog.basins {
        let s = &world.series[&b.id];
        let qi = s.var_index(DISCHARGE).expect("discharge column");
        let pi = s.var_index(PRECIP).expect("precip column");
        let mut forcing = std::io::BufWriter::new(std::fs::File::create(
            dir.join("forcing").join(format!("{}.csv", b.id)),
        )?);
        let mut flow = std::io::BufWriter::new(std::fs::File::create(
            dir.join("flow").join(format!("{}.csv", b.id)),
        )?);
        writeln!(forcing, "date,{PRECIP}")?;
        writeln!(flow, "date,q_cfs")?;
        for d in 0..s.days() {
            let date = s.date_at(d);
            let p = s.get(d, pi).unwrap_or(0.0);
            let q = s.get(d, qi).unwrap_or(0.0);
            writeln!(forcing, "{date},{p}")?;
            writeln!(flow, "{date},{}", mm_to_cfs(q, b.area_km2))?;
        }
        forcing.flush()?;
        flow.flush()?;
    }
    Ok(())
}

/// CAMELS attribute names the synthetic columns are published under by
/// [`write_camels_format`], in [`ATTRIBUTE_COLUMNS`] order.
pub const CAMELS_NAMES: [&str; 6] = [
    "area_gages2",
    "slope_mean",
    "max_water_content",
    "p_mean",
    "frac_forest",
    "soil_porosity",
];

/// Write the world in the raw CAMELS layout read by
/// [`crate::camels::convert_camels`]: attribute tables, Daymet-style forcing
/// files (precipitation plus fixed seasonal placeholders for the other six
/// variables), USGS-style streamflow in cfs and a `camels_hydro.txt` of
/// observed `q_mean` and `baseflow_index`. Region `Rn` becomes HUC `n`.
pub fn write_camels_format(world: &SynthWorld, dir: &Path) -> std::io::Result<()> {
    let mut topo = String::from("gauge_id;gauge_lat;gauge_lon;elev_mean;slope_mean;area_gages2\n");
    let mut name = String::from("gauge_id;huc_02;gauge_name\n");
    let mut other = String::from(
        "gauge_id;p_mean;aridity;frac_forest;soil_porosity;max_water_content;dom_land_cover\n",
    );
    let mut hydro = String::from("gauge_id;q_mean;baseflow_index\n");
    for b in &world.catalog.basins {
        let a = |n: &str| b.attribute(n).expect("synthetic attribute");
        let huc = b
            .region
            .as_deref()
            .unwrap_or("R0")
            .trim_start_matches('R')
            .parse::<u32>()
            .unwrap_or(0);
        topo.push_str(&format!(
            "{};{};{};{};{};{}\n",
            b.id,
            b.lat,
            b.lon,
            100.0,
            a("k_res_noisy"),
            b.area_km2
        ));
        name.push_str(&format!("{};{huc:02};Synthetic {}\n", b.id, b.id));
        let s = &world.series[&b.id];
        let (q, m) = s.discharge(0..s.days()).expect("discharge column");
        let bfi = crate::metrics::baseflow_index(&q, &m)
            .ok()
            .and_then(|v| v.value());
        hydro.push_str(&format!(
            "{};{};{}\n",
            b.id,
            q.iter().sum::<f64>() / q.len().max(1) as f64,
            bfi.map_or("NaN".into(), |v| v.to_string())
        ));
        other.push_str(&format!(
            "{};{};{};{};{};{};Synthetic cover\n",
            b.id,
            a("mean_prcp"),
            2.5 / a("mean_prcp"),
            a("decoy_1"),
            a("decoy_2"),
            a("phi_noisy")
        ));
    }
    std::fs::write(dir.join("camels_topo.txt"), topo)?;
    std::fs::write(dir.join("camels_name.txt"), name)?;
    std::fs::write(dir.join("camels_synth.txt"), other)?;
    std::fs::write(dir.join("camels_hydro.txt"), hydro)?;
    for b in &world.catalog.basins {
        let huc = b
            .region
            .as_deref()
            .unwrap_or("R0")
            .trim_start_matches('R')
            .parse::<u32>()
            .unwrap_or(0);
        let fdir = dir
            .join("basin_mean_forcing/daymet")
            .join(format!("{huc:02}"));
        let qdir = dir.join("usgs_streamflow").join(format!("{huc:02}"));
        std::fs::create_dir_all(&fdir)?;
        std::fs::create_dir_all(&qdir)?;
        let s = &world.series[&b.id];
        let qi = s.var_index(DISCHARGE).expect("discharge column");
        let pi = s.var_index(PRECIP).expect("precip column");
        let mut forcing = std::io::BufWriter::new(std::fs::File::create(
            fdir.join(format!("{}_lump_cida_forcing_leap.txt", b.id)),
        )?);
        let mut flow = std::io::BufWriter::new(std::fs::File::create(
            qdir.join(format!("{}_streamflow_qc.txt", b.id)),
        )?);
        writeln!(forcing, "{}\n100\n{}", b.lat, b.area_km2 * 1e6)?;
        writeln!(
            forcing,
            "Year Mnth Day Hr\tdayl(s)\tprcp(mm/day)\tsrad(W/m2)\tswe(mm)\ttmax(C)\ttmin(C)\tvp(Pa)"
        )?;
        for d in 0..s.days() {
            let date = s.date_at(d);
            let season = (2.0 * std::f64::consts::PI * d as f64 / 365.25).sin();
            let p = s.get(d, pi).unwrap_or(0.0);
            let tmax = 15.0 + 10.0 * season;
            writeln!(
                forcing,
                "{} {:02} {:02} 12\t{}\t{p}\t{}\t{}\t{tmax}\t{}\t{}",
                date.format("%Y"),
                date.format("%m"),
                date.format("%d"),
                43200.0 + 7200.0 * season,
                250.0 + 100.0 * season,
                5.0 - 5.0 * season,
                tmax - 10.0,
                1000.0 + 300.0 * season
            )?;
            let q = s.get(d, qi).map_or(-999.0, |q| mm_to_cfs(q, b.area_km2));
            writeln!(
                flow,
                "{} {} {} {} {q:.6} A",
                b.id,
                date.format("%Y"),
                date.format("%m"),
                date.format("%d")
            )?;
        }
        forcing.flush()?;
        flow.flush()?;
    }
    Ok(())
}
