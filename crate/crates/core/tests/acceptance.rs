//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any fails. Pass criterion numbers to run a subset:
//! `cargo test -p pur-core --test acceptance -- 1 4 7`.

use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use pur_core::camels::convert_camels;
use pur_core::catalog::{parse_date, BasinRecord, DailySeries, DateRange, DISCHARGE};
use pur_core::experiments::*;
use pur_core::fdc::{compute_fdc, exceedance_probability, migrate_fdc, Fdc, FDC_POINTS};
use pur_core::metrics::{acf1, baseflow_index, kge, nse, spearman};
use pur_core::network::*;
use pur_core::synth::*;
use pur_core::tensor::gradcheck::{check_gradients, GradCheck};
use pur_core::tensor::{AdamState, Graph, Tensor, TensorError, Var};
use pur_core::training::*;

type Result<T, E> = std::result::Result<T, E>;
type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn date(s: &str) -> NaiveDate {
    parse_date(s).expect("valid date")
}

fn range(a: &str, b: &str) -> DateRange {
    DateRange::new(date(a), date(b))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values at least 0.1 away from zero, so relu never sits on its kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spaced at least 0.08 apart, so max pooling has no near ties.
fn spread(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let data = order
        .iter()
        .map(|&k| 0.1 * k as f64 + rng.random_range(-0.01..0.01))
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contract `y` with fixed pseudo-random weights to a scalar.
fn contract(g: &mut Graph, y: Var) -> Result<Var, TensorError> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64 ^ 0xC0FFEE);
    let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>>;

struct OpCase {
    name: &'static str,
    inputs: Vec<Tensor>,
    training: bool,
    f: OpFn,
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let r = rng.random_range(1..4usize);
    let c = rng.random_range(1..5usize);
    let k = rng.random_range(1..4usize);
    let mut cases = Vec::new();
    let mut push = |name, inputs, training, f: OpFn| {
        cases.push(OpCase {
            name,
            inputs,
            training,
            f,
        })
    };
    push(
        "add",
        vec![
            uniform(rng, &[r, c], -1.0, 1.0),
            uniform(rng, &[r, c], -1.0, 1.0),
        ],
        false,
        Box::new(|g, v| {
            let y = g.add(v[0], v[1])?;
            contract(g, y)
        }),
    );
    push(
        "add(broadcast)",
        vec![
            uniform(rng, &[r, c], -1.0, 1.0),
            uniform(rng, &[c], -1.0, 1.0),
        ],
        false,
        Box::new(|g, v| {
            let y = g.add(v[0], v[1])?;
            contract(g, y)
        }),
    );
    push(
        "sub",
        vec![
            uniform(rng, &[r, c], -1.0, 1.0),
            uniform(rng, &[r, c], -1.0, 1.0),
        ],
        false,
        Box::new(|g, v| {
            let y = g.sub(v[0], v[1])?;
            contract(g, y)
        }),
    );
    push(
        "mul",
        vec![
            uniform(rng, &[r, c], -1.0, 1.0),
            uniform(rng, &[r, c], -1.0, 1.0),
        ],
        false,
        Box::new(|g, v| {
            let y = g.mul(v[0], v[1])?;
            contract(g, y)
        }),
    );
    let s = rng.random_range(-2.0..2.0);
    push(
        "scale",
        vec![uniform(rng, &[r, c], -1.0, 1.0)],
        false,
        Box::new(move |g, v| {
            let y = g.scale(v[0], s);
            contract(g, y)
        }),
    );
    push(
        "sigmoid",
        vec![uniform(rng, &[r, c], -3.0, 3.0)],
        false,
        Box::new(|g, v| {
            let y = g.sigmoid(v[0]);
            contract(g, y)
        }),
    );
    push(
        "tanh",
        vec![uniform(rng, &[r, c], -3.0, 3.0)],
        false,
        Box::new(|g, v| {
            let y = g.tanh(v[0]);
            contract(g, y)
        }),
    );
    push(
        "relu",
        vec![away_from_zero(rng, &[r, c])],
        false,
        Box::new(|g, v| {
            let y = g.relu(v[0]);
            contract(g, y)
        }),
    );
    push(
        "sqrt",
        vec![uniform(rng, &[r, c], 0.5, 2.0)],
        false,
        Box::new(|g, v| {
            let y = g.sqrt(v[0]);
            contract(g, y)
        }),
    );
    push(
        "matmul",
        vec![
            uniform(rng, &[r, k], -1.0, 1.0),
            uniform(rng, &[k, c], -1.0, 1.0),
        ],
        false,
        Box::new(|g, v| {
            let y = g.matmul(v[0], v[1])?;
            contract(g, y)
        }),
    );
    let (cin, cout, kw) = (
        rng.random_range(1..3usize),
        rng.random_range(1..3usize),
        rng.random_range(1..4usize),
    );
    let (stride, pad) = (rng.random_range(1..3usize), rng.random_range(0..3usize));
    let len = rng.random_range(kw + 2..kw + 9);
    push(
        "conv1d",
        vec![
            uniform(rng, &[cin, len], -1.0, 1.0),
            uniform(rng, &[cout, cin, kw], -1.0, 1.0),
            uniform(rng, &[cout], -1.0, 1.0),
        ],
        false,
        Box::new(move |g, v| {
            let y = g.conv1d(v[0], v[1], v[2], stride, pad)?;
            contract(g, y)
        }),
    );
    let pk = rng.random_range(1..4usize);
    let plen = pk * rng.random_range(1..4usize) + rng.random_range(0..pk);
    push(
        "max_pool1d",
        vec![spread(rng, &[c, plen])],
        false,
        Box::new(move |g, v| {
            let y = g.max_pool1d(v[0], pk)?;
            contract(g, y)
        }),
    );
    let p = rng.random_range(0.1..0.6);
    push(
        "dropout",
        vec![uniform(rng, &[r, c], -1.0, 1.0)],
        true,
        Box::new(move |g, v| {
            let y = g.dropout(v[0], p)?;
            contract(g, y)
        }),
    );
    let c2 = rng.random_range(1..4usize);
    push(
        "concat(axis 1)",
        vec![
            uniform(rng, &[r, c], -1.0, 1.0),
            uniform(rng, &[r, c2], -1.0, 1.0),
        ],
        false,
        Box::new(|g, v| {
            let y = g.concat(&[v[0], v[1]], 1)?;
            contract(g, y)
        }),
    );
    let r2 = rng.random_range(1..4usize);
    push(
        "concat(axis 0)",
        vec![
            uniform(rng, &[r, c], -1.0, 1.0),
            uniform(rng, &[r2, c], -1.0, 1.0),
        ],
        false,
        Box::new(|g, v| {
            let y = g.concat(&[v[0], v[1]], 0)?;
            contract(g, y)
        }),
    );
    let start = rng.random_range(0..c);
    let sl = rng.random_range(1..=c - start);
    push(
        "slice",
        vec![uniform(rng, &[r, c], -1.0, 1.0)],
        false,
        Box::new(move |g, v| {
            let y = g.slice(v[0], 1, start, sl)?;
            contract(g, y)
        }),
    );
    push(
        "sum",
        vec![uniform(rng, &[r, c], -1.0, 1.0)],
        false,
        Box::new(|g, v| {
            let y = g.tanh(v[0]);
            let y = g.sum(y);
            Ok(g.scale(y, 0.7))
        }),
    );
    push(
        "mean",
        vec![uniform(rng, &[r, c], -1.0, 1.0)],
        false,
        Box::new(|g, v| {
            let y = g.sigmoid(v[0]);
            Ok(g.mean(y))
        }),
    );
    push(
        "reshape",
        vec![uniform(rng, &[r, c], -1.0, 1.0)],
        false,
        Box::new(move |g, v| {
            let y = g.reshape(v[0], &[c, r])?;
            contract(g, y)
        }),
    );
    cases
}

fn composite_config(seed: u64) -> ModelConfig {
    ModelConfig {
        selection: InputSelection::FullAttr,
        use_fdc: true,
        forcing_variables: vec!["prcp".into(), "tmean".into()],
        attribute_names: vec!["a1".into(), "a2".into()],
        hidden: 4,
        // odd seeds also exercise both dropout sites
        dropout: if seed % 2 == 1 { 0.3 } else { 0.0 },
        encoder: EncoderConfig {
            conv: vec![
                ConvLayer {
                    out_channels: 2,
                    kernel: 5,
                    stride: 1,
                    pad: 0,
                },
                ConvLayer {
                    out_channels: 3,
                    kernel: 5,
                    stride: 2,
                    pad: 1,
                },
            ],
            pooling: Pooling::Max(2),
            output_features: 3,
        },
    }
}

fn c1_gradients() -> Outcome {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    const INSTANCES: u64 = 50;
    let t0 = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut checked = 0usize;
    let mut record = |name: &'static str, r: &GradCheck| -> Result<(), String> {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(r.max_rel_error);
        checked += r.checked;
        ensure(r.max_rel_error <= TOL, || format!("{name}: {r:?}"))
    };
    for inst in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        for case in op_cases(&mut rng) {
            let training = case.training;
            let seed = inst;
            let graph = move || {
                if training {
                    Graph::training(seed)
                } else {
                    Graph::new()
                }
            };
            let r =
                check_gradients::<_, TensorError>(&case.inputs, H, graph, |g, v| (case.f)(g, v))
                    .map_err(|e| format!("{}: {e}", case.name))?;
            record(case.name, &r)?;
        }
        // full encoder-LSTM composite, H = 4, E = 3, t = 5
        let model =
            StreamflowModel::new(composite_config(inst), 77 + inst).map_err(|e| e.to_string())?;
        let t = 5;
        let batch: Vec<SequenceInput> = (0..2)
            .map(|_| SequenceInput {
                forcings: (0..t * 2).map(|_| rng.random_range(-1.5..1.5)).collect(),
                attributes: (0..2).map(|_| rng.random_range(-1.5..1.5)).collect(),
                fdc: Some(
                    (0..FDC_POINTS)
                        .map(|i| 2.0 - 0.04 * i as f64 + rng.random_range(-0.2..0.2))
                        .collect(),
                ),
            })
            .collect();
        let target: Vec<f64> = (0..2 * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut mask = vec![true; 2 * t];
        mask[rng.random_range(0..2 * t)] = false;
        let graph = move || Graph::training(inst);
        let r = check_gradients::<_, NetworkError>(model.params(), H, graph, |g, vars| {
            let y = model.forward(g, vars, &batch)?;
            rmse_masked_loss(g, y, &target, &mask)
        })
        .map_err(|e| format!("composite: {e}"))?;
        ensure(r.checked == model.param_count(), || {
            "composite: not every parameter checked".into()
        })?;
        record("encoder-lstm", &r)?;
    }
    let elapsed = t0.elapsed();
    ensure(elapsed <= Duration::from_secs(120), || {
        format!("took {elapsed:?} > 2 min")
    })?;
    let max = worst.values().copied().fold(0.0, f64::max);
    Ok(format!(
        "{} ops + composite x {INSTANCES} instances, {checked} partials, max rel err {max:.2e}, {:.1}s",
        worst.len() - 1,
        elapsed.as_secs_f64()
    ))
}

fn discharge_series(id: &str, q: Vec<f64>, mask: Vec<bool>) -> DailySeries {
    DailySeries {
        basin_id: id.to_string(),
        start_date: date("2000-01-01"),
        variables: vec![DISCHARGE.to_string()],
        values: q,
        mask,
    }
}

/// Sort ascending and take the linear-interpolated quantile at `1 − p`.
fn fdc_oracle(observed: &[f64]) -> Vec<f64> {
    let mut v = observed.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    (0..FDC_POINTS)
        .map(|i| {
            let p = (2 * i + 1) as f64 / 200.0;
            let pos = (1.0 - p) * (n - 1) as f64;
            let j = pos.floor() as usize;
            let w = pos - j as f64;
            if j + 1 < n {
                v[j] * (1.0 - w) + v[j + 1] * w
            } else {
                v[j]
            }
        })
        .collect()
}

fn c2_fdc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut max_err: f64 = 0.0;
    let mut constants = 0;
    for case in 0..1000 {
        let n = rng.random_range(120..2500usize);
        let kind = case % 5;
        let q: Vec<f64> = (0..n)
            .map(|_| match kind {
                0 => 3.25,
                1 => -(1.0 - rng.random::<f64>()).ln() * rng.random_range(0.5..8.0),
                2 => (rng.random_range(0..6) as f64) * 0.5,
                3 => rng.random_range(0.0..40.0f64).powi(2) / 40.0,
                _ => {
                    if rng.random_bool(0.3) {
                        0.0
                    } else {
                        rng.random_range(0.01..10.0)
                    }
                }
            })
            .collect();
        let mut mask: Vec<bool> = (0..n).map(|_| !rng.random_bool(0.1)).collect();
        if mask.iter().filter(|&&m| m).count() < FDC_POINTS {
            mask = vec![true; n];
        }
        let series = discharge_series("b", q.clone(), mask.clone());
        let lo = rng.random_range(0..n / 4);
        let hi = rng.random_range(3 * n / 4..n);
        let mut period = DateRange::new(series.date_at(lo), series.date_at(hi));
        let mut observed: Vec<f64> = (lo..=hi).filter(|&d| mask[d]).map(|d| q[d]).collect();
        if observed.len() < FDC_POINTS {
            period = series.range();
            observed = (0..n).filter(|&d| mask[d]).map(|d| q[d]).collect();
        }
        let fdc = compute_fdc(&series, &period).map_err(|e| format!("case {case}: {e}"))?;
        let oracle = fdc_oracle(&observed);
        for (a, b) in fdc.values.iter().zip(&oracle) {
            let err = (a - b).abs();
            max_err = max_err.max(err);
            ensure(err <= 1e-12, || format!("case {case}: {a} vs oracle {b}"))?;
        }
        ensure(fdc.values.windows(2).all(|w| w[0] >= w[1]), || {
            format!("case {case}: not non-increasing")
        })?;
        if kind == 0 {
            ensure(fdc.values.iter().all(|&v| v == 3.25), || {
                format!("case {case}: constant series")
            })?;
            constants += 1;
        }
    }
    ensure(exceedance_probability(0) == 0.005, || {
        "slot 0 probability".into()
    })?;
    Ok(format!(
        "1000 series ({constants} constant), max abs err {max_err:.1e}"
    ))
}

fn haversine_oracle(a: &BasinRecord, b: &BasinRecord) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let h = ((p2 - p1) / 2.0).sin().powi(2)
        + p1.cos()
            * p2.cos()
            * ((b.lon.to_radians() - a.lon.to_radians()) / 2.0)
                .sin()
                .powi(2);
    2.0 * 6371.0 * h.sqrt().atan2((1.0 - h).sqrt())
}

fn record(id: String, lat: f64, lon: f64) -> BasinRecord {
    BasinRecord {
        id,
        lat,
        lon,
        area_km2: 100.0,
        attributes: Vec::new(),
        region: None,
    }
}

fn c3_migration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut targets, mut ties) = (0usize, 0usize);
    let period = range("2000-01-01", "2000-12-31");
    for config in 0..100 {
        let n = rng.random_range(2..=200usize);
        let mut basins: Vec<BasinRecord> = (0..n)
            .map(|i| {
                record(
                    format!(
                        "{:08}",
                        rng.random_range(0..100_000_000u64) * 1000 + i as u64 % 1000
                    ),
                    rng.random_range(25.0..49.0),
                    rng.random_range(-124.0..-67.0),
                )
            })
            .collect();
        // co-located gauges give exact distance ties
        for _ in 0..n / 5 {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            basins[b].lat = basins[a].lat;
            basins[b].lon = basins[a].lon;
        }
        let gauged: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let gauged = if gauged.iter().any(|&g| g) {
            gauged
        } else {
            vec![true; n]
        };
        let fdcs: Vec<Fdc> = basins
            .iter()
            .map(|b| Fdc {
                basin_id: b.id.clone(),
                values: (0..FDC_POINTS)
                    .rev()
                    .map(|k| k as f64 * rng.random_range(0.1..2.0))
                    .collect(),
                source_basin_id: b.id.clone(),
                period,
            })
            .collect();
        let donors: Vec<(&BasinRecord, &Fdc)> = (0..n)
            .filter(|&i| gauged[i])
            .map(|i| (&basins[i], &fdcs[i]))
            .collect();
        for (t, target) in basins.iter().enumerate() {
            let got = migrate_fdc(target, &donors).map_err(|e| e.to_string())?;
            let expect = if gauged[t] {
                t
            } else {
                let dists: Vec<(f64, &str, usize)> = (0..n)
                    .filter(|&i| gauged[i])
                    .map(|i| {
                        (
                            haversine_oracle(target, &basins[i]),
                            basins[i].id.as_str(),
                            i,
                        )
                    })
                    .collect();
                let best = dists
                    .iter()
                    .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)))
                    .unwrap();
                if dists.iter().filter(|d| d.0 == best.0).count() > 1 {
                    ties += 1;
                }
                best.2
            };
            targets += 1;
            ensure(got.source_basin_id == basins[expect].id, || {
                format!(
                    "config {config}: {} got {}, oracle {}",
                    target.id, got.source_basin_id, basins[expect].id
                )
            })?;
            ensure(
                got.values == fdcs[expect].values && got.basin_id == target.id,
                || format!("config {config}: wrong payload for {}", target.id),
            )?;
        }
    }
    ensure(ties > 0, || "no tie cases were generated".into())?;
    Ok(format!(
        "100 configurations, {targets} targets, {ties} tie cases"
    ))
}

fn observed_pairs(obs: &[f64], mask: &[bool], sim: &[f64]) -> (Vec<f64>, Vec<f64>) {
    obs.iter()
        .zip(sim)
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|((o, s), _)| (*o, *s))
        .unzip()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let cov = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / n - ma * mb;
    let sa = (a.iter().map(|x| x * x).sum::<f64>() / n - ma * ma).sqrt();
    let sb = (b.iter().map(|y| y * y).sum::<f64>() / n - mb * mb).sqrt();
    cov / (sa * sb)
}

fn nse_oracle(obs: &[f64], mask: &[bool], sim: &[f64]) -> f64 {
    let (o, s) = observed_pairs(obs, mask, sim);
    let m = mean(&o);
    let num: f64 = o.iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = o.iter().map(|a| (a - m) * (a - m)).sum();
    1.0 - num / den
}

fn kge_oracle(obs: &[f64], mask: &[bool], sim: &[f64]) -> f64 {
    let (o, s) = observed_pairs(obs, mask, sim);
    let sd = |x: &[f64]| {
        let m = mean(x);
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    };
    let r = pearson(&o, &s);
    let alpha = sd(&s) / sd(&o);
    let beta = mean(&s) / mean(&o);
    1.0 - ((r - 1.0).powi(2) + (alpha - 1.0).powi(2) + (beta - 1.0).powi(2)).sqrt()
}

fn acf1_oracle(x: &[f64], mask: &[bool]) -> f64 {
    let (a, b): (Vec<f64>, Vec<f64>) = x
        .windows(2)
        .zip(mask.windows(2))
        .filter(|(_, m)| m[0] && m[1])
        .map(|(w, _)| (w[0], w[1]))
        .unzip();
    pearson(&a, &b)
}

/// Three-pass Lyne–Hollick quickflow filter over each observed run of at
/// least 90 days.
fn bfi_oracle(x: &[f64], mask: &[bool], alpha: f64) -> f64 {
    fn quick(q: &[f64], alpha: f64) -> Vec<f64> {
        let mut f = vec![0.0; q.len()];
        for t in 1..q.len() {
            f[t] = (alpha * f[t - 1] + (1.0 + alpha) / 2.0 * (q[t] - q[t - 1]))
                .max(0.0)
                .min(q[t]);
        }
        f
    }
    let (mut base, mut total) = (0.0, 0.0);
    let mut t = 0;
    while t < x.len() {
        if !mask[t] {
            t += 1;
            continue;
        }
        let s = t;
        while t < x.len() && mask[t] {
            t += 1;
        }
        if t - s < 90 {
            continue;
        }
        let q = &x[s..t];
        let b1: Vec<f64> = q.iter().zip(quick(q, alpha)).map(|(a, f)| a - f).collect();
        let r: Vec<f64> = b1.iter().rev().copied().collect();
        let b2: Vec<f64> = r
            .iter()
            .zip(quick(&r, alpha))
            .map(|(a, f)| a - f)
            .rev()
            .collect();
        let b3: Vec<f64> = b2
            .iter()
            .zip(quick(&b2, alpha))
            .map(|(a, f)| a - f)
            .collect();
        base += b3.iter().sum::<f64>();
        total += q.iter().sum::<f64>();
    }
    base / total
}

fn c4_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut max_err: f64 = 0.0;
    let world = make_world(&WorldConfig::new(20, 2, 44));
    for (case, (_, s)) in world.series.iter().enumerate() {
        let (obs, _) = s.discharge(0..s.days()).unwrap();
        let mut mask = vec![true; obs.len()];
        // a few masked gaps of varying length
        for _ in 0..4 {
            let at = rng.random_range(0..obs.len() - 60);
            let len = rng.random_range(1..60);
            mask[at..at + len].iter_mut().for_each(|m| *m = false);
        }
        let sim: Vec<f64> = obs
            .iter()
            .map(|q| q * rng.random_range(0.6..1.4) + rng.random_range(0.0..0.5))
            .collect();
        let pairs = [
            (
                "nse",
                nse(&obs, &mask, &sim).unwrap().value(),
                nse_oracle(&obs, &mask, &sim),
            ),
            (
                "kge",
                kge(&obs, &mask, &sim).unwrap().value(),
                kge_oracle(&obs, &mask, &sim),
            ),
            (
                "acf1",
                acf1(&obs, &mask).unwrap().value(),
                acf1_oracle(&obs, &mask),
            ),
            (
                "bfi",
                baseflow_index(&obs, &mask).unwrap().value(),
                bfi_oracle(&obs, &mask, pur_core::metrics::BFI_ALPHA),
            ),
        ];
        for (name, got, want) in pairs {
            let got = got.ok_or_else(|| format!("case {case}: {name} undefined"))?;
            let err = (got - want).abs();
            max_err = max_err.max(err);
            ensure(err <= 1e-10, || {
                format!("case {case}: {name} {got} vs oracle {want}")
            })?;
        }
        let m = mean(&observed_pairs(&obs, &mask, &obs).0);
        let flat = vec![m; obs.len()];
        let twice: Vec<f64> = obs.iter().map(|q| 2.0 * q).collect();
        ensure(nse(&obs, &mask, &obs).unwrap().value() == Some(1.0), || {
            format!("case {case}: NSE(obs) != 1")
        })?;
        ensure(
            nse(&obs, &mask, &flat).unwrap().value() == Some(0.0),
            || format!("case {case}: NSE(mean) != 0"),
        )?;
        let k = kge(&obs, &mask, &twice).unwrap().value().unwrap();
        ensure((k - (1.0 - 2f64.sqrt())).abs() <= 1e-12, || {
            format!("case {case}: KGE(2 obs) = {k}")
        })?;
    }
    Ok(format!(
        "20 basins x 4 metrics, max abs err {max_err:.1e}; exact identities hold"
    ))
}

fn c5_overfit() -> Outcome {
    let t0 = Instant::now();
    let world = make_world(&WorldConfig::new(1, 1, 42));
    let basin = &world.catalog.basins[0];
    let series = &world.series[&basin.id];
    let train_range = DateRange::new(series.start_date, series.date_at(729));
    let ds = Dataset {
        catalog: world.catalog.clone(),
        series: world.series.clone(),
    };
    let plan = make_temporal_split(&ds.catalog, train_range, range("2002-01-01", "2002-12-31"))
        .map_err(|e| e.to_string())?;
    let ctx = build_training_context(&ds, &plan, &["prcp".into()], &["prcp".into()], false)
        .map_err(|e| e.to_string())?;
    let settings = ModelSettings {
        hidden: 16,
        dropout: 0.0,
        seq_len: 100,
        epochs: 500,
        batch_basins: 8,
        learning_rate: 0.01,
        batches_per_epoch: None,
        clip_norm: 1.0,
        warmup_days: Some(0),
        encoder: EncoderConfig::default(),
    };
    let aliases = BTreeMap::new();

    // loss on one fixed batch, lr 1e-3
    let cfg = ctx
        .model_config(&ds.catalog, &settings, &aliases, InputSelection::NoAttr)
        .map_err(|e| e.to_string())?;
    let normalized = ctx
        .norm
        .normalize_series(series)
        .map_err(|e| e.to_string())?;
    let data = vec![
        prepare_basin(&normalized, &train_range, &cfg, Vec::new(), None)
            .map_err(|e| e.to_string())?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let picks = sample_batch(&data, 8, 100, &mut rng).map_err(|e| e.to_string())?;
    let batch = Batch::gather(&data, &picks, 100);
    let mut model = StreamflowModel::new(cfg, 1).map_err(|e| e.to_string())?;
    let mut adam = AdamState::new(1e-3, model.params());
    let mut losses = Vec::new();
    for step in 0..10 {
        let l = train_step(&mut model, &mut adam, &batch, 1.0, step).map_err(|e| e.to_string())?;
        losses.push(l.ok_or("fixed batch fully masked")?);
    }
    ensure(losses.windows(2).all(|w| w[1] < w[0]), || {
        format!("fixed-batch losses not strictly decreasing: {losses:?}")
    })?;

    let (model, trace) = train_member(
        &ds,
        &ctx,
        &settings,
        &aliases,
        InputSelection::NoAttr,
        1,
        "no-fdc",
    )
    .map_err(|e| e.to_string())?;
    let pred = predict_range(&model, &ctx.norm, series, basin, None, &train_range, 0)
        .map_err(|e| e.to_string())?;
    let (obs, mask) = observed_discharge(series, &train_range).map_err(|e| e.to_string())?;
    let score = nse(&obs, &mask, &pred)
        .unwrap()
        .value()
        .ok_or("train NSE undefined")?;
    let elapsed = t0.elapsed();
    ensure(score >= 0.95, || format!("train NSE {score:.4} < 0.95"))?;
    ensure(elapsed <= Duration::from_secs(300), || {
        format!("took {elapsed:?} > 5 min")
    })?;
    Ok(format!(
        "train NSE {score:.4} after {} steps; fixed-batch loss {:.4} -> {:.4} over 10 steps; {:.1}s",
        trace.len(),
        losses[0],
        losses[9],
        elapsed.as_secs_f64()
    ))
}

fn small_settings(epochs: usize, dropout: f64) -> ModelSettings {
    ModelSettings {
        hidden: 8,
        dropout,
        seq_len: 60,
        epochs,
        batch_basins: 4,
        learning_rate: 0.01,
        batches_per_epoch: Some(4),
        clip_norm: 1.0,
        warmup_days: None,
        encoder: EncoderConfig::default(),
    }
}

fn synth_aliases() -> BTreeMap<String, String> {
    [
        ("slope", "k_res_noisy"),
        ("area", "area_km2"),
        ("forest_fraction", "decoy_1"),
        ("soil_porosity", "decoy_2"),
        ("max_soil_water", "phi_noisy"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect()
}

fn checkpoint_hash(model: &StreamflowModel, ctx: &TrainingContext, seed: u64) -> String {
    let json = pur_core::network::ModelCheckpoint::new(model, ctx.norm.clone(), seed).to_json();
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn c6_leakage() -> Outcome {
    let world = make_world(&WorldConfig::new(12, 2, 7));
    let clean = Dataset {
        catalog: world.catalog.clone(),
        series: world.series.clone(),
    };
    let (train, test) = (
        range("2000-01-01", "2001-12-31"),
        range("2002-01-01", "2003-12-30"),
    );
    let plans = make_pur_splits(&clean.catalog, train, test).map_err(|e| e.to_string())?;
    let mut poisoned_cells = 0usize;
    let mut checked = Vec::new();
    for plan in &plans {
        let mut poisoned = clean.clone();
        for (id, s) in poisoned.series.iter_mut() {
            let q = s.var_index(DISCHARGE).unwrap();
            let nv = s.variables.len();
            let held_out = plan.test_basins.contains(id);
            for d in 0..s.days() {
                if held_out || test.contains(s.date_at(d)) {
                    s.values[d * nv + q] = if d % 2 == 0 { f64::NAN } else { f64::INFINITY };
                    s.mask[d * nv + q] = true;
                    poisoned_cells += 1;
                }
            }
        }
        for use_fdc in [false, true] {
            let scenario = if use_fdc { "all-fdc" } else { "no-fdc" };
            let mut hashes = Vec::new();
            for ds in [&clean, &poisoned] {
                let ctx =
                    build_training_context(ds, plan, &["prcp".into()], &["prcp".into()], use_fdc)
                        .map_err(|e| format!("{}: {e}", plan.label))?;
                let (model, trace) = train_member(
                    ds,
                    &ctx,
                    &small_settings(3, 0.2),
                    &synth_aliases(),
                    InputSelection::FullAttr,
                    9,
                    scenario,
                )
                .map_err(|e| format!("{} {scenario}: {e}", plan.label))?;
                ensure(trace.iter().all(|r| r.loss.is_finite()), || {
                    "non-finite loss in trace".into()
                })?;
                hashes.push(checkpoint_hash(&model, &ctx, 9));
            }
            ensure(hashes[0] == hashes[1], || {
                format!("{} {scenario}: checkpoint hash changed", plan.label)
            })?;
            checked.push(format!("{}/{scenario} {}", plan.label, &hashes[0][..12]));
        }
    }
    Ok(format!(
        "{poisoned_cells} poisoned cells; identical hashes: {}",
        checked.join(", ")
    ))
}

fn c7_ensemble() -> Outcome {
    let world = make_world(&WorldConfig::new(6, 2, 17));
    let ds = Dataset {
        catalog: world.catalog.clone(),
        series: world.series.clone(),
    };
    let plan = make_pur_splits(
        &ds.catalog,
        range("2000-01-01", "2001-12-31"),
        range("2002-01-01", "2003-12-30"),
    )
    .map_err(|e| e.to_string())?
    .remove(1);
    let ctx = build_training_context(&ds, &plan, &["prcp".into()], &["prcp".into()], false)
        .map_err(|e| e.to_string())?;
    let settings = small_settings(2, 0.0);
    let (model, _) = train_member(
        &ds,
        &ctx,
        &settings,
        &synth_aliases(),
        InputSelection::NoAttr,
        3,
        "no-fdc",
    )
    .map_err(|e| e.to_string())?;
    let obs: Vec<BasinObs> = plan
        .test_basins
        .iter()
        .map(|id| {
            let (obs, mask) = observed_discharge(&ds.series[id], &plan.test_range).unwrap();
            BasinObs {
                basin_id: id.clone(),
                obs,
                mask,
            }
        })
        .collect();
    // three members sharing one set of weights, each predicting independently
    let members: Vec<MemberOutput> = (1..=3u64)
        .map(|seed| {
            let clone = model.clone();
            let predictions = plan
                .test_basins
                .iter()
                .map(|id| {
                    let p = predict_range(
                        &clone,
                        &ctx.norm,
                        &ds.series[id],
                        ds.catalog.get(id).unwrap(),
                        None,
                        &plan.test_range,
                        settings.warmup(),
                    )
                    .unwrap();
                    (id.clone(), p)
                })
                .collect();
            MemberOutput {
                label: member_label(InputSelection::NoAttr, seed),
                selection: InputSelection::NoAttr,
                seed,
                predictions,
            }
        })
        .collect();
    let report = assemble_report(&obs, &members, Vec::new()).map_err(|e| e.to_string())?;
    let bits = |v: pur_core::metrics::MetricValue| v.value().map(f64::to_bits);
    for o in &obs {
        let rows: Vec<&MetricRow> = report
            .rows
            .iter()
            .filter(|r| r.basin_id == o.basin_id)
            .collect();
        let first = rows[0];
        ensure(rows.iter().any(|r| r.member == ENSEMBLE), || {
            "no ensemble row".into()
        })?;
        for r in &rows {
            ensure(
                bits(r.nse) == bits(first.nse) && bits(r.kge) == bits(first.kge),
                || format!("{}: {} differs from {}", o.basin_id, r.member, first.member),
            )?;
        }
    }
    let agg = |m: &str| {
        report.aggregate(m).map(|a| {
            (
                a.median_nse.map(f64::to_bits),
                a.median_kge.map(f64::to_bits),
            )
        })
    };
    ensure(agg(ENSEMBLE) == agg(&members[0].label), || {
        "ensemble median differs from member median".into()
    })?;

    let n = 500;
    let ones = vec![1.0; n];
    let threes = vec![3.0; n];
    let mean = ensemble_mean(&[&ones, &threes]);
    ensure(mean.iter().all(|&v| v == 2.0), || {
        "mean of constant 1 and 3 is not 2".into()
    })?;
    let o = &obs[0];
    let len = o.obs.len();
    let constant = |c: f64, seed: u64| MemberOutput {
        label: format!("const{c}"),
        selection: InputSelection::FullAttr,
        seed,
        predictions: [(o.basin_id.clone(), vec![c; len])].into_iter().collect(),
    };
    let report = assemble_report(
        std::slice::from_ref(o),
        &[constant(1.0, 1), constant(3.0, 2)],
        Vec::new(),
    )
    .map_err(|e| e.to_string())?;
    let ens = report
        .rows
        .iter()
        .find(|r| r.member == ENSEMBLE)
        .ok_or("no ensemble row")?;
    let want = nse(&o.obs, &o.mask, &vec![2.0; len]).unwrap();
    ensure(bits(ens.nse) == bits(want), || {
        "ensemble row is not scored on the constant-2 hydrograph".into()
    })?;
    Ok(format!(
        "{} basins: identical-weight members, selection mean and ensemble agree bit-for-bit; mean(1, 3) == 2",
        obs.len()
    ))
}

fn desk_config(
    name: &str,
    kind: &str,
    selections: &str,
    seeds: &str,
    scenarios: &str,
    model: &str,
) -> ExperimentConfig {
    let text = format!(
        r#"
name = "{name}"
forcing_variables = ["prcp"]
log_variables = ["prcp"]
[data]
attributes = "attributes.csv"
gauges = "gauges.csv"
regions = "regions.csv"
forcing_dir = "forcing"
flow_dir = "flow"
[split]
kind = "{kind}"
train_start = "2000-01-01"
train_end = "2001-12-31"
test_start = "2002-01-01"
test_end = "2003-12-30"
[aliases]
slope = "k_res_noisy"
area = "area_km2"
forest_fraction = "decoy_1"
soil_porosity = "decoy_2"
max_soil_water = "phi_noisy"
[ensemble]
selections = [{selections}]
seeds = [{seeds}]
{scenarios}
[model]
{model}
"#
    );
    ExperimentConfig::from_toml(&text).expect("desk config")
}

const BOTH_SCENARIOS: &str = "[[scenarios]]\nuse_fdc = false\n[[scenarios]]\nuse_fdc = true\n";

fn c8_directional() -> Outcome {
    let t0 = Instant::now();
    let config = desk_config(
        "pur-desk",
        "pur_regional",
        r#""full-attr", "5-attr", "no-attr""#,
        "1, 2",
        BOTH_SCENARIOS,
        "hidden = 16\ndropout = 0.0\nseq_len = 100\nepochs = 200\nbatch_basins = 8\nbatches_per_epoch = 10\nlearning_rate = 0.01",
    );
    let mut wins = 0;
    let mut lines = Vec::new();
    for rep in 0..5u64 {
        let world = make_world(&WorldConfig::new(30, 2, 100 + rep));
        let ds = Dataset {
            catalog: world.catalog.clone(),
            series: world.series.clone(),
        };
        let plan = make_pur_splits(
            &ds.catalog,
            config.split.train_range(),
            config.split.test_range(),
        )
        .map_err(|e| e.to_string())?
        .into_iter()
        .find(|p| p.label == "R2")
        .ok_or("no R2 plan")?;
        let mut medians = Vec::new();
        for scenario in &config.scenarios {
            let spec = EnsembleSpec {
                selections: config.ensemble.selections.clone(),
                seeds: config.ensemble.seeds.clone(),
                scenario: *scenario,
            };
            let out =
                run_ensemble(&ds, &plan, &config, &spec, rep, 4).map_err(|e| e.to_string())?;
            let m = out
                .report
                .aggregate(ENSEMBLE)
                .and_then(|a| a.median_nse)
                .ok_or("ensemble median undefined")?;
            medians.push(m);
        }
        let won = medians[1] >= medians[0];
        wins += won as usize;
        lines.push(format!(
            "rep{rep} {:.3}->{:.3}{}",
            medians[0],
            medians[1],
            if won { "" } else { "(lost)" }
        ));
        println!(
            "  criterion 8 rep {rep}: no-fdc {:.3}, all-fdc {:.3}",
            medians[0], medians[1]
        );
    }
    let elapsed = t0.elapsed();
    ensure(wins >= 4, || {
        format!("{wins}/5 replications favour FDCs: {}", lines.join(", "))
    })?;
    ensure(elapsed <= Duration::from_secs(1800), || {
        format!("took {elapsed:?} > 30 min")
    })?;
    Ok(format!(
        "{wins}/5 wins ({}), {:.0}s",
        lines.join(", "),
        elapsed.as_secs_f64()
    ))
}

fn c9_features() -> Outcome {
    let mut wc = WorldConfig::new(20, 1, 300);
    wc.phi_layout = PhiLayout::TwoClass {
        low: 0.1,
        high: 0.8,
    };
    let world = make_world(&wc);
    let ds = Dataset {
        catalog: world.catalog.clone(),
        series: world.series.clone(),
    };
    let plan = make_temporal_split(
        &ds.catalog,
        range("2000-01-01", "2001-12-31"),
        range("2002-01-01", "2003-12-30"),
    )
    .map_err(|e| e.to_string())?;
    let ctx = build_training_context(&ds, &plan, &["prcp".into()], &["prcp".into()], true)
        .map_err(|e| e.to_string())?;
    let mut settings = small_settings(30, 0.0);
    settings.hidden = 16;
    settings.seq_len = 100;
    settings.batch_basins = 8;
    settings.batches_per_epoch = Some(10);
    let (model, _) = train_member(
        &ds,
        &ctx,
        &settings,
        &BTreeMap::new(),
        InputSelection::NoAttr,
        1,
        "all-fdc",
    )
    .map_err(|e| e.to_string())?;
    let table = export_features(
        &model,
        ctx.norm.fdc.as_ref().ok_or("no FDC norm")?,
        &plan.train_basins,
        &ctx.train_fdcs,
    )
    .map_err(|e| e.to_string())?;
    let class: Vec<f64> = table
        .rows
        .iter()
        .map(|r| {
            if world.spec(&r.basin_id).unwrap().phi > 0.5 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let (best, rho) = (0..table.n_features)
        .map(|i| (i, spearman(&table.column(i), &class).unwrap_or(0.0)))
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .ok_or("no features")?;
    ensure(rho.abs() >= 0.8, || {
        format!("best |rho| {:.3} (f{:02}) < 0.8", rho.abs(), best + 1)
    })?;
    Ok(format!(
        "f{:02} has Spearman {rho:.3} with the baseflow class over {} basins",
        best + 1,
        class.len()
    ))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn c10_camels() -> Outcome {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(repo_root().join("configs")).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg =
                ExperimentConfig::load(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            ensure(
                cfg.ensemble.selections.len() * cfg.ensemble.seeds.len() == 18,
                || format!("{}: expected 18 members", path.display()),
            )?;
            names.push(path.file_name().unwrap().to_string_lossy().to_string());
        }
    }
    names.sort();
    ensure(names.len() >= 3, || {
        format!("expected the three CAMELS configs, found {names:?}")
    })?;

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (raw, data, out) = (
        tmp.path().join("raw"),
        tmp.path().join("data"),
        tmp.path().join("run"),
    );
    std::fs::create_dir_all(&raw).map_err(|e| e.to_string())?;
    let world = make_world(&WorldConfig::new(20, 2, 21));
    write_camels_format(&world, &raw).map_err(|e| e.to_string())?;
    let summary = convert_camels(&raw, &data, "daymet", None, None).map_err(|e| e.to_string())?;
    ensure(summary.basins.len() == 20, || {
        "conversion lost basins".into()
    })?;

    let mut cfg = ExperimentConfig::load(&repo_root().join("configs/camels_pur.toml"))
        .map_err(|e| e.to_string())?;
    cfg.data = DataPaths::in_dir(&data);
    cfg.data.signatures = Some(data.join("signatures.csv"));
    cfg.split.train_start = date("2000-01-01");
    cfg.split.train_end = date("2001-12-31");
    cfg.split.test_start = date("2002-01-01");
    cfg.split.test_end = date("2003-12-30");
    cfg.split.region = Some("HUC02".into());
    cfg.ensemble.seeds = vec![1];
    cfg.model = ModelSettings {
        dropout: 0.5,
        ..small_settings(2, 0.5)
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let dataset = Dataset::load(&cfg.data).map_err(|e| e.to_string())?;
    let manifest = run_experiment(&cfg, 10, &dataset, &out).map_err(|e| e.to_string())?;
    ensure(manifest.runs.len() == cfg.scenarios.len(), || {
        "missing scenario runs".into()
    })?;
    let mut rows = 0;
    for run in &manifest.runs {
        let metrics = read_metrics_csv(&out.join(&run.report_dir).join("metrics.csv"))
            .map_err(|e| e.to_string())?;
        let ens = metrics.iter().filter(|r| r.member == ENSEMBLE).count();
        ensure(ens == 10, || {
            format!("{}: {ens} ensemble rows, expected 10", run.report_dir)
        })?;
        ensure(!run.partial, || format!("{}: partial run", run.report_dir))?;
        rows += metrics.len();
    }
    Ok(format!(
        "{} validate; 20-basin CAMELS-format subset ran {} scenarios x 3 members ({rows} metric rows)",
        names.join(", "),
        manifest.runs.len()
    ))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect_files(root, &p, out);
        } else {
            out.push(p.strip_prefix(root).unwrap().to_path_buf());
        }
    }
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let world = make_world(&WorldConfig::new(8, 2, 31));
    write_world(&world, &data).map_err(|e| e.to_string())?;
    let mut config = desk_config(
        "determinism",
        "pur_regional",
        r#""no-attr", "full-attr""#,
        "1, 2",
        "[[scenarios]]\nuse_fdc = false\n[[scenarios]]\nuse_fdc = true\nfraction = 0.5\n",
        "hidden = 8\ndropout = 0.3\nseq_len = 60\nepochs = 3\nbatch_basins = 4\nbatches_per_epoch = 3\nlearning_rate = 0.01",
    );
    config.data = DataPaths::in_dir(&data);
    config.workers = Some(2);
    let dataset = Dataset::load(&config.data).map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_experiment(&config, 2024, &dataset, &a).map_err(|e| e.to_string())?;
    let manifest = RunManifest::load(&a.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    rerun_from_manifest(&manifest, &b).map_err(|e| e.to_string())?;
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    collect_files(&a, &a, &mut fa);
    collect_files(&b, &b, &mut fb);
    fa.sort();
    fb.sort();
    ensure(fa == fb, || "reruns wrote different file sets".into())?;
    let mut csvs = 0;
    for f in &fa {
        let (x, y) = (
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
        );
        ensure(x == y, || format!("{} differs", f.display()))?;
        if f.extension().is_some_and(|e| e == "csv")
            && f.file_name().is_some_and(|n| n == "metrics.csv")
        {
            csvs += 1;
        }
    }
    ensure(csvs == 4, || {
        format!("expected 4 metrics.csv files, found {csvs}")
    })?;
    Ok(format!(
        "{} files byte-identical after rerun ({csvs} metrics.csv)",
        fa.len()
    ))
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "gradient correctness", c1_gradients),
        (2, "FDC oracle equivalence", c2_fdc),
        (3, "migration oracle equivalence", c3_migration),
        (4, "metric oracles", c4_metrics),
        (5, "overfit smoke test", c5_overfit),
        (6, "leakage guard", c6_leakage),
        (7, "ensemble algebra", c7_ensemble),
        (8, "desk-scale directional PUR check", c8_directional),
        (9, "encoder-feature signal", c9_features),
        (10, "CAMELS configs and subset run", c10_camels),
        (11, "manifest rerun determinism", c11_determinism),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
