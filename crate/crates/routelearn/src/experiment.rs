//! Experiment orchestration: the 75/5/20 split, method runners for the
//! theory baselines and the learned models, the data-sparsity sweep, and
//! report emission.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::baseline::{train_baseline_on_samples, BaselineParams};
use crate::datagen::{subsample_indices, DriverModel, GenManifest, SyntheticDataset, TrafficOptions};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pairs, MetricReport};
use crate::model::{
    build_samples, train_on_samples, ModelInputs, Optimizer, ResidualParams, Sample, TrainConfig,
    TrainableNet,
};
use crate::roadnet::Route;
use crate::router::{route_di_dis, route_di_time};
use crate::validator::project;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    DiDis,
    DiTime,
    AStar,
    Nn,
    Lfd,
    L2r,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::DiDis,
        Method::DiTime,
        Method::AStar,
        Method::Nn,
        Method::Lfd,
        Method::L2r,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::DiDis => "di-dis",
            Method::DiTime => "di-time",
            Method::AStar => "astar",
            Method::Nn => "nn",
            Method::Lfd => "lfd",
            Method::L2r => "l2r",
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {name:?}; expected one of di-dis, di-time, astar, nn, lfd, l2r"
                ))
            })
    }

    /// Theory methods need no training and therefore cannot react to the
    /// amount of data.
    pub fn needs_training(&self) -> bool {
        matches!(self, Method::Nn | Method::Lfd | Method::L2r)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Disjoint covering index sets over a dataset's routes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

const SPLIT_SHARES: [f64; 3] = [0.75, 0.05, 0.20];

/// Seeded random 75/5/20 partition with largest-remainder rounding
/// (remainder ties go to train, then val, then test).
pub fn split(route_count: usize, seed: u64) -> Result<Split> {
    if route_count < 20 {
        return Err(Error::Config(format!(
            "need at least 20 routes to split, got {route_count}"
        )));
    }
    let n = route_count as f64;
    let mut counts = [0usize; 3];
    let mut remainders = [(0.0, 0usize); 3];
    for (i, share) in SPLIT_SHARES.iter().enumerate() {
        let exact = share * n;
        counts[i] = exact.floor() as usize;
        remainders[i] = (exact - exact.floor(), i);
    }
    let mut leftover = route_count - counts.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }

    let mut order: Vec<usize> = (0..route_count).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let train = order[..counts[0]].to_vec();
    let val = order[counts[0]..counts[0] + counts[1]].to_vec();
    let test = order[counts[0] + counts[1]..].to_vec();
    Ok(Split { train, val, test })
}

/// Everything precomputed once per dataset: model inputs and one prepared
/// sample (with its cached A* route) per route.
pub struct PreparedData {
    pub inputs: ModelInputs,
    pub samples: Vec<Sample>,
}

pub fn prepare(dataset: &SyntheticDataset) -> Result<PreparedData> {
    let inputs = ModelInputs::new(&dataset.net, &dataset.traffic)?;
    let samples = build_samples(&dataset.net, &dataset.traffic, &inputs, &dataset.routes)?;
    Ok(PreparedData { inputs, samples })
}

/// One method evaluated on the test split.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub report: MetricReport,
    pub predictions: Vec<Route>,
}

fn gather<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Splits a base seed into decorrelated per-task streams.
fn derive_seed(base: u64, tag: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(tag)
}

fn method_tag(method: Method) -> u64 {
    Method::ALL.iter().position(|m| *m == method).unwrap() as u64
}

/// Demonstration augmentation: the train split plus `train.len()` pseudo
/// samples whose queries are resampled (with replacement) from the train
/// query distribution and whose targets are their A* routes.
fn lfd_augment(train: &[Sample], seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut augmented = train.to_vec();
    for _ in 0..train.len() {
        let pick = &train[rng.gen_range(0..train.len())];
        augmented.push(Sample {
            target: pick.theory.clone(),
            ..pick.clone()
        });
    }
    augmented
}

fn project_probs(
    dataset: &SyntheticDataset,
    sample: &Sample,
    probs: Vec<f64>,
) -> Result<Route> {
    let soft = crate::model::SoftRoute::new(probs)?;
    project(&dataset.net, &soft, sample.query)
}

fn run_prepared(
    method: Method,
    dataset: &SyntheticDataset,
    prepared: &PreparedData,
    train_idx: &[usize],
    val_idx: &[usize],
    test_idx: &[usize],
    config: &TrainConfig,
) -> Result<MethodRun> {
    let test_samples = gather(&prepared.samples, test_idx);
    let inputs = &prepared.inputs;

    let predictions: Vec<Route> = match method {
        Method::DiDis => test_samples
            .iter()
            .map(|s| Ok(route_di_dis(&dataset.net, s.query)?.to_route()))
            .collect::<Result<_>>()?,
        Method::DiTime => test_samples
            .iter()
            .map(|s| Ok(route_di_time(&dataset.net, &dataset.traffic, s.query)?.to_route()))
            .collect::<Result<_>>()?,
        Method::AStar => test_samples
            .iter()
            .map(|s| {
                // The A* vector is already cached on the sample.
                Route::from_edge_ids(
                    s.query,
                    &s.theory
                        .iter()
                        .enumerate()
                        .filter_map(|(e, &on)| (on == 1.0).then_some(e))
                        .collect::<Vec<_>>(),
                    dataset.net.segment_count(),
                )
            })
            .collect::<Result<_>>()?,
        Method::Nn | Method::Lfd => {
            let train_samples = gather(&prepared.samples, train_idx);
            let train_samples = if method == Method::Lfd {
                lfd_augment(&train_samples, derive_seed(config.seed, 100 + method_tag(method)))
            } else {
                train_samples
            };
            let val_samples = gather(&prepared.samples, val_idx);
            let (params, _) = train_baseline_on_samples(config, inputs, &train_samples, &val_samples)?;
            predict_with_baseline(&params, dataset, inputs, &test_samples)?
        }
        Method::L2r => {
            let train_samples = gather(&prepared.samples, train_idx);
            let val_samples = gather(&prepared.samples, val_idx);
            let (params, _) = train_on_samples(config, inputs, &train_samples, &val_samples)?;
            predict_with_residual(&params, dataset, inputs, &test_samples)?
        }
    };

    let truths = gather(&dataset.routes, test_idx);
    let report = evaluate_pairs(&dataset.net, &predictions, &truths)?;
    Ok(MethodRun {
        method,
        report,
        predictions,
    })
}

/// Residual-model predictions for prepared samples (A* route, correction,
/// projection), without re-deriving the dataset constants per query.
pub fn predict_with_residual(
    params: &ResidualParams,
    dataset: &SyntheticDataset,
    inputs: &ModelInputs,
    samples: &[Sample],
) -> Result<Vec<Route>> {
    let pre = params.constant_pre(inputs);
    samples
        .iter()
        .map(|s| project_probs(dataset, s, params.probs(inputs, &pre, s)))
        .collect()
}

pub fn predict_with_baseline(
    params: &BaselineParams,
    dataset: &SyntheticDataset,
    inputs: &ModelInputs,
    samples: &[Sample],
) -> Result<Vec<Route>> {
    let pre = params.constant_pre(inputs);
    samples
        .iter()
        .map(|s| project_probs(dataset, s, params.probs(inputs, &pre, s)))
        .collect()
}

/// Runs one method end to end: theory methods predict directly, learned
/// methods train on the train split first. All predictions are projected
/// valid paths evaluated on the test split.
pub fn run_method(
    method: Method,
    dataset: &SyntheticDataset,
    split: &Split,
    config: &TrainConfig,
) -> Result<MethodRun> {
    let prepared = prepare(dataset)?;
    run_prepared(
        method,
        dataset,
        &prepared,
        &split.train,
        &split.val,
        &split.test,
        config,
    )
}

pub const DEFAULT_FRACTIONS: [f64; 5] = [1.0, 0.5, 0.2, 0.05, 0.01];

/// Results of a sparsity sweep: one metric report per (method, fraction).
#[derive(Debug, Clone)]
pub struct SweepTable {
    pub methods: Vec<Method>,
    pub fractions: Vec<f64>,
    /// `reports[method_index][fraction_index]`.
    pub reports: Vec<Vec<MetricReport>>,
}

/// Retrains every trainable method on shrinking subsets of the train split
/// and re-evaluates on the untouched test split. Subsamples are nested
/// across fractions; theory methods are computed once per fraction and stay
/// constant by construction.
pub fn sparsity_sweep(
    dataset: &SyntheticDataset,
    fractions: &[f64],
    methods: &[Method],
    config: &TrainConfig,
    seed: u64,
) -> Result<SweepTable> {
    if fractions.is_empty() || methods.is_empty() {
        return Err(Error::Config("sweep needs at least one fraction and method".into()));
    }
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("fraction {f} outside (0, 1]")));
        }
    }
    let split = split(dataset.routes.len(), seed)?;
    let prepared = prepare(dataset)?;
    let subsample_seed = derive_seed(seed, 0xF00D);

    let mut reports = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut row = Vec::with_capacity(fractions.len());
        for (f_idx, &fraction) in fractions.iter().enumerate() {
            let positions = subsample_indices(split.train.len(), fraction, subsample_seed)?;
            let sub_train: Vec<usize> = positions.iter().map(|&p| split.train[p]).collect();
            let run_config = TrainConfig {
                seed: derive_seed(seed, method_tag(method) * 64 + f_idx as u64),
                ..*config
            };
            let run = run_prepared(
                method,
                dataset,
                &prepared,
                &sub_train,
                &split.val,
                &split.test,
                &run_config,
            )?;
            row.push(run.report);
        }
        reports.push(row);
    }
    Ok(SweepTable {
        methods: methods.to_vec(),
        fractions: fractions.to_vec(),
        reports,
    })
}

fn fraction_label(fraction: f64) -> String {
    let pct = fraction * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{:.0}%", pct)
    } else {
        format!("{:.2}%", pct)
    }
}

impl SweepTable {
    pub fn f1(&self, method: Method, fraction_index: usize) -> Option<f64> {
        let row = self.methods.iter().position(|m| *m == method)?;
        Some(self.reports[row][fraction_index].f1)
    }

    /// F1 table in the sparsity-study layout: one row per method, one column
    /// per fraction, plus the relative improvement of l2r over the best
    /// other method when l2r is present.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for &f in &self.fractions {
            out.push(',');
            out.push_str(&fraction_label(f));
        }
        out.push('\n');
        for (row, method) in self.methods.iter().enumerate() {
            out.push_str(method.name());
            for report in &self.reports[row] {
                out.push_str(&format!(",{:.4}", report.f1));
            }
            out.push('\n');
        }
        if let Some(l2r_row) = self.methods.iter().position(|m| *m == Method::L2r) {
            if self.methods.len() > 1 {
                out.push_str("improvement");
                for f_idx in 0..self.fractions.len() {
                    let best_other = self
                        .reports
                        .iter()
                        .enumerate()
                        .filter(|(row, _)| *row != l2r_row)
                        .map(|(_, reports)| reports[f_idx].f1)
                        .fold(f64::MIN, f64::max);
                    let ours = self.reports[l2r_row][f_idx].f1;
                    let improvement = if best_other > 0.0 {
                        (ours - best_other) / best_other * 100.0
                    } else {
                        0.0
                    };
                    out.push_str(&format!(",{:.1}%", improvement));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Long format for external plotting: method,fraction,metric,value.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("method,fraction,metric,value\n");
        for (row, method) in self.methods.iter().enumerate() {
            for (f_idx, &fraction) in self.fractions.iter().enumerate() {
                let r = &self.reports[row][f_idx];
                for (metric, value) in [
                    ("precision", r.precision),
                    ("recall", r.recall),
                    ("f1", r.f1),
                    ("match_dist", r.match_distance),
                    ("match90", r.match90),
                ] {
                    out.push_str(&format!("{},{},{},{:.6}\n", method.name(), fraction, metric, value));
                }
            }
        }
        out
    }

    pub fn to_summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            method: &'a str,
            fraction: f64,
            #[serde(flatten)]
            report: &'a MetricReport,
        }
        let rows: Vec<Row> = self
            .methods
            .iter()
            .enumerate()
            .flat_map(|(row, method)| {
                self.fractions.iter().enumerate().map(move |(f_idx, &fraction)| Row {
                    method: method.name(),
                    fraction,
                    report: &self.reports[row][f_idx],
                })
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&rows).expect("summary serialization cannot fail");
        text.push('\n');
        text
    }
}

/// `method,P,R,F1,match_dist,match90` rows for evaluated methods.
pub fn reports_to_csv(runs: &[(Method, MetricReport)]) -> String {
    let mut out = String::from("method,P,R,F1,match_dist,match90\n");
    for (method, r) in runs {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            method.name(),
            r.precision,
            r.recall,
            r.f1,
            r.match_distance,
            r.match90
        ));
    }
    out
}

pub fn save_sweep_outputs(table: &SweepTable, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, content) in [
        ("sweep.csv", table.to_csv()),
        ("long.csv", table.to_long_csv()),
        ("summary.json", table.to_summary_json()),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Flat key-value run configuration: training hyperparameters plus the
/// generation parameters, overridable from a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub block_m: f64,
    pub t_total: usize,
    pub route_count: usize,
    pub min_od_hops: usize,
    pub alpha_time: f64,
    pub alpha_cond: f64,
    pub noise_scale: f64,
    pub diurnal_amplitude: f64,
    pub congestion_fraction: f64,
    pub congestion_factor: f64,
    pub congestion_window: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_width: usize,
    pub optimizer: Optimizer,
    pub fractions: Vec<f64>,
}

impl Default for AppConfig {
    fn default() -> Self {
        let manifest = GenManifest::new(0);
        let train = TrainConfig::default();
        AppConfig {
            seed: 0,
            rows: manifest.rows,
            cols: manifest.cols,
            block_m: manifest.block_m,
            t_total: manifest.t_total,
            route_count: manifest.route_count,
            min_od_hops: manifest.min_od_hops,
            alpha_time: manifest.driver.alpha_time,
            alpha_cond: manifest.driver.alpha_cond,
            noise_scale: manifest.driver.noise_scale,
            diurnal_amplitude: manifest.traffic.diurnal_amplitude,
            congestion_fraction: manifest.traffic.congestion_fraction,
            congestion_factor: manifest.traffic.congestion_factor,
            congestion_window: manifest.traffic.congestion_window,
            learning_rate: train.learning_rate,
            epochs: train.epochs,
            batch_size: train.batch_size,
            hidden_width: train.hidden_width,
            optimizer: train.optimizer,
            fractions: DEFAULT_FRACTIONS.to_vec(),
        }
    }
}

impl AppConfig {
    /// Generation manifest with sub-seeds derived from the base seed.
    pub fn manifest(&self) -> GenManifest {
        GenManifest {
            rows: self.rows,
            cols: self.cols,
            block_m: self.block_m,
            net_seed: self.seed,
            t_total: self.t_total,
            traffic_seed: self.seed.wrapping_add(1),
            traffic: TrafficOptions {
                diurnal_amplitude: self.diurnal_amplitude,
                congestion_fraction: self.congestion_fraction,
                congestion_factor: self.congestion_factor,
                congestion_window: self.congestion_window,
            },
            driver: DriverModel {
                alpha_time: self.alpha_time,
                alpha_cond: self.alpha_cond,
                noise_scale: self.noise_scale,
                seed: self.seed.wrapping_add(2),
            },
            route_count: self.route_count,
            route_seed: self.seed.wrapping_add(3),
            min_od_hops: self.min_od_hops,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            hidden_width: self.hidden_width,
            optimizer: self.optimizer,
        }
    }

    /// Applies `key = value` lines over the current values. `#` starts a
    /// comment; unknown keys and unparsable values are configuration errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |e: String| Error::Config(format!("line {}: {key}: {e}", lineno + 1));
            macro_rules! set {
                ($field:ident, $ty:ty) => {
                    self.$field = value.parse::<$ty>().map_err(|e| bad(e.to_string()))?
                };
            }
            match key {
                "seed" => set!(seed, u64),
                "rows" => set!(rows, usize),
                "cols" => set!(cols, usize),
                "block_m" => set!(block_m, f64),
                "t_total" => set!(t_total, usize),
                "route_count" => set!(route_count, usize),
                "min_od_hops" => set!(min_od_hops, usize),
                "alpha_time" => set!(alpha_time, f64),
                "alpha_cond" => set!(alpha_cond, f64),
                "noise_scale" => set!(noise_scale, f64),
                "diurnal_amplitude" => set!(diurnal_amplitude, f64),
                "congestion_fraction" => set!(congestion_fraction, f64),
                "congestion_factor" => set!(congestion_factor, f64),
                "congestion_window" => set!(congestion_window, f64),
                "learning_rate" => set!(learning_rate, f64),
                "epochs" => set!(epochs, usize),
                "batch_size" => set!(batch_size, usize),
                "hidden_width" => set!(hidden_width, usize),
                "momentum" => {
                    let momentum = value.parse::<f64>().map_err(|e| bad(e.to_string()))?;
                    self.optimizer = Optimizer::Momentum { momentum };
                }
                "optimizer" => {
                    self.optimizer = match value {
                        "sgd" => Optimizer::Sgd,
                        "momentum" => match self.optimizer {
                            Optimizer::Momentum { .. } => self.optimizer,
                            Optimizer::Sgd => Optimizer::Momentum { momentum: 0.9 },
                        },
                        other => return Err(bad(format!("unknown optimizer {other:?}"))),
                    };
                }
                "fractions" => {
                    self.fractions = value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
                        .collect::<Result<_>>()?;
                }
                other => {
                    return Err(Error::Config(format!("line {}: unknown key {other:?}", lineno + 1)))
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AppConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = AppConfig::default();
        config.apply_text(&text)?;
        Ok(config)
    }
}
