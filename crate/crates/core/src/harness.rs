//! Experiment grid: data, training and forecasts for every
//! (family, d, N, seed, flavor) cell, plus the derived surfaces.
//!
//! A cell is a pure function of its coordinates and the config, so any
//! cell can be recomputed in isolation and cells can run in any order.
//! Finished cells are cached as individual CSV files under
//! `<output_dir>/cells/`; a rerun only computes the missing ones.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::csvio::{self, fmt_f64, Metadata};
use crate::dataset::{build_training_set, DataConfig, DatasetError, Flavor};
use crate::exec::Execution;
use crate::forecast::{integrate, ForecastError, LearnedField, Method, Trajectory};
use crate::metrics::{self, aggregate, ErrorRecord, MetricsError, ENERGY_ERROR_CAP};
use crate::mlp::MlpParams;
use crate::seeds;
use crate::systems::{ChainParams, Family, PhaseState, SystemError, SystemSpec};
use crate::training::{net_spec_for, train, OptimizerConfig, TrainError, TrainReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("surface axes differ")]
    AxisMismatch,
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub a: f64,
    pub b: f64,
    pub kappa: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        let c = ChainParams::default();
        Self { a: c.a, b: c.b, kappa: c.kappa }
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn short_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to reproduce a sweep. Keys map one-to-one onto the
/// TOML config file and the CLI flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: String,
    pub chain: ChainConfig,
    pub dims: Vec<usize>,
    pub n_train: Vec<usize>,
    /// Seed indices `base_seed .. base_seed + seeds`.
    pub seeds: usize,
    pub base_seed: u64,
    pub flavors: Vec<String>,
    pub energy_range: [f64; 2],
    pub t_train: f64,
    pub dt: f64,
    pub hidden_layers: usize,
    pub width: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub forecasts: usize,
    pub forecast_energy_range: [f64; 2],
    pub forecast_horizon: f64,
    pub forecast_dt: f64,
    pub method: String,
    pub smoothing: f64,
    pub output_dir: String,
    /// Worker threads; 0 uses every core. Does not affect results.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk(Family::Linear)
    }
}

impl ExperimentConfig {
    /// Desk-scale grid: d in {1, 2, 4, 6}, N in {2^7, 2^9, 2^11, 2^13},
    /// 8 seeds, 8 forecasts.
    pub fn desk(family: Family) -> Self {
        Self {
            family: family.tag().to_string(),
            chain: ChainConfig::default(),
            dims: vec![1, 2, 4, 6],
            n_train: vec![1 << 7, 1 << 9, 1 << 11, 1 << 13],
            seeds: 8,
            base_seed: 0,
            flavors: vec!["NN".into(), "HNN".into()],
            energy_range: [0.0, 1.0],
            t_train: 100.0,
            dt: 0.1,
            hidden_layers: 2,
            width: 32,
            learning_rate: 1e-3,
            batch_size: 1,
            epochs: 16,
            forecasts: 8,
            forecast_energy_range: [0.25, 1.0],
            forecast_horizon: 10.0,
            forecast_dt: 0.1,
            method: "rk4".into(),
            smoothing: 0.75,
            output_dir: format!("out/{}", family.tag()),
            jobs: 0,
        }
    }

    /// The full grid: 1 <= d <= 9, N up to 2^15, 64 seeds.
    pub fn full(family: Family) -> Self {
        Self {
            dims: (1..=9).collect(),
            n_train: (0..6).map(|k| 1usize << (5 + 2 * k)).collect(),
            seeds: 64,
            forecasts: 32,
            output_dir: format!("out/full_{}", family.tag()),
            ..Self::desk(family)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn family(&self) -> Result<Family, HarnessError> {
        self.family.parse().map_err(|e: SystemError| HarnessError::Config(e.to_string()))
    }

    pub fn flavors(&self) -> Result<Vec<Flavor>, HarnessError> {
        self.flavors.iter().map(|f| f.parse().map_err(HarnessError::Config)).collect()
    }

    pub fn method(&self) -> Result<Method, HarnessError> {
        self.method.parse().map_err(HarnessError::Config)
    }

    pub fn system(&self, d: usize) -> Result<SystemSpec, HarnessError> {
        let ChainConfig { a, b, kappa } = self.chain;
        Ok(SystemSpec::new(self.family()?, d, ChainParams { a, b, kappa })?)
    }

    pub fn data(&self) -> DataConfig {
        DataConfig { energy_range: self.energy_range, t_total: self.t_train, dt: self.dt }
    }

    pub fn optimizer(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            ..OptimizerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        self.family()?;
        self.method()?;
        if self.flavors()?.is_empty() {
            return bad("flavors must not be empty");
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return bad("dims must be a non-empty list of positive integers");
        }
        if self.n_train.is_empty() || self.n_train.contains(&0) {
            return bad("n_train must be a non-empty list of positive integers");
        }
        if self.seeds == 0 || self.forecasts == 0 {
            return bad("seeds and forecasts must be positive");
        }
        if self.data().samples_per_orbit().is_err() {
            return bad("dt must divide t_train");
        }
        if !(self.forecast_horizon > 0.0 && self.forecast_dt > 0.0) {
            return bad("forecast_horizon and forecast_dt must be positive");
        }
        if !(self.smoothing >= 0.0) {
            return bad("smoothing must be non-negative");
        }
        for d in &self.dims {
            self.system(*d)?;
        }
        self.optimizer(0).validate()?;
        Ok(())
    }

    /// Hash of the canonical TOML with output-only keys blanked.
    pub fn content_hash(&self) -> String {
        short_hash(&Self { output_dir: String::new(), jobs: 0, ..self.clone() }.to_toml())
    }

    pub fn metadata(&self) -> Metadata {
        Metadata::new()
            .with("config_hash", self.content_hash())
            .with("version", crate::VERSION)
            .with("family", &self.family)
            .with("method", &self.method)
    }
}

/// Coordinates of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub family: Family,
    pub d: usize,
    pub n_train: usize,
    pub seed: u64,
    pub flavor: Flavor,
}

impl Cell {
    /// Seed for orbits and pair sampling; shared by both flavors so NN and
    /// HNN see identical data.
    pub fn data_seed(&self) -> u64 {
        seeds::mix(&[seeds::tag(self.family.tag()), self.d as u64, self.n_train as u64, self.seed, seeds::tag("data")])
    }

    /// Seed for weight initialization and shuffling.
    pub fn run_seed(&self) -> u64 {
        seeds::mix(&[
            seeds::tag(self.family.tag()),
            self.d as u64,
            self.n_train as u64,
            self.seed,
            seeds::tag(self.flavor.tag()),
        ])
    }

    /// Seed for forecast initial conditions; shared across N and flavors.
    pub fn forecast_seed(&self) -> u64 {
        seeds::mix(&[seeds::tag(self.family.tag()), self.d as u64, self.seed, seeds::tag("forecast")])
    }

    pub fn file_name(&self) -> String {
        format!("{}_d{}_N{}_s{}_{}.csv", self.family.tag(), self.d, self.n_train, self.seed, self.flavor.tag())
    }
}

pub fn cells(config: &ExperimentConfig) -> Result<Vec<Cell>, HarnessError> {
    let family = config.family()?;
    let flavors = config.flavors()?;
    let mut out = Vec::new();
    for &d in &config.dims {
        for &n_train in &config.n_train {
            for seed in config.base_seed..config.base_seed + config.seeds as u64 {
                for &flavor in &flavors {
                    out.push(Cell { family, d, n_train, seed, flavor });
                }
            }
        }
    }
    Ok(out)
}

/// Initial conditions used for forecasting in a cell.
pub fn forecast_initial_states(config: &ExperimentConfig, cell: &Cell) -> Result<Vec<PhaseState>, HarnessError> {
    let sys = config.system(cell.d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cell.forecast_seed());
    (0..config.forecasts)
        .map(|_| sys.sample_initial_state(config.forecast_energy_range, &mut rng).map_err(HarnessError::from))
        .collect()
}

/// Trains the cell's network. Separate from [`run_cell`] so callers can
/// inspect or perturb the trained model.
pub fn train_cell(config: &ExperimentConfig, cell: &Cell) -> Result<TrainReport, HarnessError> {
    let sys = config.system(cell.d)?;
    let (_, pairs) = build_training_set(&sys, &config.data(), cell.n_train, cell.flavor, cell.data_seed(), Execution::Sequential)?;
    let spec = net_spec_for(cell.flavor, 2 * cell.d, config.hidden_layers, config.width, cell.run_seed());
    Ok(train(&spec, &pairs, &config.optimizer(cell.run_seed()))?)
}

/// Forecasts from each initial state with a trained model and scores the
/// rollouts against the exact dynamics.
pub fn evaluate_model(
    config: &ExperimentConfig,
    cell: &Cell,
    params: &MlpParams,
    cost: f64,
) -> Result<Vec<ErrorRecord>, HarnessError> {
    let sys = config.system(cell.d)?;
    let method = config.method()?;
    let field = LearnedField::new(cell.flavor, params.clone())?;
    let starts = forecast_initial_states(config, cell)?;
    starts
        .iter()
        .enumerate()
        .map(|(i, s0)| {
            let forecast = integrate(&field, s0, config.forecast_horizon, config.forecast_dt, method)?;
            let reference = integrate(&sys, s0, config.forecast_horizon, config.forecast_dt, Method::Rk4)?;
            Ok(score(cell, method, i, &sys, &forecast, &reference, cost)?)
        })
        .collect()
}

fn score(
    cell: &Cell,
    method: Method,
    index: usize,
    sys: &SystemSpec,
    forecast: &Trajectory,
    reference: &Trajectory,
    cost: f64,
) -> Result<ErrorRecord, MetricsError> {
    let energy_error = metrics::capped_energy_error(sys, forecast)?;
    let k = forecast.len();
    let prefix = Trajectory {
        times: reference.times[..k].to_vec(),
        states: reference.states[..k].to_vec(),
        method: reference.method,
        divergent: false,
    };
    let state_error = metrics::state_error(forecast, &prefix)?;
    Ok(ErrorRecord {
        family: cell.family,
        d: cell.d,
        n_train: cell.n_train,
        seed: cell.seed,
        flavor: cell.flavor,
        method,
        forecast: index,
        energy_error,
        state_error,
        cost,
        divergent: forecast.divergent,
    })
}

/// Generates data, trains, forecasts and scores one cell. A run whose
/// training blows up yields capped, divergent records instead of an error.
pub fn run_cell(config: &ExperimentConfig, cell: &Cell) -> Result<Vec<ErrorRecord>, HarnessError> {
    match train_cell(config, cell) {
        Ok(report) => {
            let cost = report.epoch_costs.last().copied().unwrap_or(f64::NAN);
            evaluate_model(config, cell, &report.params, cost)
        }
        Err(HarnessError::Train(TrainError::NonFinite { .. })) => {
            let method = config.method()?;
            Ok((0..config.forecasts)
                .map(|i| ErrorRecord {
                    family: cell.family,
                    d: cell.d,
                    n_train: cell.n_train,
                    seed: cell.seed,
                    flavor: cell.flavor,
                    method,
                    forecast: i,
                    energy_error: ENERGY_ERROR_CAP,
                    state_error: f64::INFINITY,
                    cost: f64::INFINITY,
                    divergent: true,
                })
                .collect())
        }
        Err(e) => Err(e),
    }
}

/// Mean energy error per (d, N) for one flavor.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub label: String,
    pub d_values: Vec<usize>,
    pub n_values: Vec<usize>,
    /// `cells[i][j]` belongs to `d_values[i]`, `n_values[j]`.
    pub cells: Vec<Vec<Option<f64>>>,
    pub smoothing: f64,
}

impl SurfaceGrid {
    pub fn get(&self, d: usize, n: usize) -> Option<f64> {
        let i = self.d_values.iter().position(|&x| x == d)?;
        let j = self.n_values.iter().position(|&x| x == n)?;
        self.cells[i][j]
    }

    /// Pools every record of `flavor` per (d, N) and takes the mean energy
    /// error.
    pub fn from_records(records: &[ErrorRecord], flavor: Flavor, d_values: &[usize], n_values: &[usize]) -> Self {
        let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for r in records.iter().filter(|r| r.flavor == flavor) {
            groups.entry((r.d, r.n_train)).or_default().push(r.energy_error);
        }
        let cells = d_values
            .iter()
            .map(|&d| {
                n_values
                    .iter()
                    .map(|&n| groups.get(&(d, n)).and_then(|v| aggregate(v).ok()).map(|a| a.mean))
                    .collect()
            })
            .collect();
        Self {
            label: flavor.tag().to_string(),
            d_values: d_values.to_vec(),
            n_values: n_values.to_vec(),
            cells,
            smoothing: 0.0,
        }
    }

    /// Gaussian smoothing in grid-index units over (d, log2 N); undefined
    /// cells neither contribute nor receive values. Width 0 is the identity.
    pub fn smoothed(&self, width: f64) -> Self {
        let mut out = self.clone();
        out.smoothing = width;
        if width <= 0.0 {
            return out;
        }
        let (rows, cols) = (self.d_values.len(), self.n_values.len());
        for i in 0..rows {
            for j in 0..cols {
                if self.cells[i][j].is_none() {
                    continue;
                }
                let (mut num, mut den) = (0.0, 0.0);
                for (a, row) in self.cells.iter().enumerate() {
                    for (b, v) in row.iter().enumerate() {
                        if let Some(v) = v {
                            let r2 = (a as f64 - i as f64).powi(2) + (b as f64 - j as f64).powi(2);
                            let w = (-r2 / (2.0 * width * width)).exp();
                            num += w * v;
                            den += w;
                        }
                    }
                }
                out.cells[i][j] = Some(num / den);
            }
        }
        out
    }

    pub fn to_csv(&self, meta: &Metadata) -> String {
        let mut rows = Vec::new();
        for (i, d) in self.d_values.iter().enumerate() {
            for (j, n) in self.n_values.iter().enumerate() {
                let v = self.cells[i][j].map_or(String::new(), fmt_f64);
                rows.push(vec![d.to_string(), n.to_string(), v]);
            }
        }
        let meta = meta.clone().with("surface", &self.label).with("smoothing", self.smoothing);
        csvio::render(&meta, &["d", "N", "value"], rows)
    }

    pub fn from_csv(text: &str) -> Result<Self, HarnessError> {
        let t = csvio::parse(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let parse_err = |s: &str| HarnessError::Config(format!("bad surface value `{s}`"));
        let mut d_values: Vec<usize> = Vec::new();
        let mut n_values: Vec<usize> = Vec::new();
        let mut entries = Vec::new();
        for row in &t.rows {
            let d: usize = row[0].parse().map_err(|_| parse_err(&row[0]))?;
            let n: usize = row[1].parse().map_err(|_| parse_err(&row[1]))?;
            let v = if row[2].is_empty() { None } else { Some(row[2].parse::<f64>().map_err(|_| parse_err(&row[2]))?) };
            if !d_values.contains(&d) {
                d_values.push(d);
            }
            if !n_values.contains(&n) {
                n_values.push(n);
            }
            entries.push((d, n, v));
        }
        let mut cells = vec![vec![None; n_values.len()]; d_values.len()];
        for (d, n, v) in entries {
            let i = d_values.iter().position(|&x| x == d).unwrap();
            let j = n_values.iter().position(|&x| x == n).unwrap();
            cells[i][j] = v;
        }
        Ok(Self {
            label: t.meta.get("surface").unwrap_or("").to_string(),
            d_values,
            n_values,
            cells,
            smoothing: t.meta.get("smoothing").and_then(|s| s.parse().ok()).unwrap_or(0.0),
        })
    }
}

/// Elementwise NN / HNN mean-error ratio, then smoothing.
pub fn ratio_surface(nn: &SurfaceGrid, hnn: &SurfaceGrid, width: f64) -> Result<SurfaceGrid, HarnessError> {
    if nn.d_values != hnn.d_values || nn.n_values != hnn.n_values {
        return Err(HarnessError::AxisMismatch);
    }
    let cells = nn
        .cells
        .iter()
        .zip(&hnn.cells)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| match (x, y) {
                    (Some(x), Some(y)) if *y != 0.0 => Some(x / y),
                    _ => None,
                })
                .collect()
        })
        .collect();
    let raw = SurfaceGrid {
        label: "NN/HNN".into(),
        d_values: nn.d_values.clone(),
        n_values: nn.n_values.clone(),
        cells,
        smoothing: 0.0,
    };
    Ok(raw.smoothed(width))
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub records: Vec<ErrorRecord>,
    pub computed: usize,
    pub reused: usize,
    pub surfaces: Vec<SurfaceGrid>,
    pub ratio: Option<SurfaceGrid>,
    pub records_path: PathBuf,
}

fn load_cell(path: &Path, expected: usize) -> Option<Vec<ErrorRecord>> {
    let text = fs::read_to_string(path).ok()?;
    let (_, recs) = metrics::parse_records(&text).ok()?;
    (recs.len() == expected).then_some(recs)
}

/// Runs every cell of the grid (reusing cached cells), then writes
/// `records.csv`, one mean surface per flavor and, with both flavors, the
/// smoothed ratio surface.
pub fn sweep(config: &ExperimentConfig, exec: Execution) -> Result<SweepOutcome, HarnessError> {
    config.validate()?;
    let out_dir = PathBuf::from(&config.output_dir);
    let cell_dir = out_dir.join("cells");
    fs::create_dir_all(&cell_dir).map_err(io_err(&cell_dir))?;
    let meta = config.metadata();
    let all = cells(config)?;

    let results: Vec<Result<(Vec<ErrorRecord>, bool), HarnessError>> = exec.with_threads(config.jobs, || {
        exec.map(&all, |cell| {
            let path = cell_dir.join(cell.file_name());
            if let Some(recs) = load_cell(&path, config.forecasts) {
                return Ok((recs, false));
            }
            let recs = run_cell(config, cell)?;
            csvio::write_atomic(&path, &metrics::records_csv(&recs, &meta)).map_err(io_err(&path))?;
            Ok((recs, true))
        })
    });

    let mut records = Vec::new();
    let (mut computed, mut reused) = (0, 0);
    for r in results {
        let (recs, fresh) = r?;
        if fresh {
            computed += 1;
        } else {
            reused += 1;
        }
        records.extend(recs);
    }
    records.sort_by(|a, b| a.key().cmp(&b.key()));

    let records_path = out_dir.join("records.csv");
    csvio::write_atomic(&records_path, &metrics::records_csv(&records, &meta)).map_err(io_err(&records_path))?;

    let mut surfaces = Vec::new();
    for flavor in config.flavors()? {
        let s = SurfaceGrid::from_records(&records, flavor, &config.dims, &config.n_train);
        let path = out_dir.join(format!("surface_{}.csv", flavor.tag()));
        csvio::write_atomic(&path, &s.to_csv(&meta)).map_err(io_err(&path))?;
        surfaces.push(s);
    }
    let find = |f: Flavor| surfaces.iter().find(|s| s.label == f.tag());
    let ratio = match (find(Flavor::Nn), find(Flavor::Hnn)) {
        (Some(nn), Some(hnn)) => {
            let r = ratio_surface(nn, hnn, config.smoothing)?;
            let path = out_dir.join("ratio.csv");
            let meta = meta.clone().with("ratio", "mean(NN dE/E) / mean(HNN dE/E)");
            csvio::write_atomic(&path, &r.to_csv(&meta)).map_err(io_err(&path))?;
            Some(r)
        }
        _ => None,
    };

    Ok(SweepOutcome { records, computed, reused, surfaces, ratio, records_path })
}

/// Samples a trained d = 1 linear-oscillator model on a regular grid next
/// to its exact target surface. HNN: `H(q, p)` against `(q^2 + p^2) / 2`.
/// NN: `(F1, F2)(q, qdot)` against `(qdot, -q)`. `inside` flags points
/// within the training disk of energy `train_energy`.
pub fn map_surface_export(
    field: &LearnedField,
    bounds: [f64; 2],
    resolution: [usize; 2],
    train_energy: f64,
    meta: &Metadata,
) -> Result<String, HarnessError> {
    if field.d != 1 {
        return Err(HarnessError::Config(format!("map surfaces need a d = 1 model, got d = {}", field.d)));
    }
    let [rows, cols] = resolution;
    if rows < 2 || cols < 2 || !(bounds[1] > bounds[0]) {
        return Err(HarnessError::Config("map surface needs at least a 2x2 grid over a non-empty range".into()));
    }
    let axis = |k: usize, n: usize| bounds[0] + (bounds[1] - bounds[0]) * k as f64 / (n - 1) as f64;
    let radius2 = 2.0 * train_energy;
    let params = &field.params;
    let mut out_rows = Vec::with_capacity(rows * cols);
    let header: Vec<&str> = match field.flavor {
        Flavor::Hnn => vec!["q", "p", "learned_H", "learned_H_shifted", "target_H", "inside"],
        Flavor::Nn => vec!["q", "qdot", "learned_F1", "learned_F2", "target_F1", "target_F2", "inside"],
    };
    let h_origin = match field.flavor {
        Flavor::Hnn => params.forward(&[0.0, 0.0]).map_err(ForecastError::from)?[0],
        Flavor::Nn => 0.0,
    };
    for r in 0..rows {
        let x = axis(r, rows);
        for c in 0..cols {
            let y = axis(c, cols);
            let inside = (x * x + y * y <= radius2).to_string();
            let learned = params.forward(&[x, y]).map_err(ForecastError::from)?;
            let mut row = vec![fmt_f64(x), fmt_f64(y)];
            match field.flavor {
                Flavor::Hnn => {
                    row.push(fmt_f64(learned[0]));
                    row.push(fmt_f64(learned[0] - h_origin));
                    row.push(fmt_f64(0.5 * (x * x + y * y)));
                }
                Flavor::Nn => {
                    row.push(fmt_f64(learned[0]));
                    row.push(fmt_f64(learned[1]));
                    row.push(fmt_f64(y));
                    row.push(fmt_f64(-x));
                }
            }
            row.push(inside);
            out_rows.push(row);
        }
    }
    let meta = meta.clone().with("flavor", field.flavor).with("train_energy", train_energy);
    Ok(csvio::render(&meta, &header, out_rows))
}

/// Single-orbit comparison on the d = 1 linear oscillator. Defaults: 2^7
/// orbits of length 2 pi sampled every 2 pi / 2^7, energies in [1e-3, 1],
/// 2^14 pairs, 2^4 epochs, forecast over 16 pi from (1, 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    pub n_train: usize,
    pub energy_range: [f64; 2],
    pub t_train: f64,
    pub dt: f64,
    pub hidden_layers: usize,
    pub width: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub horizon: f64,
    pub forecast_dt: f64,
    pub start: [f64; 2],
    pub method: String,
}

impl Default for DriftConfig {
    fn default() -> Self {
        let two_pi = 2.0 * std::f64::consts::PI;
        Self {
            n_train: 1 << 14,
            energy_range: [1e-3, 1.0],
            t_train: two_pi,
            dt: two_pi / 128.0,
            hidden_layers: 2,
            width: 32,
            learning_rate: 1e-3,
            batch_size: 1,
            epochs: 16,
            seed: 0,
            horizon: 8.0 * two_pi,
            forecast_dt: two_pi / 128.0,
            start: [1.0, 0.0],
            method: "rk4".into(),
        }
    }
}

impl DriftConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn content_hash(&self) -> String {
        short_hash(&self.to_toml())
    }
}

#[derive(Debug, Clone)]
pub struct DriftOutcome {
    pub nn: Trajectory,
    pub hnn: Trajectory,
    pub exact: Trajectory,
    pub nn_error: f64,
    pub hnn_error: f64,
    pub exact_error: f64,
    pub nn_report: TrainReport,
    pub hnn_report: TrainReport,
}

impl DriftOutcome {
    /// Relative energy error at the last forecast time, per flavor.
    pub fn final_errors(&self) -> (f64, f64) {
        let sys = SystemSpec::linear(1);
        let fin = |t: &Trajectory| {
            let e0 = sys.energy_unchecked(&t.states[0].q, &t.states[0].p);
            let s = t.states.last().unwrap();
            (sys.energy_unchecked(&s.q, &s.p) - e0).abs() / e0.abs()
        };
        (fin(&self.nn), fin(&self.hnn))
    }

    pub fn to_csv(&self, meta: &Metadata) -> String {
        let sys = SystemSpec::linear(1);
        let header = ["t", "q_nn", "p_nn", "E_nn", "q_hnn", "p_hnn", "E_hnn", "q_exact", "p_exact", "E_exact"];
        let cell = |t: &Trajectory, k: usize| -> Vec<String> {
            match t.states.get(k) {
                Some(s) => vec![fmt_f64(s.q[0]), fmt_f64(s.p[0]), fmt_f64(sys.energy_unchecked(&s.q, &s.p))],
                None => vec![String::new(); 3],
            }
        };
        let rows = self.exact.times.iter().enumerate().map(|(k, t)| {
            let mut row = vec![fmt_f64(*t)];
            row.extend(cell(&self.nn, k));
            row.extend(cell(&self.hnn, k));
            row.extend(cell(&self.exact, k));
            row
        });
        let meta = meta
            .clone()
            .with("dE_over_E_nn", fmt_f64(self.nn_error))
            .with("dE_over_E_hnn", fmt_f64(self.hnn_error))
            .with("dE_over_E_exact", fmt_f64(self.exact_error));
        csvio::render(&meta, &header, rows)
    }
}

/// Trains one NN and one HNN on identical data and forecasts both from
/// `config.start`, alongside the exact rollout.
pub fn drift_experiment(config: &DriftConfig, exec: Execution) -> Result<DriftOutcome, HarnessError> {
    let sys = SystemSpec::linear(1);
    let method: Method = config.method.parse().map_err(HarnessError::Config)?;
    let data = DataConfig { energy_range: config.energy_range, t_total: config.t_train, dt: config.dt };
    let data_seed = seeds::mix(&[config.seed, seeds::tag("drift-data")]);
    let (orbits, nn_pairs) = build_training_set(&sys, &data, config.n_train, Flavor::Nn, data_seed, exec)?;
    let hnn_pairs: Vec<_> = nn_pairs
        .iter()
        .map(|p| crate::dataset::TrainingPair { flavor: Flavor::Hnn, ..p.clone() })
        .collect();
    drop(orbits);

    let flavors = [(Flavor::Nn, &nn_pairs), (Flavor::Hnn, &hnn_pairs)];
    let reports = exec.map(&flavors, |(flavor, pairs)| {
        let seed = seeds::mix(&[config.seed, seeds::tag(flavor.tag())]);
        let spec = net_spec_for(*flavor, 2, config.hidden_layers, config.width, seed);
        let opt = OptimizerConfig {
            learning_rate: config.learning_rate,
            batch_size: config.batch_size,
            epochs: config.epochs,
            seed,
            ..OptimizerConfig::default()
        };
        train(&spec, pairs, &opt)
    });
    let mut reports = reports.into_iter();
    let nn_report = reports.next().unwrap()?;
    let hnn_report = reports.next().unwrap()?;

    let s0 = PhaseState::new(vec![config.start[0]], vec![config.start[1]]);
    let nn_field = LearnedField::new(Flavor::Nn, nn_report.params.clone())?;
    let hnn_field = LearnedField::new(Flavor::Hnn, hnn_report.params.clone())?;
    let nn = integrate(&nn_field, &s0, config.horizon, config.forecast_dt, method)?;
    let hnn = integrate(&hnn_field, &s0, config.horizon, config.forecast_dt, method)?;
    let exact = integrate(&sys, &s0, config.horizon, config.forecast_dt, Method::Rk4)?;
    Ok(DriftOutcome {
        nn_error: metrics::energy_relative_error(&sys, &nn)?,
        hnn_error: metrics::energy_relative_error(&sys, &hnn)?,
        exact_error: metrics::energy_relative_error(&sys, &exact)?,
        nn,
        hnn,
        exact,
        nn_report,
        hnn_report,
    })
}
