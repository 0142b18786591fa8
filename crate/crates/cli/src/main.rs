use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hamnet::csvio::{self, fmt_f64, Metadata};
use hamnet::dataset::{build_training_set, orbits_csv, pairs_csv};
use hamnet::forecast::{integrate, LearnedField};
use hamnet::harness::{self, short_hash, DriftConfig, ExperimentConfig, SurfaceGrid};
use hamnet::metrics::{self, aggregate, fit_power_law};
use hamnet::{Execution, Family, Flavor, MlpParams, PhaseState};

#[derive(Parser)]
#[command(name = "hamnet", version, about = "Hamiltonian vs conventional neural network forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample orbits and training pairs for one (family, d, N, seed).
    Generate(GenerateArgs),
    /// Train one network and save its parameters.
    Train(TrainArgs),
    /// Roll out a trained network (or the exact field) from one state.
    Forecast(ForecastArgs),
    /// Run the full (d, N, seed, flavor) grid; resumable.
    Sweep(SweepArgs),
    /// NN / HNN ratio surface from two mean surfaces or a records file.
    Ratio(RatioArgs),
    /// Power-law fit of mean energy error against N, per (flavor, d).
    Fit(FitArgs),
    /// Sample a trained d = 1 linear model on a grid next to its target.
    Mapsurface(MapArgs),
    /// Single-orbit NN vs HNN energy drift on the linear oscillator.
    Drift(DriftArgs),
}

/// Overrides applied on top of `--config` (or the desk defaults).
#[derive(Args, Default)]
struct ExpArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    family: Option<String>,
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Comma-separated training-set sizes.
    #[arg(long, value_delimiter = ',')]
    n_train: Option<Vec<usize>>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    /// Comma-separated flavors (NN, HNN).
    #[arg(long, value_delimiter = ',')]
    flavors: Option<Vec<String>>,
    /// Training energy range as lo,hi.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    energy_range: Option<Vec<f64>>,
    #[arg(long)]
    t_train: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    forecasts: Option<usize>,
    /// Forecast initial-condition energy range as lo,hi.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    forecast_energy_range: Option<Vec<f64>>,
    #[arg(long)]
    forecast_horizon: Option<f64>,
    #[arg(long)]
    forecast_dt: Option<f64>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    chain_a: Option<f64>,
    #[arg(long)]
    chain_b: Option<f64>,
    #[arg(long)]
    chain_kappa: Option<f64>,
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long)]
    output_dir: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Run cells one at a time on the calling thread.
    #[arg(long)]
    sequential: bool,
}

fn pair(v: Vec<f64>) -> Result<[f64; 2]> {
    match v[..] {
        [lo, hi] => Ok([lo, hi]),
        _ => bail!("expected two comma-separated values, got {}", v.len()),
    }
}

impl ExpArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => match &self.family {
                Some(f) => ExperimentConfig::desk(f.parse::<Family>()?),
                None => ExperimentConfig::default(),
            },
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = &self.$f { c.$f = v.clone(); })* };
        }
        set!(family, dims, n_train, seeds, base_seed, flavors, t_train, dt, hidden_layers, width);
        set!(learning_rate, batch_size, epochs, forecasts, forecast_horizon, forecast_dt, method);
        set!(smoothing, output_dir, jobs);
        if let Some(v) = &self.energy_range {
            c.energy_range = pair(v.clone())?;
        }
        if let Some(v) = &self.forecast_energy_range {
            c.forecast_energy_range = pair(v.clone())?;
        }
        if let Some(v) = self.chain_a {
            c.chain.a = v;
        }
        if let Some(v) = self.chain_b {
            c.chain.b = v;
        }
        if let Some(v) = self.chain_kappa {
            c.chain.kappa = v;
        }
        c.validate()?;
        Ok(c)
    }

    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

/// Picks the single cell a one-off command operates on.
#[derive(Args)]
struct CellArgs {
    /// Dimension (defaults to the first of `dims`).
    #[arg(long)]
    d: Option<usize>,
    /// Training-set size (defaults to the first of `n_train`).
    #[arg(long)]
    n: Option<usize>,
    /// Seed index (defaults to `base_seed`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "HNN")]
    flavor: Flavor,
}

impl CellArgs {
    fn cell(&self, c: &ExperimentConfig) -> Result<harness::Cell> {
        Ok(harness::Cell {
            family: c.family()?,
            d: self.d.unwrap_or(c.dims[0]),
            n_train: self.n.unwrap_or(c.n_train[0]),
            seed: self.seed.unwrap_or(c.base_seed),
            flavor: self.flavor,
        })
    }
}

fn cell_meta(c: &ExperimentConfig, cell: &harness::Cell) -> Metadata {
    c.metadata()
        .with("d", cell.d)
        .with("N", cell.n_train)
        .with("seed", cell.seed)
        .with("flavor", cell.flavor)
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    exp: ExpArgs,
    #[command(flatten)]
    cell: CellArgs,
    /// Directory for orbits.csv and pairs.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    exp: ExpArgs,
    #[command(flatten)]
    cell: CellArgs,
    /// Parameter file to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch cost CSV.
    #[arg(long)]
    costs: Option<PathBuf>,
}

#[derive(Args)]
struct ForecastArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// Trained parameters; omit to integrate the exact field.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Flavor of `--params`; inferred from the output width if omitted.
    #[arg(long)]
    flavor: Option<Flavor>,
    #[arg(long)]
    d: Option<usize>,
    /// Initial positions, comma-separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    q0: Vec<f64>,
    /// Initial momenta, comma-separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    p0: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExpArgs,
}

#[derive(Args)]
struct RatioArgs {
    /// Records CSV; used instead of --nn/--hnn when given.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    nn: Option<PathBuf>,
    #[arg(long)]
    hnn: Option<PathBuf>,
    #[arg(long, default_value_t = 0.75)]
    smoothing: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    flavor: Option<Flavor>,
    /// Axis range as lo,hi (both axes).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "-2,2")]
    bounds: Vec<f64>,
    #[arg(long, default_value_t = 41)]
    resolution: usize,
    /// Largest training energy; points with H <= this are flagged inside.
    #[arg(long, default_value_t = 1.0)]
    train_energy: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DriftArgs {
    /// TOML drift config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: PathBuf,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    csvio::write_atomic(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn infer_flavor(params: &MlpParams, given: Option<Flavor>) -> Result<Flavor> {
    let inferred = if params.output_dim() == 1 { Flavor::Hnn } else { Flavor::Nn };
    match given {
        Some(f) if f != inferred => bail!("parameters have {} outputs, which does not fit flavor {f}", params.output_dim()),
        _ => Ok(inferred),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let c = a.exp.resolve()?;
    let cell = a.cell.cell(&c)?;
    let sys = c.system(cell.d)?;
    let (orbits, pairs) = build_training_set(&sys, &c.data(), cell.n_train, cell.flavor, cell.data_seed(), a.exp.exec())?;
    let meta = cell_meta(&c, &cell);
    write(&a.out.join("orbits.csv"), &orbits_csv(&orbits, &meta))?;
    write(&a.out.join("pairs.csv"), &pairs_csv(&pairs, &meta))?;
    println!("{} orbits, {} pairs -> {}", orbits.len(), pairs.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let c = a.exp.resolve()?;
    let cell = a.cell.cell(&c)?;
    let report = harness::train_cell(&c, &cell)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    report.params.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.costs {
        write(p, &report.to_csv(&cell_meta(&c, &cell)))?;
    }
    println!("{}", report.summary());
    Ok(())
}

fn forecast_cmd(a: ForecastArgs) -> Result<()> {
    let c = a.exp.resolve()?;
    let d = a.d.unwrap_or(a.q0.len().max(1));
    if a.q0.len() != d || a.p0.len() != d {
        bail!("--q0 and --p0 need {d} values each");
    }
    let sys = c.system(d)?;
    let s0 = PhaseState::new(a.q0.clone(), a.p0.clone());
    let method = c.method()?;
    let mut meta = c.metadata().with("d", d);
    let traj = match &a.params {
        Some(p) => {
            let params = MlpParams::load(p).with_context(|| format!("loading {}", p.display()))?;
            let flavor = infer_flavor(&params, a.flavor)?;
            meta = meta.with("flavor", flavor).with("params_hash", short_hash(&params.to_text()));
            let field = LearnedField::new(flavor, params)?;
            integrate(&field, &s0, c.forecast_horizon, c.forecast_dt, method)?
        }
        None => {
            meta = meta.with("flavor", "exact");
            integrate(&sys, &s0, c.forecast_horizon, c.forecast_dt, method)?
        }
    };
    let err = metrics::energy_relative_error(&sys, &traj)?;
    let meta = meta.with("dE_over_E", fmt_f64(err)).with("divergent", traj.divergent);
    write(&a.out, &traj.to_csv(&sys, &meta))?;
    println!("{} steps, dE/E = {}{}", traj.len() - 1, fmt_f64(err), if traj.divergent { " (divergent)" } else { "" });
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let c = a.exp.resolve()?;
    let outcome = harness::sweep(&c, a.exp.exec())?;
    println!(
        "{} cells computed, {} reused, {} records -> {}",
        outcome.computed,
        outcome.reused,
        outcome.records.len(),
        outcome.records_path.display()
    );
    if let Some(r) = &outcome.ratio {
        for (i, d) in r.d_values.iter().enumerate() {
            let row: Vec<String> = r.cells[i].iter().map(|v| v.map_or("-".into(), |x| format!("{x:.3}"))).collect();
            println!("ratio d={d}: {}", row.join(" "));
        }
    }
    Ok(())
}

fn ratio_cmd(a: RatioArgs) -> Result<()> {
    let (nn, hnn, meta) = match (&a.records, &a.nn, &a.hnn) {
        (Some(p), _, _) => {
            let (meta, recs) = metrics::parse_records(&read(p)?)?;
            let mut ds: Vec<usize> = recs.iter().map(|r| r.d).collect();
            let mut ns: Vec<usize> = recs.iter().map(|r| r.n_train).collect();
            ds.sort();
            ds.dedup();
            ns.sort();
            ns.dedup();
            (
                SurfaceGrid::from_records(&recs, Flavor::Nn, &ds, &ns),
                SurfaceGrid::from_records(&recs, Flavor::Hnn, &ds, &ns),
                meta,
            )
        }
        (None, Some(n), Some(h)) => {
            let meta = csvio::parse(&read(n)?)?.meta;
            (SurfaceGrid::from_csv(&read(n)?)?, SurfaceGrid::from_csv(&read(h)?)?, meta)
        }
        _ => bail!("give --records, or both --nn and --hnn"),
    };
    let r = harness::ratio_surface(&nn, &hnn, a.smoothing)?;
    let meta = Metadata(meta.0.into_iter().filter(|(k, _)| k != "surface" && k != "smoothing").collect());
    write(&a.out, &r.to_csv(&meta))?;
    println!("ratio surface {}x{} -> {}", r.d_values.len(), r.n_values.len(), a.out.display());
    Ok(())
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let (meta, recs) = metrics::parse_records(&read(&a.records)?)?;
    let mut groups = std::collections::BTreeMap::<(Flavor, usize), std::collections::BTreeMap<usize, Vec<f64>>>::new();
    for r in &recs {
        groups.entry((r.flavor, r.d)).or_default().entry(r.n_train).or_default().push(r.energy_error);
    }
    let mut rows = Vec::new();
    for ((flavor, d), by_n) in &groups {
        let points: Vec<(f64, f64)> = by_n
            .iter()
            .map(|(n, v)| Ok((*n as f64, aggregate(v)?.mean)))
            .collect::<Result<_, metrics::MetricsError>>()?;
        match fit_power_law(&points) {
            Ok((coef, alpha)) => {
                println!("{flavor} d={d}: dE/E ~ {coef:.4e} * N^{alpha:.4}");
                rows.push(vec![flavor.to_string(), d.to_string(), fmt_f64(coef), fmt_f64(alpha), points.len().to_string()]);
            }
            Err(e) => println!("{flavor} d={d}: no fit ({e})"),
        }
    }
    if let Some(out) = &a.out {
        write(out, &csvio::render(&meta, &["flavor", "d", "c", "alpha", "points"], rows))?;
    }
    Ok(())
}

fn map_cmd(a: MapArgs) -> Result<()> {
    let params = MlpParams::load(&a.params).with_context(|| format!("loading {}", a.params.display()))?;
    let flavor = infer_flavor(&params, a.flavor)?;
    let meta = Metadata::new()
        .with("config_hash", short_hash(&params.to_text()))
        .with("version", hamnet::VERSION)
        .with("family", Family::Linear);
    let field = LearnedField::new(flavor, params)?;
    let text = harness::map_surface_export(&field, pair(a.bounds)?, [a.resolution, a.resolution], a.train_energy, &meta)?;
    write(&a.out, &text)?;
    println!("{}x{} {flavor} surface -> {}", a.resolution, a.resolution, a.out.display());
    Ok(())
}

fn drift_cmd(a: DriftArgs) -> Result<()> {
    let mut c = match &a.config {
        Some(p) => DriftConfig::from_toml(&read(p)?)?,
        None => DriftConfig::default(),
    };
    if let Some(v) = a.n_train {
        c.n_train = v;
    }
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.width {
        c.width = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.horizon {
        c.horizon = v;
    }
    if let Some(v) = a.method {
        c.method = v;
    }
    let exec = if a.sequential { Execution::Sequential } else { Execution::Parallel };
    let out = harness::drift_experiment(&c, exec)?;
    let meta = Metadata::new()
        .with("config_hash", c.content_hash())
        .with("version", hamnet::VERSION)
        .with("family", Family::Linear)
        .with("method", &c.method);
    write(&a.out, &out.to_csv(&meta))?;
    println!("NN    dE/E = {}", fmt_f64(out.nn_error));
    println!("HNN   dE/E = {}", fmt_f64(out.hnn_error));
    println!("exact dE/E = {}", fmt_f64(out.exact_error));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Forecast(a) => forecast_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Ratio(a) => ratio_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Mapsurface(a) => map_cmd(a),
        Command::Drift(a) => drift_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
