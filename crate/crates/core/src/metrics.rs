//! Forecast error metrics, aggregation and power-law fits.

use thiserror::Error;

use crate::csvio::{self, fmt_f64, Metadata};
use crate::dataset::Flavor;
use crate::forecast::{Method, Trajectory};
use crate::systems::{Family, SystemSpec};

/// Largest energy error a single forecast contributes to a mean.
pub const ENERGY_ERROR_CAP: f64 = 10.0;

/// z-score of the two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no values")]
    Empty,
    #[error("initial energy is zero, relative error undefined")]
    ZeroEnergy,
    #[error("time grids differ ({0})")]
    GridMismatch(String),
    #[error("power-law fit needs positive values, got ({n}, {err})")]
    NonPositive { n: f64, err: f64 },
    #[error("power-law fit needs at least two distinct N values")]
    TooFewPoints,
    #[error("bad record row: {0}")]
    Parse(String),
}

/// Time-averaged `|E(t_k) - E(0)| / |E(0)|` over `k >= 1`.
pub fn energy_relative_error(spec: &SystemSpec, traj: &Trajectory) -> Result<f64, MetricsError> {
    let first = traj.states.first().ok_or(MetricsError::Empty)?;
    let e0 = spec.energy_unchecked(&first.q, &first.p);
    if e0 == 0.0 {
        return Err(MetricsError::ZeroEnergy);
    }
    if traj.states.len() < 2 {
        return Ok(0.0);
    }
    let total: f64 = traj.states[1..]
        .iter()
        .map(|s| (spec.energy_unchecked(&s.q, &s.p) - e0).abs())
        .sum();
    Ok(total / (traj.states.len() - 1) as f64 / e0.abs())
}

/// The energy error as it enters sweep statistics: divergent rollouts
/// score the cap, everything else is clipped to it.
pub fn capped_energy_error(spec: &SystemSpec, traj: &Trajectory) -> Result<f64, MetricsError> {
    if traj.divergent {
        return Ok(ENERGY_ERROR_CAP);
    }
    Ok(energy_relative_error(spec, traj)?.min(ENERGY_ERROR_CAP))
}

/// Mean distance between matching states, divided by the reference's
/// root-mean-square state norm.
pub fn state_error(traj: &Trajectory, reference: &Trajectory) -> Result<f64, MetricsError> {
    if traj.states.len() != reference.states.len() {
        return Err(MetricsError::GridMismatch(format!(
            "{} vs {} samples",
            traj.states.len(),
            reference.states.len()
        )));
    }
    if traj.is_empty() {
        return Err(MetricsError::Empty);
    }
    for (a, b) in traj.times.iter().zip(&reference.times) {
        if (a - b).abs() > 1e-9 * a.abs().max(1.0) {
            return Err(MetricsError::GridMismatch(format!("t = {a} vs {b}")));
        }
    }
    let n = traj.states.len() as f64;
    let mean_dist: f64 = traj
        .states
        .iter()
        .zip(&reference.states)
        .map(|(a, b)| {
            a.q.iter()
                .chain(&a.p)
                .zip(b.q.iter().chain(&b.p))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / n;
    let rms = (reference.states.iter().map(|s| s.norm().powi(2)).sum::<f64>() / n).sqrt();
    if rms == 0.0 {
        return Ok(if mean_dist == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(mean_dist / rms)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    /// Half-width of the 95% band, `1.96 std / sqrt(count)`.
    pub ci95: f64,
    pub count: usize,
}

/// Mean, sample standard deviation (`n - 1` denominator) and 95% band.
pub fn aggregate(values: &[f64]) -> Result<Aggregate, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len();
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return Ok(Aggregate { mean: first, std: 0.0, ci95: 0.0, count: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Aggregate { mean, std, ci95: Z95 * std / (n as f64).sqrt(), count: n })
}

/// Least-squares line through `(ln N, ln err)`; returns `(c, alpha)` with
/// `err ~ c N^alpha`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<(f64, f64), MetricsError> {
    if points.len() < 2 {
        return Err(MetricsError::TooFewPoints);
    }
    for &(n, err) in points {
        if !(n > 0.0 && err > 0.0) {
            return Err(MetricsError::NonPositive { n, err });
        }
    }
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::TooFewPoints);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Ok((intercept.exp(), slope))
}

/// One forecast's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub family: Family,
    pub d: usize,
    pub n_train: usize,
    pub seed: u64,
    pub flavor: Flavor,
    pub method: Method,
    /// Index of the forecast initial condition within the cell.
    pub forecast: usize,
    pub energy_error: f64,
    pub state_error: f64,
    pub cost: f64,
    pub divergent: bool,
}

pub const RECORD_HEADER: [&str; 11] = [
    "family", "d", "N", "seed", "flavor", "method", "forecast", "dE_over_E", "dr", "cost", "divergent",
];

impl ErrorRecord {
    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.family.tag().to_string(),
            self.d.to_string(),
            self.n_train.to_string(),
            self.seed.to_string(),
            self.flavor.tag().to_string(),
            self.method.tag().to_string(),
            self.forecast.to_string(),
            fmt_f64(self.energy_error),
            fmt_f64(self.state_error),
            fmt_f64(self.cost),
            self.divergent.to_string(),
        ]
    }

    pub fn from_row(row: &[String]) -> Result<Self, MetricsError> {
        if row.len() != RECORD_HEADER.len() {
            return Err(MetricsError::Parse(format!("expected {} fields, got {}", RECORD_HEADER.len(), row.len())));
        }
        let bad = |what: &str, v: &str| MetricsError::Parse(format!("{what}: `{v}`"));
        let num = |i: usize| row[i].parse::<f64>().map_err(|_| bad(RECORD_HEADER[i], &row[i]));
        let int = |i: usize| row[i].parse::<u64>().map_err(|_| bad(RECORD_HEADER[i], &row[i]));
        Ok(Self {
            family: row[0].parse().map_err(|_| bad("family", &row[0]))?,
            d: int(1)? as usize,
            n_train: int(2)? as usize,
            seed: int(3)?,
            flavor: row[4].parse().map_err(|_| bad("flavor", &row[4]))?,
            method: row[5].parse().map_err(|_| bad("method", &row[5]))?,
            forecast: int(6)? as usize,
            energy_error: num(7)?,
            state_error: num(8)?,
            cost: num(9)?,
            divergent: row[10].parse().map_err(|_| bad("divergent", &row[10]))?,
        })
    }

    /// Canonical ordering key for sorted output.
    pub fn key(&self) -> (Family, usize, usize, u64, Flavor, Method, usize) {
        (self.family, self.d, self.n_train, self.seed, self.flavor, self.method, self.forecast)
    }
}

pub fn records_csv(records: &[ErrorRecord], meta: &Metadata) -> String {
    csvio::render(meta, &RECORD_HEADER, records.iter().map(ErrorRecord::to_row))
}

pub fn parse_records(text: &str) -> Result<(Metadata, Vec<ErrorRecord>), MetricsError> {
    let table = csvio::parse(text).map_err(|e| MetricsError::Parse(e.to_string()))?;
    if table.header != RECORD_HEADER {
        return Err(MetricsError::Parse(format!("unexpected header {:?}", table.header)));
    }
    let records = table.rows.iter().map(|r| ErrorRecord::from_row(r)).collect::<Result<_, _>>()?;
    Ok((table.meta, records))
}
