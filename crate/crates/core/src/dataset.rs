//! Ground-truth orbits and supervised training pairs.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::csvio::{self, fmt_f64, Metadata};
use crate::exec::Execution;
use crate::systems::{PhaseState, SystemError, SystemSpec};

/// Ground-truth RK4 sub-steps per sampling interval.
pub const SUBSTEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("invalid time grid: T = {t_total}, dt = {dt}")]
    BadGrid { t_total: f64, dt: f64 },
    #[error("orbit blew up at step {step}")]
    NonFinite { step: usize },
    #[error("need {needed} samples, only {available} available")]
    InsufficientSamples { needed: usize, available: usize },
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Which supervision a pair carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flavor {
    /// Input `(q, dq/dt)`, target `(dq/dt, d2q/dt2)`.
    Nn,
    /// Input `(q, p)`, target `(dq/dt, dp/dt)`.
    Hnn,
}

impl Flavor {
    pub fn tag(self) -> &'static str {
        match self {
            Flavor::Nn => "NN",
            Flavor::Hnn => "HNN",
        }
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Flavor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nn" => Ok(Flavor::Nn),
            "hnn" => Ok(Flavor::Hnn),
            other => Err(format!("unknown flavor `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub flavor: Flavor,
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

impl TrainingPair {
    /// Builds a pair from a phase state using the exact vector field.
    pub fn from_state(spec: &SystemSpec, state: &PhaseState, flavor: Flavor) -> Result<Self, SystemError> {
        let (qdot, pdot) = spec.exact_vector_field(state)?;
        // Unit mass: velocity is p and acceleration is dp/dt. The two
        // flavors hold the same numbers under different meanings.
        let (input, target) = match flavor {
            Flavor::Nn => {
                let velocity = qdot.clone();
                let accel = pdot;
                ([state.q.clone(), velocity].concat(), [qdot, accel].concat())
            }
            Flavor::Hnn => (state.to_flat(), [qdot, pdot].concat()),
        };
        Ok(Self { flavor, input, target })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Orbit {
    pub spec: SystemSpec,
    pub dt: f64,
    /// `t_k = k dt` for `k = 0..=K`.
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub max_energy_drift: f64,
}

impl Orbit {
    /// The `T/dt` states with `t < T`; these are what training draws from.
    pub fn training_samples(&self) -> &[PhaseState] {
        &self.states[..self.states.len() - 1]
    }

    pub fn final_state(&self) -> &PhaseState {
        self.states.last().unwrap()
    }
}

/// Number of whole sampling intervals in `t_total`, if `dt` divides it.
pub fn grid_steps(t_total: f64, dt: f64) -> Option<usize> {
    if !(t_total > 0.0 && dt > 0.0 && t_total.is_finite()) {
        return None;
    }
    let k = (t_total / dt).round();
    if k < 1.0 || (k * dt - t_total).abs() > 1e-9 * t_total {
        return None;
    }
    Some(k as usize)
}

/// Classical fourth-order Runge-Kutta step on a flat state.
pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    pub(crate) fn step<F: FnMut(&[f64], &mut [f64])>(&mut self, field: &mut F, x: &mut [f64], h: f64) {
        let n = x.len();
        field(x, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        field(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        field(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        field(&self.tmp, &mut self.k4);
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Integrates the exact dynamics from `state0`, recording every `dt` up to
/// and including `t_total`.
pub fn generate_orbit(spec: &SystemSpec, state0: &PhaseState, t_total: f64, dt: f64) -> Result<Orbit, DatasetError> {
    let steps = grid_steps(t_total, dt).ok_or(DatasetError::BadGrid { t_total, dt })?;
    let e0 = spec.hamiltonian(state0)?;
    let h = dt / SUBSTEPS as f64;
    let mut x = state0.to_flat();
    let mut rk = Rk4::new(x.len());
    let mut field = |y: &[f64], out: &mut [f64]| spec.field_flat(y, out);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut drift: f64 = 0.0;
    times.push(0.0);
    states.push(state0.clone());
    for k in 1..=steps {
        for _ in 0..SUBSTEPS {
            rk.step(&mut field, &mut x, h);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::NonFinite { step: k });
        }
        let s = PhaseState::from_flat(&x);
        let e = spec.energy_unchecked(&s.q, &s.p);
        drift = drift.max(relative_change(e, e0));
        times.push(k as f64 * dt);
        states.push(s);
    }
    Ok(Orbit { spec: *spec, dt, times, states, max_energy_drift: drift })
}

pub(crate) fn relative_change(e: f64, e0: f64) -> f64 {
    if e == e0 {
        0.0
    } else {
        (e - e0).abs() / e0.abs()
    }
}

/// Draws exactly `n_t` states uniformly without replacement from all orbit
/// samples and converts them to pairs of the given flavor.
pub fn make_training_pairs<R: Rng + ?Sized>(
    orbits: &[Orbit],
    flavor: Flavor,
    n_t: usize,
    rng: &mut R,
) -> Result<Vec<TrainingPair>, DatasetError> {
    let pool: Vec<(&SystemSpec, &PhaseState)> = orbits
        .iter()
        .flat_map(|o| o.training_samples().iter().map(move |s| (&o.spec, s)))
        .collect();
    if pool.len() < n_t {
        return Err(DatasetError::InsufficientSamples { needed: n_t, available: pool.len() });
    }
    let mut picks = index::sample(rng, pool.len(), n_t).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|i| {
            let (spec, s) = pool[i];
            TrainingPair::from_state(spec, s, flavor).map_err(DatasetError::from)
        })
        .collect()
}

/// How training data is generated for one system.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub energy_range: [f64; 2],
    pub t_total: f64,
    pub dt: f64,
}

impl DataConfig {
    pub fn samples_per_orbit(&self) -> Result<usize, DatasetError> {
        grid_steps(self.t_total, self.dt).ok_or(DatasetError::BadGrid { t_total: self.t_total, dt: self.dt })
    }

    pub fn orbits_needed(&self, n_t: usize) -> Result<usize, DatasetError> {
        Ok(n_t.div_ceil(self.samples_per_orbit()?).max(1))
    }
}

/// Generates enough independent orbits to cover `n_t` pairs and samples the
/// pairs. The same seed yields the same orbits whatever the flavor.
pub fn build_training_set(
    spec: &SystemSpec,
    data: &DataConfig,
    n_t: usize,
    flavor: Flavor,
    seed: u64,
    exec: Execution,
) -> Result<(Vec<Orbit>, Vec<TrainingPair>), DatasetError> {
    let n_orbits = data.orbits_needed(n_t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = (0..n_orbits)
        .map(|_| spec.sample_initial_state(data.energy_range, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let orbits = exec
        .map(&starts, |s0| generate_orbit(spec, s0, data.t_total, data.dt))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let pairs = make_training_pairs(&orbits, flavor, n_t, &mut rng)?;
    Ok((orbits, pairs))
}

pub fn orbits_csv(orbits: &[Orbit], meta: &Metadata) -> String {
    let d = orbits.first().map_or(0, |o| o.spec.d);
    let mut header = vec!["orbit".to_string(), "t".to_string()];
    header.extend((1..=d).map(|n| format!("q{n}")));
    header.extend((1..=d).map(|n| format!("p{n}")));
    let rows = orbits.iter().enumerate().flat_map(|(i, o)| {
        o.times.iter().zip(&o.states).map(move |(t, s)| {
            let mut row = vec![i.to_string(), fmt_f64(*t)];
            row.extend(s.q.iter().chain(&s.p).map(|&x| fmt_f64(x)));
            row
        })
    });
    csvio::render(meta, &header, rows)
}

pub fn pairs_csv(pairs: &[TrainingPair], meta: &Metadata) -> String {
    let n = pairs.first().map_or(0, |p| p.input.len());
    let mut header = vec!["flavor".to_string()];
    header.extend((1..=n).map(|i| format!("in{i}")));
    header.extend((1..=n).map(|i| format!("target{i}")));
    let rows = pairs.iter().map(|p| {
        let mut row = vec![p.flavor.tag().to_string()];
        row.extend(p.input.iter().chain(&p.target).map(|&x| fmt_f64(x)));
        row
    });
    csvio::render(meta, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::ChainParams;
    use std::f64::consts::PI;

    #[test]
    fn linear_orbit_closes_after_one_period() {
        let spec = SystemSpec::linear(1);
        let s0 = PhaseState::new(vec![1.0], vec![0.0]);
        let orbit = generate_orbit(&spec, &s0, 2.0 * PI, 2.0 * PI / 128.0).unwrap();
        let end = orbit.final_state();
        assert!((end.q[0] - 1.0).abs() < 1e-6 && end.p[0].abs() < 1e-6);
        // against the closed form cos / -sin at every sample
        for (t, s) in orbit.times.iter().zip(&orbit.states) {
            assert!((s.q[0] - t.cos()).abs() < 1e-9);
            assert!((s.p[0] + t.sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn hundred_by_tenth_gives_thousand_samples() {
        let spec = SystemSpec::linear(1);
        let s0 = PhaseState::new(vec![0.5], vec![0.5]);
        let orbit = generate_orbit(&spec, &s0, 100.0, 0.1).unwrap();
        assert_eq!(orbit.training_samples().len(), 1000);
        assert_eq!(orbit.states.len(), 1001);
        assert!(orbit.max_energy_drift < 1e-8);
    }

    #[test]
    fn bad_grids_rejected() {
        let spec = SystemSpec::linear(1);
        let s0 = PhaseState::new(vec![1.0], vec![0.0]);
        assert!(matches!(generate_orbit(&spec, &s0, 1.0, 0.3), Err(DatasetError::BadGrid { .. })));
        assert!(generate_orbit(&spec, &s0, -1.0, 0.1).is_err());
        assert!(generate_orbit(&spec, &s0, 1.0, 0.0).is_err());
    }

    #[test]
    fn pair_examples() {
        let lin = SystemSpec::linear(1);
        let s = PhaseState::new(vec![0.0], vec![1.0]);
        let nn = TrainingPair::from_state(&lin, &s, Flavor::Nn).unwrap();
        assert_eq!((nn.input.clone(), nn.target.clone()), (vec![0.0, 1.0], vec![1.0, 0.0]));
        let hnn = TrainingPair::from_state(&lin, &s, Flavor::Hnn).unwrap();
        assert_eq!((hnn.input, hnn.target), (vec![0.0, 1.0], vec![1.0, 0.0]));
        let quart = TrainingPair::from_state(&SystemSpec::quartic(1), &PhaseState::new(vec![1.0], vec![0.0]), Flavor::Nn).unwrap();
        assert_eq!(quart.target, vec![0.0, -1.0]);
    }

    #[test]
    fn flavors_share_numbers() {
        let spec = SystemSpec::chain(3, ChainParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let s = spec.sample_initial_state([0.0, 1.0], &mut rng).unwrap();
            let a = TrainingPair::from_state(&spec, &s, Flavor::Nn).unwrap();
            let b = TrainingPair::from_state(&spec, &s, Flavor::Hnn).unwrap();
            assert_eq!(a.input, b.input);
            assert_eq!(a.target, b.target);
            assert_ne!(a.flavor, b.flavor);
        }
    }

    #[test]
    fn pair_sampling_counts_and_determinism() {
        let spec = SystemSpec::quartic(2);
        let data = DataConfig { energy_range: [0.0, 1.0], t_total: 10.0, dt: 0.1 };
        let (orbits, pairs) = build_training_set(&spec, &data, 250, Flavor::Hnn, 8, Execution::Sequential).unwrap();
        assert_eq!(orbits.len(), 3);
        assert_eq!(pairs.len(), 250);
        let (_, again) = build_training_set(&spec, &data, 250, Flavor::Hnn, 8, Execution::Parallel).unwrap();
        assert_eq!(pairs, again);
        let (orbits_nn, _) = build_training_set(&spec, &data, 250, Flavor::Nn, 8, Execution::Sequential).unwrap();
        assert_eq!(orbits, orbits_nn);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            make_training_pairs(&orbits, Flavor::Nn, 301, &mut rng),
            Err(DatasetError::InsufficientSamples { needed: 301, available: 300 })
        ));
    }

    #[test]
    fn sampled_pairs_are_distinct_samples() {
        let spec = SystemSpec::linear(1);
        let data = DataConfig { energy_range: [0.1, 1.0], t_total: 5.0, dt: 0.1 };
        let (_, pairs) = build_training_set(&spec, &data, 100, Flavor::Nn, 1, Execution::Sequential).unwrap();
        let mut inputs: Vec<Vec<u64>> = pairs.iter().map(|p| p.input.iter().map(|x| x.to_bits()).collect()).collect();
        inputs.sort();
        inputs.dedup();
        assert_eq!(inputs.len(), 100);
    }

    #[test]
    fn csv_exports_have_expected_shape() {
        let spec = SystemSpec::linear(2);
        let s0 = PhaseState::new(vec![1.0, 0.0], vec![0.0, 0.5]);
        let orbit = generate_orbit(&spec, &s0, 1.0, 0.5).unwrap();
        let text = orbits_csv(std::slice::from_ref(&orbit), &Metadata::new().with("family", "linear"));
        let t = csvio::parse(&text).unwrap();
        assert_eq!(t.header, vec!["orbit", "t", "q1", "q2", "p1", "p2"]);
        assert_eq!(t.rows.len(), 3);
        let pair = TrainingPair::from_state(&spec, &s0, Flavor::Hnn).unwrap();
        let t = csvio::parse(&pairs_csv(&[pair], &Metadata::new())).unwrap();
        assert_eq!(t.header.len(), 9);
        assert_eq!(t.rows[0][0], "HNN");
    }
}
