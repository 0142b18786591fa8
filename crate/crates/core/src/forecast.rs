//! Fixed-step rollouts of exact or learned dynamics.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::csvio::{self, fmt_f64, Metadata};
use crate::dataset::{Flavor, Rk4};
use crate::mlp::{MlpError, MlpParams};
use crate::systems::{PhaseState, SystemSpec};

/// States with a norm beyond this are treated as blown up.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("state has dimension {got}, model has d = {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{flavor} model needs {needed} outputs, network has {got}")]
    Shape { flavor: Flavor, needed: usize, got: usize },
    #[error("horizon {t_total} and step {dt} must both be positive")]
    BadGrid { t_total: f64, dt: f64 },
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Method {
    Euler,
    #[default]
    Rk4,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            other => Err(format!("unknown integrator `{other}`")),
        }
    }
}

/// A vector field on flat phase vectors `[q, p]`.
pub trait Dynamics {
    /// Number of position coordinates `d`.
    fn dof(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
}

impl Dynamics for SystemSpec {
    fn dof(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.field_flat(x, out)
    }
}

/// A trained network read as a phase-space vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedField {
    pub flavor: Flavor,
    pub params: MlpParams,
    pub d: usize,
}

impl LearnedField {
    pub fn new(flavor: Flavor, params: MlpParams) -> Result<Self, ForecastError> {
        let dim = params.input_dim();
        let needed = match flavor {
            Flavor::Nn => dim,
            Flavor::Hnn => 1,
        };
        if params.output_dim() != needed || dim % 2 != 0 {
            return Err(ForecastError::Shape { flavor, needed, got: params.output_dim() });
        }
        Ok(Self { flavor, params, d: dim / 2 })
    }

    pub fn learned_vector_field(&self, state: &PhaseState) -> Result<(Vec<f64>, Vec<f64>), ForecastError> {
        if state.dim() != self.d {
            return Err(ForecastError::DimensionMismatch { expected: self.d, got: state.dim() });
        }
        let mut out = vec![0.0; 2 * self.d];
        self.eval(&state.to_flat(), &mut out);
        let pdot = out.split_off(self.d);
        Ok((out, pdot))
    }
}

impl Dynamics for LearnedField {
    fn dof(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        let mut acts = Vec::new();
        self.params.activations(x, &mut acts);
        match self.flavor {
            // outputs are (velocity, acceleration); with unit mass that is (dq/dt, dp/dt)
            Flavor::Nn => out.copy_from_slice(&acts[acts.len() - 1]),
            Flavor::Hnn => {
                let mut g = vec![0.0; 2 * d];
                self.params.input_gradient_from(&acts, &mut Vec::new(), &mut g);
                out[..d].copy_from_slice(&g[d..]);
                for i in 0..d {
                    out[d + i] = -g[i];
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub method: Method,
    /// The rollout left the finite region and was cut short.
    pub divergent: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn to_csv(&self, spec: &SystemSpec, meta: &Metadata) -> String {
        let d = self.states.first().map_or(0, PhaseState::dim);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|n| format!("q{n}")));
        header.extend((1..=d).map(|n| format!("p{n}")));
        header.push("energy".to_string());
        let rows = self.times.iter().zip(&self.states).map(|(t, s)| {
            let mut row = vec![fmt_f64(*t)];
            row.extend(s.q.iter().chain(&s.p).map(|&x| fmt_f64(x)));
            row.push(fmt_f64(spec.energy_unchecked(&s.q, &s.p)));
            row
        });
        let meta = meta.clone().with("method", self.method).with("divergent", self.divergent);
        csvio::render(&meta, &header, rows)
    }
}

/// Number of steps and the step actually used for a horizon. When `dt` does
/// not divide `t_total` the step shrinks to the nearest size that does, so
/// the grid stays uniform and ends exactly at `t_total`.
pub fn step_grid(t_total: f64, dt: f64) -> Result<(usize, f64), ForecastError> {
    if !(t_total > 0.0 && dt > 0.0 && t_total.is_finite()) {
        return Err(ForecastError::BadGrid { t_total, dt });
    }
    let ratio = t_total / dt;
    let k = ratio.round();
    if k >= 1.0 && (k * dt - t_total).abs() <= 1e-9 * t_total {
        return Ok((k as usize, dt));
    }
    let k = ratio.ceil().max(1.0);
    Ok((k as usize, t_total / k))
}

/// Rolls `field` forward from `state0` with a fixed step.
pub fn integrate<F: Dynamics + ?Sized>(
    field: &F,
    state0: &PhaseState,
    t_total: f64,
    dt: f64,
    method: Method,
) -> Result<Trajectory, ForecastError> {
    let d = field.dof();
    if state0.dim() != d {
        return Err(ForecastError::DimensionMismatch { expected: d, got: state0.dim() });
    }
    let (steps, h) = step_grid(t_total, dt)?;
    let mut x = state0.to_flat();
    let mut rk = Rk4::new(2 * d);
    let mut k1 = vec![0.0; 2 * d];
    let mut eval = |y: &[f64], out: &mut [f64]| field.eval(y, out);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(state0.clone());
    let mut divergent = false;
    for k in 1..=steps {
        match method {
            Method::Euler => {
                eval(&x, &mut k1);
                x.iter_mut().zip(&k1).for_each(|(xi, fi)| *xi += h * fi);
            }
            Method::Rk4 => rk.step(&mut eval, &mut x, h),
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            divergent = true;
            break;
        }
        times.push(if k == steps { t_total } else { k as f64 * h });
        states.push(PhaseState::from_flat(&x));
    }
    Ok(Trajectory { times, states, method, divergent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::NetSpec;
    use std::f64::consts::PI;

    /// `(dq/dt, dp/dt) = (p, -q)` as a bare closure-backed field.
    struct Harmonic;

    impl Dynamics for Harmonic {
        fn dof(&self) -> usize {
            1
        }
        fn eval(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[1];
            out[1] = -x[0];
        }
    }

    fn zero_net(flavor: Flavor, d: usize) -> LearnedField {
        let out = if flavor == Flavor::Nn { 2 * d } else { 1 };
        let mut p = MlpParams::init(&NetSpec::standard(2 * d, out, 0)).unwrap();
        p.coeffs_mut().fill(0.0);
        LearnedField::new(flavor, p).unwrap()
    }

    #[test]
    fn euler_single_step() {
        let s0 = PhaseState::new(vec![1.0], vec![0.0]);
        let tr = integrate(&Harmonic, &s0, 0.1, 0.1, Method::Euler).unwrap();
        assert_eq!(tr.len(), 2);
        assert_eq!(tr.states[1], PhaseState::new(vec![1.0], vec![-0.1]));
    }

    #[test]
    fn rk4_closes_the_circle() {
        let s0 = PhaseState::new(vec![1.0], vec![0.0]);
        let tr = integrate(&SystemSpec::linear(1), &s0, 2.0 * PI, 0.01, Method::Rk4).unwrap();
        let end = tr.states.last().unwrap();
        assert!(((end.q[0] - 1.0).powi(2) + end.p[0].powi(2)).sqrt() < 1e-7);
        assert_eq!(*tr.times.last().unwrap(), 2.0 * PI);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let s0 = PhaseState::new(vec![1.0], vec![0.0]);
        let err = |dt: f64| {
            let tr = integrate(&Harmonic, &s0, 2.0, dt, Method::Rk4).unwrap();
            let e = tr.states.last().unwrap();
            ((e.q[0] - 2f64.cos()).powi(2) + (e.p[0] + 2f64.sin()).powi(2)).sqrt()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn whole_horizon_step_gives_two_states() {
        let s0 = PhaseState::new(vec![1.0], vec![0.0]);
        let tr = integrate(&Harmonic, &s0, 0.7, 0.7, Method::Rk4).unwrap();
        assert_eq!(tr.len(), 2);
    }

    #[test]
    fn non_dividing_step_is_shrunk() {
        let (k, h) = step_grid(16.0 * PI, 0.1).unwrap();
        assert_eq!(k, 503);
        assert!((k as f64 * h - 16.0 * PI).abs() < 1e-12);
        assert!(step_grid(1.0, 0.0).is_err());
        assert!(step_grid(-1.0, 0.1).is_err());
    }

    #[test]
    fn zero_networks_have_zero_fields() {
        for flavor in [Flavor::Nn, Flavor::Hnn] {
            let f = zero_net(flavor, 2);
            let (qd, pd) = f.learned_vector_field(&PhaseState::new(vec![0.3, -1.0], vec![2.0, 0.5])).unwrap();
            assert_eq!((qd, pd), (vec![0.0; 2], vec![0.0; 2]));
        }
    }

    #[test]
    fn shape_and_dimension_checks() {
        let p = MlpParams::init(&NetSpec::standard(2, 2, 0)).unwrap();
        assert!(LearnedField::new(Flavor::Hnn, p.clone()).is_err());
        let f = LearnedField::new(Flavor::Nn, p).unwrap();
        assert!(f.learned_vector_field(&PhaseState::zeros(2)).is_err());
        assert!(integrate(&f, &PhaseState::zeros(2), 1.0, 0.1, Method::Rk4).is_err());
    }

    #[test]
    fn divergent_rollout_is_truncated() {
        struct Blowup;
        impl Dynamics for Blowup {
            fn dof(&self) -> usize {
                1
            }
            fn eval(&self, x: &[f64], out: &mut [f64]) {
                out[0] = 10.0 * x[0];
                out[1] = 0.0;
            }
        }
        let tr = integrate(&Blowup, &PhaseState::new(vec![1.0], vec![0.0]), 10.0, 0.1, Method::Euler).unwrap();
        assert!(tr.divergent);
        assert!(tr.len() < 101);
        assert!(tr.states.iter().all(|s| s.norm() <= DIVERGENCE_NORM));
    }
}
