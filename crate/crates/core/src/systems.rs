//! Exact Hamiltonians, vector fields and initial-condition samplers.
//!
//! All systems use unit masses, so momentum and velocity coincide.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::autodiff::{Expr, Graph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("state has dimension {got}, system has d = {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid system parameters: {0}")]
    InvalidParams(String),
    #[error("energy range [{lo}, {hi}] is unreachable (minimum energy {min})")]
    Unreachable { lo: f64, hi: f64, min: f64 },
    #[error("could not hit target energy {target} after {iters} iterations")]
    SamplingFailed { target: f64, iters: usize },
}

/// Point `(q, p)` in `2d`-dimensional phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        assert_eq!(q.len(), p.len(), "q and p must have equal length");
        Self { q, p }
    }

    pub fn zeros(d: usize) -> Self {
        Self::new(vec![0.0; d], vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// `[q_1..q_d, p_1..p_d]`
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.dim());
        v.extend_from_slice(&self.q);
        v.extend_from_slice(&self.p);
        v
    }

    pub fn from_flat(v: &[f64]) -> Self {
        assert!(v.len() % 2 == 0, "flat phase vector must have even length");
        let d = v.len() / 2;
        Self::new(v[..d].to_vec(), v[d..].to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.q.iter().chain(&self.p).map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Linear,
    Quartic,
    BistableChain,
}

impl Family {
    pub fn tag(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Quartic => "quartic",
            Family::BistableChain => "chain",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Family {
    type Err = SystemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Family::Linear),
            "quartic" => Ok(Family::Quartic),
            "chain" | "bistable" | "bistable_chain" => Ok(Family::BistableChain),
            other => Err(SystemError::InvalidParams(format!("unknown family `{other}`"))),
        }
    }
}

/// Coefficients of the bistable chain: on-site force `a q - b q^3`, nearest
/// neighbour springs of stiffness `kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainParams {
    pub a: f64,
    pub b: f64,
    pub kappa: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0, kappa: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemSpec {
    pub family: Family,
    pub d: usize,
    /// Only read for [`Family::BistableChain`].
    pub chain: ChainParams,
}

impl SystemSpec {
    pub fn linear(d: usize) -> Self {
        Self { family: Family::Linear, d, chain: ChainParams::default() }
    }

    pub fn quartic(d: usize) -> Self {
        Self { family: Family::Quartic, d, chain: ChainParams::default() }
    }

    pub fn chain(d: usize, chain: ChainParams) -> Self {
        Self { family: Family::BistableChain, d, chain }
    }

    pub fn new(family: Family, d: usize, chain: ChainParams) -> Result<Self, SystemError> {
        let spec = Self { family, d, chain };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SystemError> {
        if self.d == 0 {
            return Err(SystemError::InvalidParams("d must be at least 1".into()));
        }
        if self.family == Family::BistableChain {
            let ChainParams { a, b, kappa } = self.chain;
            if !(a > 0.0 && b > 0.0 && kappa > 0.0) {
                return Err(SystemError::InvalidParams(format!(
                    "chain needs a, b, kappa > 0, got a={a} b={b} kappa={kappa}"
                )));
            }
        }
        Ok(())
    }

    fn check(&self, state: &PhaseState) -> Result<(), SystemError> {
        if state.dim() != self.d {
            return Err(SystemError::DimensionMismatch { expected: self.d, got: state.dim() });
        }
        Ok(())
    }

    fn potential(&self, q: &[f64]) -> f64 {
        match self.family {
            Family::Linear => q.iter().map(|x| 0.5 * x * x).sum(),
            Family::Quartic => q.iter().map(|x| 0.25 * x.powi(4)).sum(),
            Family::BistableChain => {
                let ChainParams { a, b, kappa } = self.chain;
                let onsite: f64 = q.iter().map(|&x| -0.5 * a * x * x + 0.25 * b * x.powi(4)).sum();
                // free ends: the q_{d+1} = q_d ghost term vanishes
                let springs: f64 = q.windows(2).map(|w| 0.5 * kappa * (w[0] - w[1]).powi(2)).sum();
                onsite + springs
            }
        }
    }

    fn force_into(&self, q: &[f64], out: &mut [f64]) {
        match self.family {
            Family::Linear => out.iter_mut().zip(q).for_each(|(f, x)| *f = -x),
            Family::Quartic => out.iter_mut().zip(q).for_each(|(f, x)| *f = -x * x * x),
            Family::BistableChain => {
                let ChainParams { a, b, kappa } = self.chain;
                let d = q.len();
                for n in 0..d {
                    let left = if n == 0 { q[0] } else { q[n - 1] };
                    let right = if n + 1 == d { q[d - 1] } else { q[n + 1] };
                    out[n] = a * q[n] - b * q[n].powi(3) + kappa * (left - 2.0 * q[n] + right);
                }
            }
        }
    }

    pub fn hamiltonian(&self, state: &PhaseState) -> Result<f64, SystemError> {
        self.check(state)?;
        Ok(self.energy_unchecked(&state.q, &state.p))
    }

    pub(crate) fn energy_unchecked(&self, q: &[f64], p: &[f64]) -> f64 {
        let kinetic: f64 = p.iter().map(|x| 0.5 * x * x).sum();
        kinetic + self.potential(q)
    }

    /// `(dq/dt, dp/dt)` from Hamilton's equations.
    pub fn exact_vector_field(&self, state: &PhaseState) -> Result<(Vec<f64>, Vec<f64>), SystemError> {
        self.check(state)?;
        let mut pdot = vec![0.0; self.d];
        self.force_into(&state.q, &mut pdot);
        Ok((state.p.clone(), pdot))
    }

    /// Flat-vector form of the vector field, `x = [q, p]`.
    pub(crate) fn field_flat(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        out[..d].copy_from_slice(&x[d..]);
        self.force_into(&x[..d], &mut out[d..]);
    }

    /// The Hamiltonian written as an expression over `q` and `p`.
    pub fn hamiltonian_expr(&self, g: &mut Graph, q: &[Expr], p: &[Expr]) -> Expr {
        assert_eq!(q.len(), self.d);
        assert_eq!(p.len(), self.d);
        let mut terms = Vec::new();
        for &pn in p {
            let sq = g.powi(pn, 2);
            terms.push(g.scale(0.5, sq));
        }
        match self.family {
            Family::Linear => {
                for &qn in q {
                    let sq = g.powi(qn, 2);
                    terms.push(g.scale(0.5, sq));
                }
            }
            Family::Quartic => {
                for &qn in q {
                    let q4 = g.powi(qn, 4);
                    terms.push(g.scale(0.25, q4));
                }
            }
            Family::BistableChain => {
                let ChainParams { a, b, kappa } = self.chain;
                for &qn in q {
                    let q2 = g.powi(qn, 2);
                    let q4 = g.powi(qn, 4);
                    let t2 = g.scale(-0.5 * a, q2);
                    let t4 = g.scale(0.25 * b, q4);
                    terms.push(g.add(t2, t4));
                }
                for w in q.windows(2) {
                    let diff = g.sub(w[0], w[1]);
                    let sq = g.powi(diff, 2);
                    terms.push(g.scale(0.5 * kappa, sq));
                }
            }
        }
        g.sum(terms)
    }

    /// Lowest energy state and its energy.
    pub fn ground_state(&self, upper_well: bool) -> (PhaseState, f64) {
        let mut state = PhaseState::zeros(self.d);
        if self.family == Family::BistableChain {
            let ChainParams { a, b, .. } = self.chain;
            let well = (a / b).sqrt();
            state.q.fill(if upper_well { well } else { -well });
        }
        let e = self.energy_unchecked(&state.q, &state.p);
        (state, e)
    }

    /// Draws a state whose energy lies in `[lo, hi]`.
    ///
    /// A uniformly random direction in phase space is followed outward from
    /// a ground state (a random well for the chain) until the energy reaches
    /// a uniformly drawn target, which is then pinned down by bisection.
    pub fn sample_initial_state<R: Rng + ?Sized>(
        &self,
        energy_range: [f64; 2],
        rng: &mut R,
    ) -> Result<PhaseState, SystemError> {
        const ITERS: usize = 200;
        let [lo, hi] = energy_range;
        if !(lo >= 0.0 && lo < hi) || !hi.is_finite() {
            return Err(SystemError::InvalidParams(format!(
                "energy range must satisfy 0 <= lo < hi, got [{lo}, {hi}]"
            )));
        }
        let (base, e_min) = self.ground_state(rng.random_bool(0.5));
        if hi <= e_min {
            return Err(SystemError::Unreachable { lo, hi, min: e_min });
        }
        let lo = lo.max(e_min);
        let tol = 1e-10f64.min((hi - lo) / 4.0);
        let target = rng.random_range(lo + tol..=hi - tol);

        let dir: Vec<f64> = loop {
            let v: Vec<f64> = (0..2 * self.d).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        };
        let base = base.to_flat();
        let d = self.d;
        let energy_at = |r: f64| {
            let x: Vec<f64> = base.iter().zip(&dir).map(|(b, u)| b + r * u).collect();
            (self.energy_unchecked(&x[..d], &x[d..]), x)
        };

        let (mut r_lo, mut r_hi) = (0.0, 1.0);
        let mut iters = 0;
        while energy_at(r_hi).0 < target {
            r_lo = r_hi;
            r_hi *= 2.0;
            iters += 1;
            if iters > ITERS {
                return Err(SystemError::SamplingFailed { target, iters });
            }
        }
        for _ in 0..ITERS {
            let mid = 0.5 * (r_lo + r_hi);
            let (e, x) = energy_at(mid);
            if (e - target).abs() <= tol {
                return Ok(PhaseState::from_flat(&x));
            }
            if e < target {
                r_lo = mid;
            } else {
                r_hi = mid;
            }
        }
        let (e, x) = energy_at(r_hi);
        if (e - target).abs() <= tol {
            Ok(PhaseState::from_flat(&x))
        } else {
            Err(SystemError::SamplingFailed { target, iters: ITERS })
        }
    }
}
