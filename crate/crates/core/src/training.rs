//! Costs, their weight-gradients, and Adam training.
//!
//! The NN cost compares network outputs with the target derivatives. The
//! HNN cost compares the symplectic gradient of the scalar network output,
//! `(dH/dp, -dH/dq)`, with the target derivatives; its weight-gradient is a
//! second derivative of the network. Both gradients are computed by
//! hand-written passes over the layers. [`graph_loss_gradient`] rebuilds the
//! same quantities on the expression graph for cross-checking.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Expr, Graph, Var};
use crate::dataset::{Flavor, TrainingPair};
use crate::mlp::{dot, MlpError, MlpParams, NetSpec};
use crate::seeds;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("pair flavor {pair} does not match the {expected} network")]
    FlavorMismatch { expected: Flavor, pair: Flavor },
    #[error("network has {outputs} outputs, {flavor} pairs need {needed}")]
    Shape { flavor: Flavor, outputs: usize, needed: usize },
    #[error("no training pairs")]
    Empty,
    #[error("non-finite cost at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize },
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 1,
            epochs: 16,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::Config(format!(
                "need learning_rate > 0, batch_size >= 1, epochs >= 1; got {} / {} / {}",
                self.learning_rate, self.batch_size, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(TrainError::Config("Adam moments need 0 <= beta < 1 and eps > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, config: &OptimizerConfig) {
    assert_eq!(params.len(), grad.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + config.eps);
    }
}

fn check_pair(params: &MlpParams, pair: &TrainingPair, flavor: Flavor) -> Result<(), TrainError> {
    if pair.flavor != flavor {
        return Err(TrainError::FlavorMismatch { expected: flavor, pair: pair.flavor });
    }
    let needed = match flavor {
        Flavor::Nn => pair.input.len(),
        Flavor::Hnn => 1,
    };
    if params.output_dim() != needed {
        return Err(TrainError::Shape { flavor, outputs: params.output_dim(), needed });
    }
    if params.input_dim() != pair.input.len() {
        return Err(MlpError::DimensionMismatch { expected: params.input_dim(), got: pair.input.len() }.into());
    }
    Ok(())
}

fn squared_error(out: &[f64], target: &[f64]) -> f64 {
    out.iter().zip(target).map(|(o, t)| (t - o).powi(2)).sum()
}

/// `(dH/dp, -dH/dq)` from an input-gradient `[dH/dq, dH/dp]`.
pub fn symplectic(grad: &[f64]) -> Vec<f64> {
    let d = grad.len() / 2;
    grad[d..].iter().copied().chain(grad[..d].iter().map(|g| -g)).collect()
}

pub fn nn_loss(params: &MlpParams, pair: &TrainingPair) -> Result<f64, TrainError> {
    check_pair(params, pair, Flavor::Nn)?;
    let out = params.forward(&pair.input)?;
    Ok(squared_error(&out, &pair.target))
}

pub fn hnn_loss(params: &MlpParams, pair: &TrainingPair) -> Result<f64, TrainError> {
    check_pair(params, pair, Flavor::Hnn)?;
    let g = params.input_gradient(&pair.input)?;
    Ok(squared_error(&symplectic(&g), &pair.target))
}

pub fn loss(params: &MlpParams, pair: &TrainingPair) -> Result<f64, TrainError> {
    match pair.flavor {
        Flavor::Nn => nn_loss(params, pair),
        Flavor::Hnn => hnn_loss(params, pair),
    }
}

/// Reusable buffers for the gradient passes.
#[derive(Debug, Default)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    /// Forward tangents `t_l` (input tangent first) and pre-activation
    /// tangents `u_l`, HNN only.
    tangents: Vec<Vec<f64>>,
    pre_tangents: Vec<Vec<f64>>,
    delta: Vec<f64>,
    grad_in: Vec<f64>,
    bar_a: Vec<f64>,
    bar_t: Vec<f64>,
    bar_z: Vec<f64>,
    bar_u: Vec<f64>,
    next_a: Vec<f64>,
    next_t: Vec<f64>,
}

/// Adds `scale * dC/dw` for one pair into `grad` and returns `C`.
pub fn accumulate_gradient(
    params: &MlpParams,
    pair: &TrainingPair,
    scale: f64,
    grad: &mut [f64],
    s: &mut Scratch,
) -> f64 {
    match pair.flavor {
        Flavor::Nn => nn_gradient(params, pair, scale, grad, s),
        Flavor::Hnn => hnn_gradient(params, pair, scale, grad, s),
    }
}

/// `grad[W] += scale * outer(rows, cols)`, `grad[b] += scale * rows`.
#[inline]
fn add_outer(grad: &mut [f64], offset: usize, rows: &[f64], cols: &[f64], scale: f64, with_bias: bool) {
    let n_in = cols.len();
    for (j, &r) in rows.iter().enumerate() {
        let sr = scale * r;
        if sr == 0.0 {
            continue;
        }
        let row = &mut grad[offset + j * n_in..offset + (j + 1) * n_in];
        for (g, &c) in row.iter_mut().zip(cols) {
            *g += sr * c;
        }
    }
    if with_bias {
        let b = offset + rows.len() * n_in;
        for (g, &r) in grad[b..b + rows.len()].iter_mut().zip(rows) {
            *g += scale * r;
        }
    }
}

fn nn_gradient(params: &MlpParams, pair: &TrainingPair, scale: f64, grad: &mut [f64], s: &mut Scratch) -> f64 {
    let n = params.num_layers();
    params.activations(&pair.input, &mut s.acts);
    let out = &s.acts[n - 1];
    let cost = squared_error(out, &pair.target);
    s.bar_z.clear();
    s.bar_z.extend(out.iter().zip(&pair.target).map(|(o, t)| 2.0 * (o - t)));
    for l in (0..n).rev() {
        let layer = params.layer(l);
        let (offset, _, _) = params.layer_offset(l);
        let prev: &[f64] = if l == 0 { &pair.input } else { &s.acts[l - 1] };
        add_outer(grad, offset, &s.bar_z, prev, scale, true);
        if l > 0 {
            s.bar_a.resize(layer.n_in, 0.0);
            layer.transpose_mul(&s.bar_z, &mut s.bar_a);
            let a = &s.acts[l - 1];
            s.bar_z.clear();
            s.bar_z.extend(s.bar_a.iter().zip(a).map(|(g, &h)| g * (1.0 - h * h)));
        }
    }
    cost
}

/// The HNN cost depends on the weights only through `g = dH/dx`. With
/// `r = dC/dg` held fixed, `dC/dw = d(r . g)/dw`, and `r . g` is the
/// directional derivative of `H` along `r`. That derivative is a forward
/// tangent pass through the network; reversing the primal and tangent
/// passes together gives the weight-gradient exactly.
fn hnn_gradient(params: &MlpParams, pair: &TrainingPair, scale: f64, grad: &mut [f64], s: &mut Scratch) -> f64 {
    let n = params.num_layers();
    let x = &pair.input;
    let dim = x.len();
    let d = dim / 2;
    params.activations(x, &mut s.acts);
    s.grad_in.resize(dim, 0.0);
    params.input_gradient_from(&s.acts, &mut s.delta, &mut s.grad_in);

    // C = sum (qdot - dH/dp)^2 + (pdot + dH/dq)^2
    let g = &s.grad_in;
    let t = &pair.target;
    let mut cost = 0.0;
    s.tangents.resize_with(n, Vec::new);
    s.pre_tangents.resize_with(n - 1, Vec::new);
    let r = &mut s.tangents[0];
    r.resize(dim, 0.0);
    for i in 0..d {
        let eq = t[d + i] + g[i];
        let ep = t[i] - g[d + i];
        cost += eq * eq + ep * ep;
        r[i] = 2.0 * eq;
        r[d + i] = -2.0 * ep;
    }

    // tangent pass through the hidden layers
    for l in 0..n - 1 {
        let layer = params.layer(l);
        let (done, rest) = s.tangents.split_at_mut(l + 1);
        let u = &mut s.pre_tangents[l];
        u.resize(layer.n_out, 0.0);
        for (j, uj) in u.iter_mut().enumerate() {
            *uj = dot(&layer.weights[j * layer.n_in..(j + 1) * layer.n_in], &done[l]);
        }
        let tl = &mut rest[0];
        tl.clear();
        tl.extend(u.iter().zip(&s.acts[l]).map(|(uj, &a)| (1.0 - a * a) * uj));
    }

    // J = W_out t_{n-1}; the output bias never enters J.
    let top = params.layer(n - 1);
    let (top_offset, _, _) = params.layer_offset(n - 1);
    add_outer(grad, top_offset, &[1.0], &s.tangents[n - 1], scale, false);
    s.bar_t.clear();
    s.bar_t.extend_from_slice(top.weights);
    s.bar_a.clear();
    s.bar_a.resize(top.n_in, 0.0);

    for l in (0..n - 1).rev() {
        let layer = params.layer(l);
        let (offset, _, _) = params.layer_offset(l);
        let a = &s.acts[l];
        let u = &s.pre_tangents[l];
        s.bar_u.clear();
        s.bar_z.clear();
        for j in 0..layer.n_out {
            let sp = 1.0 - a[j] * a[j];
            s.bar_u.push(s.bar_t[j] * sp);
            let bar_aj = s.bar_a[j] - 2.0 * a[j] * u[j] * s.bar_t[j];
            s.bar_z.push(bar_aj * sp);
        }
        let t_in = &s.tangents[l];
        add_outer(grad, offset, &s.bar_u, t_in, scale, false);
        let h_in: &[f64] = if l == 0 { x } else { &s.acts[l - 1] };
        add_outer(grad, offset, &s.bar_z, h_in, scale, true);
        if l > 0 {
            s.next_t.resize(layer.n_in, 0.0);
            layer.transpose_mul(&s.bar_u, &mut s.next_t);
            s.next_a.resize(layer.n_in, 0.0);
            layer.transpose_mul(&s.bar_z, &mut s.next_a);
            std::mem::swap(&mut s.bar_t, &mut s.next_t);
            std::mem::swap(&mut s.bar_a, &mut s.next_a);
        }
    }
    cost
}

/// Cost and full weight-gradient for one pair.
pub fn loss_gradient(params: &MlpParams, pair: &TrainingPair) -> Result<(f64, Vec<f64>), TrainError> {
    check_pair(params, pair, pair.flavor)?;
    let mut grad = vec![0.0; params.coeffs().len()];
    let c = accumulate_gradient(params, pair, 1.0, &mut grad, &mut Scratch::default());
    Ok((c, grad))
}

/// The cost of one pair as an expression over the weights, with the pair's
/// input bound as constants. For HNN pairs the expression contains the
/// symbolic input-gradient of the network.
pub fn loss_expr(params: &MlpParams, pair: &TrainingPair) -> Result<(Graph, Expr, Vec<Var>), TrainError> {
    check_pair(params, pair, pair.flavor)?;
    let mut g = Graph::new();
    let w: Vec<Var> = (0..params.coeffs().len()).map(|i| g.var(format!("w{i}"))).collect();
    let we: Vec<Expr> = w.iter().map(|v| v.expr()).collect();
    let cost = match pair.flavor {
        Flavor::Nn => {
            let x: Vec<Expr> = pair.input.iter().map(|&v| g.constant(v)).collect();
            let out = MlpParams::forward_expr(params.layer_sizes(), &mut g, &we, &x);
            squared_error_expr(&mut g, &out, &pair.target)
        }
        Flavor::Hnn => {
            let xv: Vec<Var> = (0..pair.input.len()).map(|i| g.var(format!("x{i}"))).collect();
            let xe: Vec<Expr> = xv.iter().map(|v| v.expr()).collect();
            let h = MlpParams::forward_expr(params.layer_sizes(), &mut g, &we, &xe)[0];
            let dh = g.gradient(h, &xv);
            let d = xv.len() / 2;
            let mut predicted: Vec<Expr> = dh[d..].to_vec();
            for &dq in &dh[..d] {
                predicted.push(g.neg(dq));
            }
            let c = squared_error_expr(&mut g, &predicted, &pair.target);
            // bind the inputs after differentiating with respect to them
            return Ok((g, c, [w, xv].concat()));
        }
    };
    Ok((g, cost, w))
}

fn squared_error_expr(g: &mut Graph, out: &[Expr], target: &[f64]) -> Expr {
    let terms: Vec<Expr> = out
        .iter()
        .zip(target)
        .map(|(&o, &t)| {
            let tc = g.constant(t);
            let e = g.sub(tc, o);
            g.powi(e, 2)
        })
        .collect();
    g.sum(terms)
}

/// Cost and weight-gradient computed by differentiating the expression
/// graph of [`loss_expr`]; independent of the hand-written passes.
pub fn graph_loss_gradient(params: &MlpParams, pair: &TrainingPair) -> Result<(f64, Vec<f64>), TrainError> {
    let (mut g, cost, vars) = loss_expr(params, pair)?;
    let nw = params.coeffs().len();
    let point: Vec<f64> = match pair.flavor {
        Flavor::Nn => params.coeffs().to_vec(),
        Flavor::Hnn => [params.coeffs(), &pair.input[..]].concat(),
    };
    let r = g.grad(cost, &vars, &point)?;
    Ok((r.value, r.partial_values()[..nw].to_vec()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub params: MlpParams,
    pub flavor: Flavor,
    pub epoch_costs: Vec<f64>,
    pub total_inputs: usize,
}

impl TrainReport {
    pub fn to_csv(&self, meta: &crate::csvio::Metadata) -> String {
        let rows = self
            .epoch_costs
            .iter()
            .enumerate()
            .map(|(e, c)| vec![(e + 1).to_string(), crate::csvio::fmt_f64(*c)]);
        crate::csvio::render(meta, &["epoch", "mean_cost"], rows)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{} training: {} inputs, cost {:.3e} -> {:.3e}",
            self.flavor,
            self.total_inputs,
            self.epoch_costs.first().copied().unwrap_or(f64::NAN),
            self.epoch_costs.last().copied().unwrap_or(f64::NAN)
        );
        s
    }
}

/// Network shape needed for pairs of `flavor` with input size `dim`.
pub fn net_spec_for(flavor: Flavor, dim: usize, hidden_layers: usize, width: usize, seed: u64) -> NetSpec {
    NetSpec {
        hidden_layers,
        width,
        ..NetSpec::standard(
            dim,
            match flavor {
                Flavor::Nn => dim,
                Flavor::Hnn => 1,
            },
            seed,
        )
    }
}

/// Runs `epochs` passes over a per-epoch shuffle of `pairs`, with one Adam
/// update per mini-batch. The report's costs are per-epoch means of the
/// pre-update cost of each pair.
pub fn train(spec: &NetSpec, pairs: &[TrainingPair], config: &OptimizerConfig) -> Result<TrainReport, TrainError> {
    let params = MlpParams::init(spec)?;
    train_from(params, pairs, config)
}

pub fn train_from(
    mut params: MlpParams,
    pairs: &[TrainingPair],
    config: &OptimizerConfig,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    let Some(first) = pairs.first() else {
        return Err(TrainError::Empty);
    };
    let flavor = first.flavor;
    for p in pairs {
        check_pair(&params, p, flavor)?;
    }

    let n_params = params.coeffs().len();
    let mut adam = AdamState::new(n_params);
    let mut grad = vec![0.0; n_params];
    let mut scratch = Scratch::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_costs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(&[config.seed, epoch as u64]));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let c = accumulate_gradient(&params, &pairs[i], scale, &mut grad, &mut scratch);
                if !c.is_finite() {
                    return Err(TrainError::NonFinite { epoch, step: b });
                }
                total += c;
            }
            adam_step(params.coeffs_mut(), &grad, &mut adam, config);
        }
        epoch_costs.push(total / pairs.len() as f64);
    }
    if params.coeffs().iter().any(|c| !c.is_finite()) {
        return Err(TrainError::NonFinite { epoch: config.epochs, step: 0 });
    }

    Ok(TrainReport {
        params,
        flavor,
        epoch_costs,
        total_inputs: config.epochs * pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_training_set, DataConfig};
    use crate::exec::Execution;
    use crate::systems::SystemSpec;

    fn pair(flavor: Flavor, input: Vec<f64>, target: Vec<f64>) -> TrainingPair {
        TrainingPair { flavor, input, target }
    }

    fn zeroed(spec: &NetSpec) -> MlpParams {
        let mut p = MlpParams::init(spec).unwrap();
        p.coeffs_mut().fill(0.0);
        p
    }

    /// HNN cost of the exact energy (q^2 + p^2) / 2 on one pair.
    fn exact_quadratic_hnn_loss(q: f64, p: f64, target: [f64; 2]) -> f64 {
        let mut g = Graph::new();
        let qv = g.var("q");
        let pv = g.var("p");
        let spec = SystemSpec::linear(1);
        let h = spec.hamiltonian_expr(&mut g, &[qv.expr()], &[pv.expr()]);
        let dh = g.gradient(h, &[qv, pv]);
        let vals = g.evaluate(&dh, &[Some(q), Some(p)]).unwrap();
        (target[0] - vals[1]).powi(2) + (target[1] + vals[0]).powi(2)
    }

    #[test]
    fn nn_loss_examples() {
        let spec = NetSpec::standard(2, 2, 0);
        let p = zeroed(&spec);
        assert_eq!(nn_loss(&p, &pair(Flavor::Nn, vec![0.3, 0.1], vec![0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(nn_loss(&p, &pair(Flavor::Nn, vec![0.3, 0.1], vec![1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(nn_loss(&p, &pair(Flavor::Nn, vec![0.3, 0.1], vec![1.0, 2.0])).unwrap(), 5.0);
    }

    #[test]
    fn hnn_loss_examples() {
        let spec = NetSpec::standard(2, 1, 0);
        let p = zeroed(&spec);
        assert_eq!(hnn_loss(&p, &pair(Flavor::Hnn, vec![0.0, 1.0], vec![1.0, 0.0])).unwrap(), 1.0);
        // the exact energy reproduces the data it generated
        let s = crate::PhaseState::new(vec![0.4], vec![-0.9]);
        let tp = TrainingPair::from_state(&SystemSpec::linear(1), &s, Flavor::Hnn).unwrap();
        assert_eq!(exact_quadratic_hnn_loss(0.4, -0.9, [tp.target[0], tp.target[1]]), 0.0);
    }

    #[test]
    fn flavor_and_shape_mismatch() {
        let h = MlpParams::init(&NetSpec::standard(2, 1, 0)).unwrap();
        let n = MlpParams::init(&NetSpec::standard(2, 2, 0)).unwrap();
        let nn_pair = pair(Flavor::Nn, vec![0.0, 1.0], vec![1.0, 0.0]);
        let hnn_pair = pair(Flavor::Hnn, vec![0.0, 1.0], vec![1.0, 0.0]);
        assert!(matches!(hnn_loss(&h, &nn_pair), Err(TrainError::FlavorMismatch { .. })));
        assert!(matches!(nn_loss(&n, &hnn_pair), Err(TrainError::FlavorMismatch { .. })));
        assert!(matches!(nn_loss(&h, &nn_pair), Err(TrainError::Shape { .. })));
        assert!(matches!(hnn_loss(&n, &hnn_pair), Err(TrainError::Shape { .. })));
    }

    #[test]
    fn hand_gradients_match_graph_gradients() {
        for seed in 0..5 {
            for (flavor, out) in [(Flavor::Nn, 4), (Flavor::Hnn, 1)] {
                let spec = NetSpec { width: 5, ..NetSpec::standard(4, out, seed) };
                let mut params = MlpParams::init(&spec).unwrap();
                // nonzero biases exercise every term
                for (i, c) in params.coeffs_mut().iter_mut().enumerate() {
                    *c += 0.01 * ((i % 7) as f64 - 3.0);
                }
                let pr = pair(flavor, vec![0.3, -0.2, 0.8, 0.1], vec![0.5, -1.0, 0.25, 0.7]);
                let (c1, g1) = loss_gradient(&params, &pr).unwrap();
                let (c2, g2) = graph_loss_gradient(&params, &pr).unwrap();
                assert!((c1 - c2).abs() < 1e-13 * c1.max(1.0));
                for (a, b) in g1.iter().zip(&g2) {
                    assert!((a - b).abs() < 1e-12 * a.abs().max(1.0), "{flavor}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn hnn_gradient_matches_finite_differences() {
        let spec = NetSpec { hidden_layers: 2, width: 6, ..NetSpec::standard(2, 1, 17) };
        let params = MlpParams::init(&spec).unwrap();
        let pr = pair(Flavor::Hnn, vec![0.7, -0.3], vec![-0.3, -0.7]);
        let (_, grad) = loss_gradient(&params, &pr).unwrap();
        let h = 1e-5;
        for i in 0..params.coeffs().len() {
            let mut plus = params.clone();
            plus.coeffs_mut()[i] += h;
            let mut minus = params.clone();
            minus.coeffs_mut()[i] -= h;
            let fd = (hnn_loss(&plus, &pr).unwrap() - hnn_loss(&minus, &pr).unwrap()) / (2.0 * h);
            assert!((grad[i] - fd).abs() / grad[i].abs().max(1.0) < 1e-5, "coeff {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn final_bias_has_no_hnn_gradient_and_no_effect() {
        let spec = NetSpec::standard(4, 1, 3);
        let params = MlpParams::init(&spec).unwrap();
        let pr = pair(Flavor::Hnn, vec![0.1, 0.2, -0.3, 0.4], vec![1.0, 0.0, -0.5, 0.2]);
        let (c, g) = loss_gradient(&params, &pr).unwrap();
        assert_eq!(*g.last().unwrap(), 0.0);
        let mut shifted = params.clone();
        shifted.final_bias_mut()[0] += 123.456;
        assert_eq!(hnn_loss(&shifted, &pr).unwrap(), c);
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let cfg = OptimizerConfig::default();
        let mut w = [0.5];
        let mut st = AdamState::new(1);
        adam_step(&mut w, &[1.0], &mut st, &cfg);
        assert!((0.5 - w[0] - 1e-3).abs() < 1e-10);

        let mut w = [0.5, -2.0];
        let mut st = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut w, &[0.0, 0.0], &mut st, &cfg);
        }
        assert_eq!(w, [0.5, -2.0]);
    }

    #[test]
    fn train_rejects_empty_and_bad_config() {
        let spec = NetSpec::standard(2, 1, 0);
        assert!(matches!(train(&spec, &[], &OptimizerConfig::default()), Err(TrainError::Empty)));
        let cfg = OptimizerConfig { epochs: 0, ..Default::default() };
        let pr = pair(Flavor::Hnn, vec![0.0, 1.0], vec![1.0, 0.0]);
        assert!(matches!(train(&spec, &[pr], &cfg), Err(TrainError::Config(_))));
    }

    #[test]
    fn short_linear_training_reduces_cost_deterministically() {
        let sys = SystemSpec::linear(1);
        let data = DataConfig { energy_range: [0.0, 1.0], t_total: 10.0, dt: 0.1 };
        let (_, pairs) = build_training_set(&sys, &data, 1 << 10, Flavor::Hnn, 1, Execution::Sequential).unwrap();
        let spec = net_spec_for(Flavor::Hnn, 2, 2, 32, 5);
        let cfg = OptimizerConfig { epochs: 8, seed: 5, ..Default::default() };
        let a = train(&spec, &pairs, &cfg).unwrap();
        let b = train(&spec, &pairs, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_inputs, 8 << 10);
        let (first, last) = (a.epoch_costs[0], *a.epoch_costs.last().unwrap());
        assert!(last < 0.1 * first, "{:?}", a.epoch_costs);
    }

    #[test]
    fn batched_training_runs() {
        let sys = SystemSpec::quartic(1);
        let data = DataConfig { energy_range: [0.0, 1.0], t_total: 10.0, dt: 0.1 };
        let (_, pairs) = build_training_set(&sys, &data, 200, Flavor::Nn, 2, Execution::Sequential).unwrap();
        let spec = net_spec_for(Flavor::Nn, 2, 2, 16, 1);
        let cfg = OptimizerConfig { epochs: 3, batch_size: 8, ..Default::default() };
        let r = train(&spec, &pairs, &cfg).unwrap();
        assert_eq!(r.epoch_costs.len(), 3);
        assert!(r.epoch_costs.iter().all(|c| c.is_finite()));
    }
}
