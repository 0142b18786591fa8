//! Fixed-topology tanh multilayer perceptron.
//!
//! Hidden layers compute `a = tanh(W a_prev + b)`; the output layer is
//! affine. All weights and biases live in one flat coefficient vector so
//! the optimizer can treat them uniformly.
//!
//! Layout, repeated for every layer in order: the weight matrix row-major
//! (`n_out` rows of `n_in` entries), then the `n_out` biases.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Expr, Graph};

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("input has length {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input gradient needs a scalar network, this one has {0} outputs")]
    NotScalar(usize),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("malformed parameter file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl NetSpec {
    /// Two hidden layers of 32 tanh units.
    pub fn standard(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden_layers: 2,
            width: 32,
            output_dim,
            activation: Activation::Tanh,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        if self.input_dim == 0 {
            return Err(MlpError::InvalidSpec("input_dim must be positive".into()));
        }
        if self.hidden_layers == 0 || self.width == 0 {
            return Err(MlpError::InvalidSpec(
                "need at least one hidden layer of positive width".into(),
            ));
        }
        if self.output_dim != 1 && self.output_dim != self.input_dim {
            return Err(MlpError::InvalidSpec(format!(
                "output_dim must be 1 or {}, got {}",
                self.input_dim, self.output_dim
            )));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_layers + 2);
        sizes.push(self.input_dim);
        sizes.extend(std::iter::repeat(self.width).take(self.hidden_layers));
        sizes.push(self.output_dim);
        sizes
    }
}

/// Weights and biases of a network, together with the topology that gives
/// them meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    activation: Activation,
    seed: u64,
    coeffs: Vec<f64>,
}

/// Borrowed view of one affine layer.
#[derive(Debug, Clone, Copy)]
pub struct Layer<'a> {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: &'a [f64],
    pub bias: &'a [f64],
}

impl Layer<'_> {
    /// `out = W x + b`
    #[inline]
    pub fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.weights[j * self.n_in..(j + 1) * self.n_in];
            *o = self.bias[j] + dot(row, x);
        }
    }

    /// `out = W^T y`
    #[inline]
    pub fn transpose_mul(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (j, &yj) in y.iter().enumerate() {
            if yj == 0.0 {
                continue;
            }
            let row = &self.weights[j * self.n_in..(j + 1) * self.n_in];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * yj;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpParams {
    /// Glorot-uniform weights drawn from a ChaCha8 stream seeded by
    /// `spec.seed`; zero biases.
    pub fn init(spec: &NetSpec) -> Result<Self, MlpError> {
        spec.validate()?;
        let layer_sizes = spec.layer_sizes();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut coeffs = Vec::with_capacity(param_count(&layer_sizes));
        for w in layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            coeffs.extend((0..n_in * n_out).map(|_| rng.random_range(-limit..limit)));
            coeffs.extend(std::iter::repeat(0.0).take(n_out));
        }
        Ok(Self {
            layer_sizes,
            activation: spec.activation,
            seed: spec.seed,
            coeffs,
        })
    }

    pub fn from_parts(layer_sizes: Vec<usize>, seed: u64, coeffs: Vec<f64>) -> Result<Self, MlpError> {
        if layer_sizes.len() < 3 || layer_sizes.iter().any(|&n| n == 0) {
            return Err(MlpError::InvalidSpec(format!(
                "bad layer sizes {layer_sizes:?}"
            )));
        }
        let expected = param_count(&layer_sizes);
        if coeffs.len() != expected {
            return Err(MlpError::InvalidSpec(format!(
                "{} coefficients for layer sizes {layer_sizes:?}, expected {expected}",
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(MlpError::InvalidSpec("non-finite coefficient".into()));
        }
        Ok(Self {
            layer_sizes,
            activation: Activation::Tanh,
            seed,
            coeffs,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn layer(&self, l: usize) -> Layer<'_> {
        let (offset, n_in, n_out) = self.layer_offset(l);
        let w_end = offset + n_in * n_out;
        Layer {
            n_in,
            n_out,
            weights: &self.coeffs[offset..w_end],
            bias: &self.coeffs[w_end..w_end + n_out],
        }
    }

    /// Start offset, fan-in and fan-out of layer `l` in the flat vector.
    pub fn layer_offset(&self, l: usize) -> (usize, usize, usize) {
        let offset = param_count(&self.layer_sizes[..=l]);
        (offset, self.layer_sizes[l], self.layer_sizes[l + 1])
    }

    pub fn final_bias_mut(&mut self) -> &mut [f64] {
        let l = self.num_layers() - 1;
        let (offset, n_in, n_out) = self.layer_offset(l);
        let start = offset + n_in * n_out;
        &mut self.coeffs[start..start + n_out]
    }

    fn check_input(&self, input: &[f64]) -> Result<(), MlpError> {
        if input.len() != self.input_dim() {
            return Err(MlpError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Hidden activations `a_1..a_{L-1}` followed by the output.
    pub(crate) fn activations(&self, input: &[f64], acts: &mut Vec<Vec<f64>>) {
        let n = self.num_layers();
        acts.resize_with(n, Vec::new);
        for l in 0..n {
            let layer = self.layer(l);
            let (done, rest) = acts.split_at_mut(l);
            let prev: &[f64] = if l == 0 { input } else { &done[l - 1] };
            let cur = &mut rest[0];
            cur.resize(layer.n_out, 0.0);
            layer.affine(prev, cur);
            if l + 1 < n {
                cur.iter_mut().for_each(|z| *z = z.tanh());
            }
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, MlpError> {
        self.check_input(input)?;
        let mut acts = Vec::new();
        self.activations(input, &mut acts);
        Ok(acts.pop().unwrap())
    }

    /// Exact gradient of the scalar output with respect to the input.
    pub fn input_gradient(&self, input: &[f64]) -> Result<Vec<f64>, MlpError> {
        if self.output_dim() != 1 {
            return Err(MlpError::NotScalar(self.output_dim()));
        }
        self.check_input(input)?;
        let mut acts = Vec::new();
        self.activations(input, &mut acts);
        let mut delta = Vec::new();
        let mut out = vec![0.0; self.input_dim()];
        self.input_gradient_from(&acts, &mut delta, &mut out);
        Ok(out)
    }

    /// Backpropagates a unit seed from the scalar output to the input,
    /// reusing activations already computed by [`Self::activations`].
    pub(crate) fn input_gradient_from(&self, acts: &[Vec<f64>], delta: &mut Vec<f64>, out: &mut [f64]) {
        let n = self.num_layers();
        let top = self.layer(n - 1);
        // d(out)/d(a_{L-1}) is the output weight row.
        delta.clear();
        delta.extend_from_slice(top.weights);
        let mut next = Vec::new();
        for l in (0..n - 1).rev() {
            let a = &acts[l];
            delta.iter_mut().zip(a).for_each(|(d, &al)| *d *= 1.0 - al * al);
            let layer = self.layer(l);
            if l == 0 {
                layer.transpose_mul(delta, out);
            } else {
                next.resize(layer.n_in, 0.0);
                layer.transpose_mul(delta, &mut next);
                std::mem::swap(delta, &mut next);
            }
        }
    }

    /// Builds the network as an expression over `coeffs` (laid out like
    /// [`Self::coeffs`]) and `inputs`. Used as an independent reference for
    /// the hand-written passes.
    pub fn forward_expr(layer_sizes: &[usize], g: &mut Graph, coeffs: &[Expr], inputs: &[Expr]) -> Vec<Expr> {
        assert_eq!(coeffs.len(), param_count(layer_sizes));
        assert_eq!(inputs.len(), layer_sizes[0]);
        let n = layer_sizes.len() - 1;
        let mut prev = inputs.to_vec();
        let mut offset = 0;
        for l in 0..n {
            let (n_in, n_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let w = &coeffs[offset..offset + n_in * n_out];
            let b = &coeffs[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let cur: Vec<Expr> = (0..n_out)
                .map(|j| {
                    let terms: Vec<Expr> = (0..n_in).map(|i| g.mul(w[j * n_in + i], prev[i])).collect();
                    let s = g.sum(terms);
                    let z = g.add(s, b[j]);
                    if l + 1 < n {
                        g.tanh(z)
                    } else {
                        z
                    }
                })
                .collect();
            prev = cur;
        }
        prev
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sizes: Vec<String> = self.layer_sizes.iter().map(|n| n.to_string()).collect();
        writeln!(s, "hamnet-mlp 1").unwrap();
        writeln!(s, "layers {}", sizes.join(" ")).unwrap();
        writeln!(s, "activation {}", self.activation.tag()).unwrap();
        writeln!(s, "seed {}", self.seed).unwrap();
        writeln!(s, "coefficients {}", self.coeffs.len()).unwrap();
        for c in &self.coeffs {
            // `{:e}` prints the shortest digits that parse back to the same bits.
            writeln!(s, "{c:e}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, MlpError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut field = |key: &str| -> Result<String, MlpError> {
            let line = lines
                .next()
                .ok_or_else(|| MlpError::Parse(format!("missing `{key}` line")))?;
            line.strip_prefix(key)
                .map(|rest| rest.trim().to_string())
                .ok_or_else(|| MlpError::Parse(format!("expected `{key}`, found `{line}`")))
        };
        let version = field("hamnet-mlp")?;
        if version != "1" {
            return Err(MlpError::Parse(format!("unsupported version {version}")));
        }
        let layer_sizes = field("layers")?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| MlpError::Parse(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let activation = field("activation")?;
        if activation != "tanh" {
            return Err(MlpError::Parse(format!("unknown activation {activation}")));
        }
        let seed = field("seed")?
            .parse::<u64>()
            .map_err(|e| MlpError::Parse(e.to_string()))?;
        let count = field("coefficients")?
            .parse::<usize>()
            .map_err(|e| MlpError::Parse(e.to_string()))?;
        let coeffs = lines
            .map(|l| l.trim().parse::<f64>().map_err(|e| MlpError::Parse(format!("{l}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if coeffs.len() != count {
            return Err(MlpError::Parse(format!(
                "header declares {count} coefficients, found {}",
                coeffs.len()
            )));
        }
        Self::from_parts(layer_sizes, seed, coeffs)
    }

    pub fn save(&self, path: &Path) -> Result<(), MlpError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MlpError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
