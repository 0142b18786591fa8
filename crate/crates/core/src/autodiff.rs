//! Scalar expression graphs with symbolic reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only arena of nodes. Every node refers only to
//! nodes created before it, so arena order is a topological order and the
//! graph is acyclic by construction.
//!
//! [`Graph::gradient`] does not compute numbers. It appends new nodes that
//! *are* the partial derivatives, so a gradient is an ordinary expression
//! that can be combined with others and differentiated again. This is what
//! makes losses built from input-gradients (Hamilton's equations applied to
//! a learned energy) differentiable with respect to the network weights.
//!
//! ```
//! use hamnet::autodiff::Graph;
//!
//! let mut g = Graph::new();
//! let w = g.var("w");
//! let x = g.var("x");
//! let x2 = g.powi(x.expr(), 2);
//! let f = g.mul(w.expr(), x2);
//! let df_dx = g.gradient(f, &[x])[0];
//! let r = g.grad(df_dx, &[w, x], &[3.0, 2.0]).unwrap();
//! assert_eq!(r.value, 12.0);
//! assert_eq!(r.partial(w), Some(4.0));
//! ```

use std::fmt;

use thiserror::Error;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expr(u32);

impl Expr {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A differentiation target. Each variable owns exactly one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    id: u32,
    node: Expr,
}

impl Var {
    pub fn id(self) -> usize {
        self.id as usize
    }

    pub fn expr(self) -> Expr {
        self.node
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(u32),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Neg(Expr),
    PowI(Expr, i32),
    Tanh(Expr),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Const(_) => "const",
            Op::Var(_) => "var",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::PowI(..) => "powi",
            Op::Tanh(_) => "tanh",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("non-finite value {value} at node {node} ({kind})")]
    NonFinite {
        node: usize,
        kind: &'static str,
        value: f64,
    },
    #[error("variable `{0}` is reachable but has no value")]
    Unbound(String),
    #[error("expected {expected} values, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
}

/// Value and partial derivatives of a scalar expression at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub value: f64,
    pub partials: Vec<(Var, f64)>,
}

impl GradResult {
    pub fn partial(&self, var: Var) -> Option<f64> {
        self.partials
            .iter()
            .find(|(v, _)| *v == var)
            .map(|&(_, d)| d)
    }

    pub fn partial_values(&self) -> Vec<f64> {
        self.partials.iter().map(|&(_, d)| d).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Op>,
    var_names: Vec<String>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn var_name(&self, var: Var) -> &str {
        &self.var_names[var.id()]
    }

    fn push(&mut self, op: Op) -> Expr {
        let id = Expr(self.nodes.len() as u32);
        self.nodes.push(op);
        id
    }

    fn as_const(&self, e: Expr) -> Option<f64> {
        match self.nodes[e.index()] {
            Op::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn var(&mut self, name: impl Into<String>) -> Var {
        let id = self.var_names.len() as u32;
        self.var_names.push(name.into());
        let node = self.push(Op::Var(id));
        Var { id, node }
    }

    pub fn constant(&mut self, c: f64) -> Expr {
        self.push(Op::Const(c))
    }

    pub fn add(&mut self, a: Expr, b: Expr) -> Expr {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => self.constant(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => self.push(Op::Add(a, b)),
        }
    }

    pub fn sub(&mut self, a: Expr, b: Expr) -> Expr {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => self.constant(x - y),
            (Some(x), _) if x == 0.0 => self.neg(b),
            (_, Some(y)) if y == 0.0 => a,
            _ => self.push(Op::Sub(a, b)),
        }
    }

    pub fn mul(&mut self, a: Expr, b: Expr) -> Expr {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => self.constant(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => self.constant(0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            _ => self.push(Op::Mul(a, b)),
        }
    }

    pub fn div(&mut self, a: Expr, b: Expr) -> Expr {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => self.constant(x / y),
            (_, Some(y)) if y == 1.0 => a,
            _ => self.push(Op::Div(a, b)),
        }
    }

    pub fn neg(&mut self, a: Expr) -> Expr {
        match self.nodes[a.index()] {
            Op::Const(x) => self.constant(-x),
            Op::Neg(inner) => inner,
            _ => self.push(Op::Neg(a)),
        }
    }

    pub fn powi(&mut self, a: Expr, n: i32) -> Expr {
        match (self.as_const(a), n) {
            (_, 0) => self.constant(1.0),
            (_, 1) => a,
            (Some(x), n) => self.constant(x.powi(n)),
            _ => self.push(Op::PowI(a, n)),
        }
    }

    pub fn tanh(&mut self, a: Expr) -> Expr {
        match self.as_const(a) {
            Some(x) => self.constant(x.tanh()),
            None => self.push(Op::Tanh(a)),
        }
    }

    pub fn scale(&mut self, c: f64, a: Expr) -> Expr {
        let k = self.constant(c);
        self.mul(k, a)
    }

    /// Left fold with `add`; the empty sum is the constant zero.
    pub fn sum<I: IntoIterator<Item = Expr>>(&mut self, terms: I) -> Expr {
        let mut iter = terms.into_iter();
        let Some(first) = iter.next() else {
            return self.constant(0.0);
        };
        iter.fold(first, |acc, t| self.add(acc, t))
    }

    /// Appends nodes computing `∂f/∂v` for each `v` in `wrt` and returns them.
    ///
    /// Variables that `f` does not depend on get the constant zero.
    pub fn gradient(&mut self, f: Expr, wrt: &[Var]) -> Vec<Expr> {
        let top = f.index();
        let mut adj: Vec<Option<Expr>> = vec![None; top + 1];
        adj[top] = Some(self.constant(1.0));

        for i in (0..=top).rev() {
            let Some(a) = adj[i] else { continue };
            let node = Expr(i as u32);
            match self.nodes[i] {
                Op::Const(_) | Op::Var(_) => {}
                Op::Add(x, y) => {
                    self.accumulate(&mut adj, x, a);
                    self.accumulate(&mut adj, y, a);
                }
                Op::Sub(x, y) => {
                    self.accumulate(&mut adj, x, a);
                    let na = self.neg(a);
                    self.accumulate(&mut adj, y, na);
                }
                Op::Mul(x, y) => {
                    let dx = self.mul(a, y);
                    self.accumulate(&mut adj, x, dx);
                    let dy = self.mul(a, x);
                    self.accumulate(&mut adj, y, dy);
                }
                Op::Div(x, y) => {
                    let dx = self.div(a, y);
                    self.accumulate(&mut adj, x, dx);
                    // d(x/y)/dy = -(x/y)/y
                    let q = self.mul(dx, node);
                    let dy = self.neg(q);
                    self.accumulate(&mut adj, y, dy);
                }
                Op::Neg(x) => {
                    let na = self.neg(a);
                    self.accumulate(&mut adj, x, na);
                }
                Op::PowI(x, n) => {
                    let p = self.powi(x, n - 1);
                    let np = self.scale(n as f64, p);
                    let dx = self.mul(a, np);
                    self.accumulate(&mut adj, x, dx);
                }
                Op::Tanh(x) => {
                    let sq = self.powi(node, 2);
                    let one = self.constant(1.0);
                    let sech2 = self.sub(one, sq);
                    let dx = self.mul(a, sech2);
                    self.accumulate(&mut adj, x, dx);
                }
            }
        }

        wrt.iter()
            .map(|v| match adj.get(v.node.index()).copied().flatten() {
                Some(e) => e,
                None => self.constant(0.0),
            })
            .collect()
    }

    fn accumulate(&mut self, adj: &mut [Option<Expr>], target: Expr, contribution: Expr) {
        let total = match adj[target.index()] {
            None => contribution,
            Some(prev) => self.add(prev, contribution),
        };
        adj[target.index()] = Some(total);
    }

    /// Evaluates every node up to and including the largest of `outputs`.
    ///
    /// `values[v.id()]` supplies each variable; `None` is an error only if
    /// the variable is actually reached.
    pub fn evaluate(&self, outputs: &[Expr], values: &[Option<f64>]) -> Result<Vec<f64>, AutodiffError> {
        let Some(top) = outputs.iter().map(|e| e.index()).max() else {
            return Ok(Vec::new());
        };
        let needed = self.reachable(outputs, top);
        let mut val = vec![0.0; top + 1];
        for i in 0..=top {
            if !needed[i] {
                continue;
            }
            let v = match self.nodes[i] {
                Op::Const(c) => c,
                Op::Var(id) => values
                    .get(id as usize)
                    .copied()
                    .flatten()
                    .ok_or_else(|| AutodiffError::Unbound(self.var_names[id as usize].clone()))?,
                Op::Add(x, y) => val[x.index()] + val[y.index()],
                Op::Sub(x, y) => val[x.index()] - val[y.index()],
                Op::Mul(x, y) => val[x.index()] * val[y.index()],
                Op::Div(x, y) => val[x.index()] / val[y.index()],
                Op::Neg(x) => -val[x.index()],
                Op::PowI(x, n) => val[x.index()].powi(n),
                Op::Tanh(x) => val[x.index()].tanh(),
            };
            if !v.is_finite() {
                return Err(AutodiffError::NonFinite {
                    node: i,
                    kind: self.nodes[i].kind(),
                    value: v,
                });
            }
            val[i] = v;
        }
        Ok(outputs.iter().map(|e| val[e.index()]).collect())
    }

    fn reachable(&self, outputs: &[Expr], top: usize) -> Vec<bool> {
        let mut mark = vec![false; top + 1];
        for e in outputs {
            mark[e.index()] = true;
        }
        for i in (0..=top).rev() {
            if !mark[i] {
                continue;
            }
            match self.nodes[i] {
                Op::Const(_) | Op::Var(_) => {}
                Op::Add(x, y) | Op::Sub(x, y) | Op::Mul(x, y) | Op::Div(x, y) => {
                    mark[x.index()] = true;
                    mark[y.index()] = true;
                }
                Op::Neg(x) | Op::PowI(x, _) | Op::Tanh(x) => mark[x.index()] = true,
            }
        }
        mark
    }

    fn bind(&self, vars: &[Var], point: &[f64]) -> Result<Vec<Option<f64>>, AutodiffError> {
        if vars.len() != point.len() {
            return Err(AutodiffError::Arity {
                expected: vars.len(),
                got: point.len(),
            });
        }
        let mut values = vec![None; self.num_vars()];
        for (v, &x) in vars.iter().zip(point) {
            values[v.id()] = Some(x);
        }
        Ok(values)
    }

    /// Value and exact partials of `f` with respect to `vars` at `point`.
    ///
    /// `point[i]` is the value of `vars[i]`; every variable `f` reaches must
    /// be listed.
    pub fn grad(&mut self, f: Expr, vars: &[Var], point: &[f64]) -> Result<GradResult, AutodiffError> {
        let values = self.bind(vars, point)?;
        let partials = self.gradient(f, vars);
        let mut outputs = Vec::with_capacity(vars.len() + 1);
        outputs.push(f);
        outputs.extend(&partials);
        let out = self.evaluate(&outputs, &values)?;
        Ok(GradResult {
            value: out[0],
            partials: vars.iter().copied().zip(out[1..].iter().copied()).collect(),
        })
    }

    /// Differentiates `f` with respect to `inner`, lets `combine` build a
    /// scalar from those gradient expressions, then differentiates that
    /// scalar with respect to `outer`.
    ///
    /// `bindings` must give values for every variable the composite reaches.
    pub fn nested_grad<C>(
        &mut self,
        f: Expr,
        inner: &[Var],
        outer: &[Var],
        combine: C,
        bindings: &[(Var, f64)],
    ) -> Result<GradResult, AutodiffError>
    where
        C: FnOnce(&mut Graph, &[Expr]) -> Expr,
    {
        let inner_grads = self.gradient(f, inner);
        let composite = combine(self, &inner_grads);
        let (vars, point): (Vec<Var>, Vec<f64>) = bindings.iter().copied().unzip();
        let full = self.grad(composite, &vars, &point)?;
        Ok(GradResult {
            value: full.value,
            partials: outer
                .iter()
                .map(|&v| (v, full.partial(v).unwrap_or(0.0)))
                .collect(),
        })
    }

    /// Largest `|analytic - central difference| / max(1, |analytic|)` over `vars`.
    pub fn check_gradient(&mut self, f: Expr, vars: &[Var], point: &[f64], h: f64) -> Result<f64, AutodiffError> {
        if !(h > 0.0) {
            return Err(AutodiffError::BadStep(h));
        }
        let analytic = self.grad(f, vars, point)?;
        let mut worst: f64 = 0.0;
        let mut values = self.bind(vars, point)?;
        for (i, v) in vars.iter().enumerate() {
            let x0 = point[i];
            values[v.id()] = Some(x0 + h);
            let fp = self.evaluate(&[f], &values)?[0];
            values[v.id()] = Some(x0 - h);
            let fm = self.evaluate(&[f], &values)?[0];
            values[v.id()] = Some(x0);
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic.partials[i].1;
            worst = worst.max((a - fd).abs() / a.abs().max(1.0));
        }
        Ok(worst)
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, op) in self.nodes.iter().enumerate() {
            match op {
                Op::Var(id) => writeln!(f, "%{i} = var {}", self.var_names[*id as usize])?,
                other => writeln!(f, "%{i} = {other:?}")?,
            }
        }
        Ok(())
    }
}
