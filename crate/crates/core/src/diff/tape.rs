//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A forward pass records every primitive application on a [`Tape`] in
//! execution order, which is already a topological order. [`Tape::backward`]
//! walks the record in reverse and accumulates vector-Jacobian products into
//! each input, so a value consumed twice receives the sum of both
//! contributions.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Lower clamp applied before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// `a · b`
    MatMul,
    /// `a · x` with `x` a column vector.
    MatVec,
    Add,
    Mul,
    Scale(f64),
    /// Side-by-side concatenation of equal-height blocks (feature axis).
    Concat,
    /// Stacking of equal-width blocks.
    ConcatRows,
    Transpose,
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
    Relu,
    /// Max-shifted softmax over a row or column vector.
    Softmax,
    /// `ln(max(x, LOG_CLAMP))`
    Log,
    Mean,
    Sum,
}

impl Primitive {
    fn name(self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::MatVec => "matvec",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::Concat => "concat",
            Primitive::ConcatRows => "concat_rows",
            Primitive::Transpose => "transpose",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::LeakyRelu(_) => "leaky_relu",
            Primitive::Relu => "relu",
            Primitive::Softmax => "softmax",
            Primitive::Log => "log",
            Primitive::Mean => "mean",
            Primitive::Sum => "sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    /// `None` for leaves and constants.
    prim: Option<Primitive>,
    inputs: Vec<Var>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: one gradient per recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`; zero when unreachable.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn shapes_of(tape: &Tape, inputs: &[Var]) -> String {
    inputs
        .iter()
        .map(|v| {
            let (r, c) = tape.value(*v).shape();
            format!("{r}x{c}")
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Max-shifted softmax; entries sum to one and are positive unless they underflow.
pub fn stable_softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::shape("softmax", "empty input vector"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite {
            context: "softmax input".into(),
        });
    }
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, None, Vec::new(), true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, None, Vec::new(), false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, prim: Option<Primitive>, inputs: Vec<Var>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            prim,
            inputs,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Applies `prim` to `inputs`, records it, and returns the output handle.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let value = self.forward_value(prim, inputs)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{} on [{}]", prim.name(), shapes_of(self, inputs)),
            });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(value, Some(prim), inputs.to_vec(), needs_grad))
    }

    fn arity(&self, prim: Primitive, inputs: &[Var], n: usize) -> Result<()> {
        if inputs.len() != n {
            return Err(Error::shape(
                prim.name(),
                format!("expected {n} inputs, got {}", inputs.len()),
            ));
        }
        Ok(())
    }

    fn forward_value(&self, prim: Primitive, inputs: &[Var]) -> Result<Matrix> {
        let mismatch = || Error::shape(prim.name(), format!("incompatible shapes [{}]", shapes_of(self, inputs)));
        match prim {
            Primitive::MatMul | Primitive::MatVec => {
                self.arity(prim, inputs, 2)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.cols() != b.rows() || (prim == Primitive::MatVec && b.cols() != 1) {
                    return Err(mismatch());
                }
                Ok(a.matmul(b))
            }
            Primitive::Add | Primitive::Mul => {
                self.arity(prim, inputs, 2)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.shape() != b.shape() {
                    return Err(mismatch());
                }
                Ok(if prim == Primitive::Add {
                    a.zip_map(b, |x, y| x + y)
                } else {
                    a.zip_map(b, |x, y| x * y)
                })
            }
            Primitive::Concat => {
                let first = inputs.first().ok_or_else(mismatch)?;
                let rows = self.value(*first).rows();
                if inputs.iter().any(|v| self.value(*v).rows() != rows) {
                    return Err(mismatch());
                }
                let cols: usize = inputs.iter().map(|v| self.value(*v).cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for v in inputs {
                        data.extend_from_slice(self.value(*v).row_slice(r));
                    }
                }
                Matrix::from_vec(rows, cols, data)
            }
            Primitive::ConcatRows => {
                let first = inputs.first().ok_or_else(mismatch)?;
                let cols = self.value(*first).cols();
                if inputs.iter().any(|v| self.value(*v).cols() != cols) {
                    return Err(mismatch());
                }
                let mut data = Vec::new();
                for v in inputs {
                    data.extend_from_slice(self.value(*v).data());
                }
                Matrix::from_vec(data.len() / cols.max(1), cols, data)
            }
            Primitive::Mean | Primitive::Sum => {
                let first = inputs.first().ok_or_else(mismatch)?;
                let shape = self.value(*first).shape();
                if inputs.iter().any(|v| self.value(*v).shape() != shape) {
                    return Err(mismatch());
                }
                let mut acc = self.value(*first).clone();
                for v in &inputs[1..] {
                    acc.add_assign(self.value(*v));
                }
                if prim == Primitive::Mean {
                    let n = inputs.len() as f64;
                    acc = acc.map(|x| x / n);
                }
                Ok(acc)
            }
            _ => {
                self.arity(prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                Ok(match prim {
                    Primitive::Scale(s) => a.map(|x| s * x),
                    Primitive::Transpose => a.transpose(),
                    Primitive::Sigmoid => a.map(sigmoid),
                    Primitive::Tanh => a.map(f64::tanh),
                    Primitive::LeakyRelu(slope) => a.map(|x| if x > 0.0 { x } else { slope * x }),
                    Primitive::Relu => a.map(|x| x.max(0.0)),
                    Primitive::Log => a.map(|x| x.max(LOG_CLAMP).ln()),
                    Primitive::Softmax => {
                        if !a.is_vector() || a.is_empty() {
                            return Err(mismatch());
                        }
                        Matrix::from_vec(a.rows(), a.cols(), stable_softmax(a.data())?)?
                    }
                    _ => unreachable!("multi-input primitives handled above"),
                })
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        self.apply(Primitive::MatVec, &[a, x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Primitive::Scale(s), &[a])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::Concat, parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::ConcatRows, parts)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.apply(Primitive::LeakyRelu(slope), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::Mean, parts)
    }

    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::Sum, parts)
    }

    /// Reverse sweep from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("output must be 1x1, got {}x{}", out_shape.0, out_shape.1),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            let Some(prim) = node.prim else { continue };
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(prim, node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, prim: Primitive, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut accumulate = |v: Var, contribution: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contribution),
                slot => *slot = Some(contribution),
            }
        };
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let y = &node.value;
        match prim {
            Primitive::MatMul | Primitive::MatVec => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if needs(a) {
                    accumulate(a, g.matmul_nt(self.value(b)));
                }
                if needs(b) {
                    accumulate(b, self.value(a).matmul_tn(g));
                }
            }
            Primitive::Add => {
                accumulate(node.inputs[0], g.clone());
                accumulate(node.inputs[1], g.clone());
            }
            Primitive::Mul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if needs(a) {
                    accumulate(a, g.zip_map(self.value(b), |gi, bi| gi * bi));
                }
                if needs(b) {
                    accumulate(b, g.zip_map(self.value(a), |gi, ai| gi * ai));
                }
            }
            Primitive::Scale(s) => accumulate(node.inputs[0], g.map(|gi| s * gi)),
            Primitive::Concat => {
                let mut offset = 0;
                for &v in &node.inputs {
                    let (rows, cols) = self.value(v).shape();
                    if needs(v) {
                        let mut part = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                part.set(r, c, g.get(r, offset + c));
                            }
                        }
                        accumulate(v, part);
                    }
                    offset += cols;
                }
            }
            Primitive::ConcatRows => {
                let mut offset = 0;
                for &v in &node.inputs {
                    let (rows, cols) = self.value(v).shape();
                    if needs(v) {
                        let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(v, Matrix::from_vec(rows, cols, data).expect("slice shape"));
                    }
                    offset += rows;
                }
            }
            Primitive::Transpose => accumulate(node.inputs[0], g.transpose()),
            Primitive::Sigmoid => accumulate(node.inputs[0], g.zip_map(y, |gi, yi| gi * yi * (1.0 - yi))),
            Primitive::Tanh => accumulate(node.inputs[0], g.zip_map(y, |gi, yi| gi * (1.0 - yi * yi))),
            Primitive::LeakyRelu(slope) => {
                let x = self.value(node.inputs[0]);
                accumulate(node.inputs[0], g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else { slope * gi }));
            }
            Primitive::Relu => {
                let x = self.value(node.inputs[0]);
                accumulate(node.inputs[0], g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
            }
            Primitive::Softmax => {
                let dot: f64 = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
                accumulate(node.inputs[0], g.zip_map(y, |gi, yi| yi * (gi - dot)));
            }
            Primitive::Log => {
                let x = self.value(node.inputs[0]);
                accumulate(node.inputs[0], g.zip_map(x, |gi, xi| if xi > LOG_CLAMP { gi / xi } else { 0.0 }));
            }
            Primitive::Mean => {
                let n = node.inputs.len() as f64;
                for &v in &node.inputs {
                    accumulate(v, g.map(|gi| gi / n));
                }
            }
            Primitive::Sum => {
                for &v in &node.inputs {
                    accumulate(v, g.clone());
                }
            }
        }
    }
}
