use std::collections::BTreeMap;

use super::tensor::gemm;
use super::{DiffError, GradMap, ParamTree, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleBy(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// vector is already topologically sorted; a fresh graph is built per step.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, op: Op, x: Var, value: Tensor) -> Var {
        let rg = self.requires_grad(x);
        self.push(op, value, rg)
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, value: Tensor) -> Var {
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(op, value, rg)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf that receives a gradient but is not a named parameter.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Trainable leaf bound to `path`; repeated calls return the same node.
    pub fn param(&mut self, tree: &ParamTree, path: &str) -> Result<Var, DiffError> {
        if let Some(&v) = self.params.get(path) {
            return Ok(v);
        }
        let value = tree
            .get(path)
            .ok_or_else(|| DiffError::MissingParam(path.to_string()))?
            .clone();
        let v = self.push(Op::Leaf, value, true);
        self.params.insert(path.to_string(), v);
        Ok(v)
    }

    /// Parameter value copied in as a constant: the graph records the forward
    /// pass but no gradient reaches the parameter.
    pub fn frozen_param(&mut self, tree: &ParamTree, path: &str) -> Result<Var, DiffError> {
        let value = tree
            .get(path)
            .ok_or_else(|| DiffError::MissingParam(path.to_string()))?
            .clone();
        Ok(self.constant(value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).dims();
        let (k2, n) = self.value(b).dims();
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut out,
        );
        let value = Tensor::matrix(m, n, out).expect("matmul shape");
        self.binary(Op::MatMul(a, b), a, b, value)
    }

    /// Adds a length-`cols` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (rows, cols) = self.value(x).dims();
        assert_eq!(self.value(bias).len(), cols, "bias width");
        let mut out = self.value(x).data().to_vec();
        let b = self.value(bias).data();
        for r in 0..rows {
            for (o, bv) in out[r * cols..(r + 1) * cols].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), out).expect("same shape");
        self.binary(Op::AddBias(x, bias), x, bias, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.binary(Op::Add(a, b), a, b, value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.binary(Op::Sub(a, b), a, b, value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.binary(Op::Mul(a, b), a, b, value)
    }

    /// Elementwise minimum; on ties the gradient goes to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), f64::min);
        self.binary(Op::Minimum(a, b), a, b, value)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.unary(Op::Scale(x, c), x, value)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.unary(Op::AddScalar(x), x, value)
    }

    /// Multiplies every element of `x` by the one-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Var {
        let c = self.value(s).item();
        let value = self.value(x).map(|v| v * c);
        self.binary(Op::ScaleBy(x, s), x, s, value)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.unary(Op::Relu(x), x, value)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.unary(Op::Tanh(x), x, value)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        self.unary(Op::Exp(x), x, value)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        self.unary(Op::Log(x), x, value)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        self.unary(Op::Square(x), x, value)
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        self.unary(Op::Clamp(x, lo, hi), x, value)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = self.value(a).dims();
        let (rb, cb) = self.value(b).dims();
        assert_eq!(ra, rb, "concat row counts");
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            out.extend_from_slice(self.value(a).row(r));
            out.extend_from_slice(self.value(b).row(r));
        }
        let value = Tensor::matrix(ra, ca + cb, out).expect("concat shape");
        self.binary(Op::ConcatCols(a, b), a, b, value)
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (rows, cols) = self.value(x).dims();
        assert!(start < end && end <= cols, "slice {start}..{end} of {cols} columns");
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&self.value(x).row(r)[start..end]);
        }
        let value = Tensor::matrix(rows, end - start, out).expect("slice shape");
        self.unary(Op::SliceCols(x, start, end), x, value)
    }

    /// Row sums as a `[rows, 1]` column.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let (rows, _) = self.value(x).dims();
        let out = (0..rows).map(|r| self.value(x).row(r).iter().sum()).collect();
        let value = Tensor::matrix(rows, 1, out).expect("column shape");
        self.unary(Op::SumCols(x), x, value)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.unary(Op::Sum(x), x, value)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.unary(Op::Mean(x), x, value)
    }

    /// Which side of every non-smooth point the forward pass landed on: relu
    /// sign, clamp interior, and the branch taken by each minimum. Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) => out.extend(self.value(x).data().iter().map(|&v| v > 0.0)),
                Op::Clamp(x, lo, hi) => out.extend(self.value(x).data().iter().map(|&v| v > lo && v < hi)),
                Op::Minimum(a, b) => out.extend(self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x <= y)),
                _ => {}
            }
        }
        out
    }

    pub(crate) fn param_vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.params.iter()
    }
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: GradMap,
}

impl Gradients {
    /// Gradient with respect to a recorded node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, path: &str) -> Option<&Tensor> {
        self.params.get(path)
    }

    pub fn params(&self) -> &GradMap {
        &self.params
    }

    pub fn into_params(self) -> GradMap {
        self.params
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn grad_slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

/// Back-propagates from the scalar `loss` node. Every parameter bound with
/// [`Graph::param`] gets an entry; parameters the loss does not depend on get
/// zeros.
pub fn backward(graph: &Graph, loss: Var) -> Result<Gradients, DiffError> {
    let loss_value = graph.value(loss);
    if loss_value.len() != 1 {
        return Err(DiffError::Contract(format!(
            "loss must be scalar, got shape {:?}",
            loss_value.shape()
        )));
    }
    let mut grads: Vec<Option<Tensor>> = vec![None; graph.nodes.len()];
    grads[loss.0] = Some(Tensor::new(loss_value.shape().to_vec(), vec![1.0]).expect("scalar"));

    for i in (0..=loss.0).rev() {
        let node = &graph.nodes[i];
        if !node.requires_grad || matches!(node.op, Op::Leaf) {
            continue;
        }
        let Some(upstream) = grads[i].take() else {
            continue;
        };
        let needs = |v: Var| graph.nodes[v.0].requires_grad;
        match node.op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                let (m, k) = graph.value(a).dims();
                let n = graph.value(b).cols();
                if needs(a) {
                    let slot = grad_slot(&mut grads, a, graph.value(a).shape());
                    gemm(m, n, k, upstream.data(), false, graph.value(b).data(), true, 1.0, slot.data_mut());
                }
                if needs(b) {
                    let slot = grad_slot(&mut grads, b, graph.value(b).shape());
                    gemm(k, m, n, graph.value(a).data(), true, upstream.data(), false, 1.0, slot.data_mut());
                }
            }
            Op::AddBias(x, bias) => {
                if needs(bias) {
                    let cols = graph.value(bias).len();
                    let mut gb = vec![0.0; cols];
                    for row in upstream.data().chunks(cols) {
                        for (g, u) in gb.iter_mut().zip(row) {
                            *g += u;
                        }
                    }
                    let gb = Tensor::new(graph.value(bias).shape().to_vec(), gb).expect("bias shape");
                    accumulate(&mut grads, bias, gb);
                }
                if needs(x) {
                    accumulate(&mut grads, x, upstream.clone());
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    accumulate(&mut grads, a, upstream.clone());
                }
                if needs(b) {
                    accumulate(&mut grads, b, upstream.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    accumulate(&mut grads, a, upstream.clone());
                }
                if needs(b) {
                    accumulate(&mut grads, b, upstream.map(|u| -u));
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    accumulate(&mut grads, a, upstream.zip_map(graph.value(b), |u, y| u * y));
                }
                if needs(b) {
                    accumulate(&mut grads, b, upstream.zip_map(graph.value(a), |u, x| u * x));
                }
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (graph.value(a).data(), graph.value(b).data());
                let pick_a: Vec<bool> = va.iter().zip(vb).map(|(x, y)| x <= y).collect();
                if needs(a) {
                    let mut g = upstream.clone();
                    for (gi, &p) in g.data_mut().iter_mut().zip(&pick_a) {
                        if !p {
                            *gi = 0.0;
                        }
                    }
                    accumulate(&mut grads, a, g);
                }
                if needs(b) {
                    let mut g = upstream.clone();
                    for (gi, &p) in g.data_mut().iter_mut().zip(&pick_a) {
                        if p {
                            *gi = 0.0;
                        }
                    }
                    accumulate(&mut grads, b, g);
                }
            }
            Op::Scale(x, c) => accumulate(&mut grads, x, upstream.map(|u| u * c)),
            Op::AddScalar(x) => accumulate(&mut grads, x, upstream.clone()),
            Op::ScaleBy(x, s) => {
                let c = graph.value(s).item();
                if needs(s) {
                    let ds: f64 = upstream
                        .data()
                        .iter()
                        .zip(graph.value(x).data())
                        .map(|(u, v)| u * v)
                        .sum();
                    let gs = Tensor::new(graph.value(s).shape().to_vec(), vec![ds]).expect("scalar");
                    accumulate(&mut grads, s, gs);
                }
                if needs(x) {
                    accumulate(&mut grads, x, upstream.map(|u| u * c));
                }
            }
            Op::Relu(x) => {
                let g = upstream.zip_map(graph.value(x), |u, v| if v > 0.0 { u } else { 0.0 });
                accumulate(&mut grads, x, g);
            }
            Op::Tanh(x) => {
                let g = upstream.zip_map(&node.value, |u, y| u * (1.0 - y * y));
                accumulate(&mut grads, x, g);
            }
            Op::Exp(x) => {
                let g = upstream.zip_map(&node.value, |u, y| u * y);
                accumulate(&mut grads, x, g);
            }
            Op::Log(x) => {
                let g = upstream.zip_map(graph.value(x), |u, v| u / v);
                accumulate(&mut grads, x, g);
            }
            Op::Square(x) => {
                let g = upstream.zip_map(graph.value(x), |u, v| 2.0 * u * v);
                accumulate(&mut grads, x, g);
            }
            Op::Clamp(x, lo, hi) => {
                let g = upstream.zip_map(graph.value(x), |u, v| if v > lo && v < hi { u } else { 0.0 });
                accumulate(&mut grads, x, g);
            }
            Op::ConcatCols(a, b) => {
                let (rows, ca) = graph.value(a).dims();
                let cb = graph.value(b).cols();
                let width = ca + cb;
                let up = upstream.data();
                if needs(a) {
                    let mut g = Vec::with_capacity(rows * ca);
                    for r in 0..rows {
                        g.extend_from_slice(&up[r * width..r * width + ca]);
                    }
                    let g = Tensor::new(graph.value(a).shape().to_vec(), g).expect("concat grad");
                    accumulate(&mut grads, a, g);
                }
                if needs(b) {
                    let mut g = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        g.extend_from_slice(&up[r * width + ca..(r + 1) * width]);
                    }
                    let g = Tensor::new(graph.value(b).shape().to_vec(), g).expect("concat grad");
                    accumulate(&mut grads, b, g);
                }
            }
            Op::SliceCols(x, start, end) => {
                let (rows, cols) = graph.value(x).dims();
                let width = end - start;
                let slot = grad_slot(&mut grads, x, graph.value(x).shape());
                let dst = slot.data_mut();
                for r in 0..rows {
                    for j in 0..width {
                        dst[r * cols + start + j] += upstream.data()[r * width + j];
                    }
                }
            }
            Op::SumCols(x) => {
                let (rows, cols) = graph.value(x).dims();
                let mut g = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    g.extend(std::iter::repeat_n(upstream.data()[r], cols));
                }
                let g = Tensor::new(graph.value(x).shape().to_vec(), g).expect("sum grad");
                accumulate(&mut grads, x, g);
            }
            Op::Sum(x) => {
                let u = upstream.item();
                accumulate(&mut grads, x, Tensor::full(graph.value(x).shape(), u));
            }
            Op::Mean(x) => {
                let u = upstream.item() / graph.value(x).len() as f64;
                accumulate(&mut grads, x, Tensor::full(graph.value(x).shape(), u));
            }
        }
        grads[i] = Some(upstream);
    }

    let params = graph
        .param_vars()
        .map(|(path, &v)| {
            let g = grads[v.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()));
            (path.clone(), g)
        })
        .collect();
    Ok(Gradients {
        nodes: grads,
        params,
    })
}
