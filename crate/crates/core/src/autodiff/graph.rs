use std::collections::BTreeMap;

use super::tensor::{matmul_a_bt, matmul_at_b, matmul_raw};
use super::{AutodiffError, Tensor};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Relu(Var),
    LeakyRelu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Softplus(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MaxConst(Var, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Concat(Vec<Var>, Axis),
    SliceRows(Var, usize),
    Softmax(Var),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Relu(_) => "relu",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Square(_) => "square",
            Op::Softplus(_) => "softplus",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MaxConst(..) => "max_const",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumRows(_) => "sum_rows",
            Op::Concat(..) => "concat",
            Op::SliceRows(..) => "slice",
            Op::Softmax(_) => "softmax",
            Op::Reshape(_) => "reshape",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    name: Option<String>,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node list
/// is always a valid topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that requires them.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    names: Vec<(String, Var)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradients of named parameters, zero-filled where the root did not
    /// depend on the parameter.
    pub fn by_name(&self) -> BTreeMap<String, Tensor> {
        self.names
            .iter()
            .map(|(name, var)| {
                let shape = &self.shapes[var.0];
                let t = match &self.grads[var.0] {
                    Some(g) => Tensor::new(shape.clone(), g.clone()).expect("grad shape"),
                    None => Tensor::zeros(shape),
                };
                (name.clone(), t)
            })
            .collect()
    }
}

/// Broadcast compatibility for binary elementwise ops: identical shapes, or a
/// bias row `[m]` / `[1, m]` against `[n, m]`.
fn broadcast_rows(op: &'static str, a: &Tensor, b: &Tensor) -> Result<bool, AutodiffError> {
    if a.shape() == b.shape() {
        return Ok(false);
    }
    let (_, cols) = a.matrix_dims();
    let b_is_row = matches!(b.shape(), [m] if *m == cols) || matches!(b.shape(), [1, m] if *m == cols);
    if a.shape().len() == 2 && b_is_row {
        Ok(true)
    } else {
        Err(AutodiffError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, broadcast: bool, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = if broadcast {
        let cols = b.len();
        a.data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % cols]))
            .collect()
    } else {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    };
    Tensor::new(a.shape().to_vec(), data).expect("same shape as lhs")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// A leaf that gradients are not propagated to.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(Op::Leaf, value, false, None)
    }

    /// A named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.push_node(Op::Leaf, value, true, Some(name.into()))
    }

    fn push_node(&mut self, op: Op, value: Tensor, requires_grad: bool, name: Option<String>) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            name,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(op, value, requires_grad, None))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, AutodiffError> {
        let value = self.value(x).map(f);
        self.push(op, value, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let bc = broadcast_rows("add", self.value(a), self.value(b))?;
        let value = zip_broadcast(self.value(a), self.value(b), bc, |x, y| x + y);
        self.push(Op::Add(a, b), value, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let bc = broadcast_rows("sub", self.value(a), self.value(b))?;
        let value = zip_broadcast(self.value(a), self.value(b), bc, |x, y| x - y);
        self.push(Op::Sub(a, b), value, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let bc = broadcast_rows("mul", self.value(a), self.value(b))?;
        let value = zip_broadcast(self.value(a), self.value(b), bc, |x, y| x * y);
        self.push(Op::Mul(a, b), value, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        match (av.shape(), bv.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => {
                let data = matmul_raw(av.data(), bv.data(), m, k, n);
                let value = Tensor::new(vec![m, n], data)?;
                self.push(Op::MatMul(a, b), value, &[a, b])
            }
            (l, r) => Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: l.to_vec(),
                right: r.to_vec(),
            }),
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn leaky_relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::LeakyRelu(x), |v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Sqrt(x), f64::sqrt)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Softplus(x), softplus)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Result<Var, AutodiffError> {
        self.unary(x, Op::AddScalar(x), |v| v + offset)
    }

    /// Elementwise `max(x, c)`; the subgradient at `x == c` is 0.
    pub fn max_const(&mut self, x: Var, c: f64) -> Result<Var, AutodiffError> {
        self.unary(x, Op::MaxConst(x, c), |v| v.max(c))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(Op::Sum(x), value, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.value(x);
        let value = Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64);
        self.push(Op::Mean(x), value, &[x])
    }

    /// Sum over the last axis: `[n, m] -> [n, 1]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.value(x);
        let (rows, _) = v.matrix_dims();
        let data: Vec<f64> = v.rows().map(|r| r.iter().sum()).collect();
        let value = Tensor::new(vec![rows, 1], data)?;
        self.push(Op::SumRows(x), value, &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let first_shape = self.value(*first).shape().to_vec();
        if first_shape.len() != 2 {
            return Err(AutodiffError::RankMismatch { op: "concat", expected: 2, shape: first_shape });
        }
        for p in &parts[1..] {
            let s = self.value(*p).shape();
            let ok = s.len() == 2
                && match axis {
                    Axis::Rows => s[1] == first_shape[1],
                    Axis::Cols => s[0] == first_shape[0],
                };
            if !ok {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    left: first_shape,
                    right: s.to_vec(),
                });
            }
        }
        let value = match axis {
            Axis::Rows => {
                let rows: usize = parts.iter().map(|p| self.value(*p).shape()[0]).sum();
                let data: Vec<f64> = parts.iter().flat_map(|p| self.value(*p).data().iter().copied()).collect();
                Tensor::new(vec![rows, first_shape[1]], data)?
            }
            Axis::Cols => {
                let cols: usize = parts.iter().map(|p| self.value(*p).shape()[1]).sum();
                let mut data = Vec::with_capacity(first_shape[0] * cols);
                for r in 0..first_shape[0] {
                    for p in parts {
                        data.extend_from_slice(self.value(*p).row(r));
                    }
                }
                Tensor::new(vec![first_shape[0], cols], data)?
            }
        };
        self.push(Op::Concat(parts.to_vec(), axis), value, parts)
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let v = self.value(x);
        let (rows, cols) = v.matrix_dims();
        if v.shape().len() != 2 || start >= end || end > rows {
            return Err(AutodiffError::BadSlice {
                shape: v.shape().to_vec(),
                start,
                end,
            });
        }
        let value = Tensor::new(vec![end - start, cols], v.data()[start * cols..end * cols].to_vec())?;
        self.push(Op::SliceRows(x, start), value, &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.value(x);
        let mut data = Vec::with_capacity(v.len());
        for row in v.rows() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&r| (r - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            data.extend(exps.into_iter().map(|e| e / z));
        }
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push(Op::Softmax(x), value, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let v = self.value(x);
        let value = Tensor::new(shape.to_vec(), v.data().to_vec()).map_err(|_| AutodiffError::ShapeMismatch {
            op: "reshape",
            left: v.shape().to_vec(),
            right: shape.to_vec(),
        })?;
        self.push(Op::Reshape(x), value, &[x])
    }

    /// Smallest distance of any hinge-type op input to its kink. Finite
    /// difference checks are only meaningful when this exceeds the step size.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            let (input, kink) = match node.op {
                Op::Relu(x) | Op::LeakyRelu(x) => (x, 0.0),
                Op::MaxConst(x, c) => (x, c),
                _ => continue,
            };
            for &v in self.value(input).data() {
                margin = margin.min((v - kink).abs());
            }
        }
        margin
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(AutodiffError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        grads.resize(self.nodes.len(), None);
        let names = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.name.as_ref().map(|name| (name.clone(), Var(i))))
            .collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, names, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: Var, contribution: Vec<f64>) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn accumulate_broadcast(&self, grads: &mut [Option<Vec<f64>>], target: Var, g: &[f64], sign: f64) {
        let cols = self.value(target).len();
        if cols == g.len() {
            self.accumulate(grads, target, g.iter().map(|v| sign * v).collect());
        } else {
            let mut col_sums = vec![0.0; cols];
            for (i, v) in g.iter().enumerate() {
                col_sums[i % cols] += sign * v;
            }
            self.accumulate(grads, target, col_sums);
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        let elementwise = |x: Var, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            self.value(x)
                .data()
                .iter()
                .zip(out)
                .zip(g)
                .map(|((&xi, &yi), &gi)| gi * f(xi, yi))
                .collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate_broadcast(grads, *b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate_broadcast(grads, *b, g, -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let bc = av.shape() != bv.shape();
                let cols = bv.len();
                let ga: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi * if bc { bv.data()[i % cols] } else { bv.data()[i] })
                    .collect();
                let gb: Vec<f64> = g.iter().zip(av.data()).map(|(gi, ai)| gi * ai).collect();
                self.accumulate(grads, *a, ga);
                self.accumulate_broadcast(grads, *b, &gb, 1.0);
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, matmul_a_bt(g, bv.data(), m, n, k));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, matmul_at_b(av.data(), g, m, k, n));
                }
            }
            Op::Relu(x) => {
                let d = elementwise(*x, &|xi, _| if xi > 0.0 { 1.0 } else { 0.0 });
                self.accumulate(grads, *x, d);
            }
            Op::LeakyRelu(x) => {
                let d = elementwise(*x, &|xi, _| if xi > 0.0 { 1.0 } else { LEAKY_SLOPE });
                self.accumulate(grads, *x, d);
            }
            Op::Tanh(x) => {
                let d = elementwise(*x, &|_, yi| 1.0 - yi * yi);
                self.accumulate(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = elementwise(*x, &|_, yi| yi);
                self.accumulate(grads, *x, d);
            }
            Op::Log(x) => {
                let d = elementwise(*x, &|xi, _| 1.0 / xi);
                self.accumulate(grads, *x, d);
            }
            Op::Sqrt(x) => {
                let d = elementwise(*x, &|_, yi| 0.5 / yi);
                self.accumulate(grads, *x, d);
            }
            Op::Square(x) => {
                let d = elementwise(*x, &|xi, _| 2.0 * xi);
                self.accumulate(grads, *x, d);
            }
            Op::Softplus(x) => {
                let d = elementwise(*x, &|xi, _| sigmoid(xi));
                self.accumulate(grads, *x, d);
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, *x, g.iter().map(|v| v * factor).collect());
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::MaxConst(x, c) => {
                let d = elementwise(*x, &|xi, _| if xi > *c { 1.0 } else { 0.0 });
                self.accumulate(grads, *x, d);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::SumRows(x) => {
                let (_, cols) = self.value(*x).matrix_dims();
                let d = g.iter().flat_map(|&gi| std::iter::repeat_n(gi, cols)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Concat(parts, axis) => match axis {
                Axis::Rows => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        self.accumulate(grads, *p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Axis::Cols => {
                    let (rows, total) = node.value.matrix_dims();
                    let mut col_offset = 0;
                    for p in parts {
                        let cols = self.value(*p).shape()[1];
                        let mut d = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            let start = r * total + col_offset;
                            d.extend_from_slice(&g[start..start + cols]);
                        }
                        self.accumulate(grads, *p, d);
                        col_offset += cols;
                    }
                }
            },
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let (_, cols) = xv.matrix_dims();
                let mut d = vec![0.0; xv.len()];
                d[start * cols..start * cols + g.len()].copy_from_slice(g);
                self.accumulate(grads, *x, d);
            }
            Op::Softmax(x) => {
                let (_, cols) = node.value.matrix_dims();
                let mut d = Vec::with_capacity(g.len());
                for (y_row, g_row) in out.chunks(cols).zip(g.chunks(cols)) {
                    let dot: f64 = y_row.iter().zip(g_row).map(|(y, gi)| y * gi).sum();
                    d.extend(y_row.iter().zip(g_row).map(|(y, gi)| y * (gi - dot)));
                }
                self.accumulate(grads, *x, d);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn square_forward_and_backward() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(3.0));
        let y = g.square(x).unwrap();
        assert_eq!(g.value(y).item(), 9.0);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[6.0]);
        assert_eq!(grads.wrt(y).unwrap(), &[1.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[[1.0], [1.0]]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 1]);
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(AutodiffError::NonScalarRoot { .. })));
    }

    #[test]
    fn log_softmax_pick_gradient_matches_identity() {
        let mut g = Graph::new();
        let logits = g.param("z", Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let p = g.softmax(logits).unwrap();
        let lp = g.log(p).unwrap();
        let pick = g.constant(Tensor::from_rows(&[[1.0, 0.0]]).unwrap());
        let picked = g.mul(lp, pick).unwrap();
        let loss = g.sum(picked).unwrap();
        let grads = g.backward(loss).unwrap();
        // Independently: p = softmax([1, 2]); d(-log p0)/dz = p - e0, so d(log p0)/dz = e0 - p.
        let e = [1.0f64.exp(), 2.0f64.exp()];
        let p0 = e[0] / (e[0] + e[1]);
        let p1 = e[1] / (e[0] + e[1]);
        let d = grads.wrt(logits).unwrap();
        // Gradient of the negative log-likelihood is [p0 - 1, p1].
        assert!(close(-d[0], p0 - 1.0, 1e-12));
        assert!(close(-d[1], p1, 1e-12));
    }

    #[test]
    fn bias_broadcast_accumulates_column_sums() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap());
        let b = g.param("b", Tensor::vector(vec![0.5, -0.5]));
        let y = g.add(x, b).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(b).unwrap(), &[3.0, 3.0]);
        let bad = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(g.add(x, bad).is_err());
    }

    #[test]
    fn max_const_kink_has_zero_subgradient() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::vector(vec![0.0, 1.0, -1.0]));
        let y = g.max_const(x, 0.0).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[0.0, 1.0, 0.0]);
        assert_eq!(g.kink_margin(), 0.0);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(-1.0));
        assert!(matches!(g.log(x), Err(AutodiffError::NonFinite { op: "log" })));
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!(close(softplus(0.0), 2f64.ln(), 1e-15));
    }

    #[test]
    fn concat_and_slice_route_gradients() {
        let mut g = Graph::new();
        let a = g.param("a", Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let b = g.param("b", Tensor::from_rows(&[[3.0], ]).unwrap());
        let c = g.concat(&[a, b], Axis::Cols).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0]);
        let r = g.concat(&[c, c], Axis::Rows).unwrap();
        let s = g.slice_rows(r, 1, 2).unwrap();
        let sq = g.square(s).unwrap();
        let total = g.sum(sq).unwrap();
        let grads = g.backward(total).unwrap();
        assert_eq!(grads.wrt(a).unwrap(), &[2.0, 4.0]);
        assert_eq!(grads.wrt(b).unwrap(), &[6.0]);
    }
}
