//! Define-by-run reverse-mode differentiation.
//!
//! Every primitive appends one node to the tape. Nodes are only ever
//! appended, so inputs always precede the nodes that consume them and a
//! single reverse sweep visits each node once.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    /// rhs is `1 x n` against an `m x n` lhs.
    Row,
    /// rhs is `m x 1` against an `m x n` lhs.
    Col,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum UnaryKind {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Recip,
    Scale(f64),
    ClampMin(f64),
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryKind, Var, Var, Bcast),
    Unary(UnaryKind, Var),
    Softmax(Var, usize),
    Concat(Vec<Var>, usize),
    Sum(Var),
    SumAxis(Var, usize),
    MaskFill(Var, Vec<bool>),
    Gather(Var, Vec<usize>),
    Row(Var, usize),
    Transpose(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: bool,
}

/// Ordered record of primitive operations.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, shapes: &[&[usize]]) -> Error {
    let shapes = shapes
        .iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(" vs ");
    Error::ShapeMismatch { op, shapes }
}

fn broadcast(a: &[usize], b: &[usize]) -> Option<Bcast> {
    if a == b {
        return Some(Bcast::Same);
    }
    if b.iter().product::<usize>() == 1 {
        return Some(Bcast::Scalar);
    }
    match (a, b) {
        ([_, n], [1, n2]) if n == n2 => Some(Bcast::Row),
        ([m, _], [m2, 1]) if m == m2 => Some(Bcast::Col),
        _ => None,
    }
}

#[inline]
fn rhs_index(bc: Bcast, idx: usize, cols: usize) -> usize {
    match bc {
        Bcast::Same => idx,
        Bcast::Scalar => 0,
        Bcast::Row => idx % cols,
        Bcast::Col => idx / cols,
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    let n = nodes[v.0].value.numel();
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| mismatch(op, &[t.shape()]))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient on [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].param = true;
        v
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Copies the current value of `v` into a fresh constant leaf, cutting
    /// the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = dims2("matmul", ta)?;
        let (k2, n) = dims2("matmul", tb)?;
        if k != k2 {
            return Err(mismatch("matmul", &[ta.shape(), tb.shape()]));
        }
        let (da, db) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = da[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &db[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn binary(&mut self, kind: BinaryKind, name: &'static str, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let bc = broadcast(ta.shape(), tb.shape())
            .ok_or_else(|| mismatch(name, &[ta.shape(), tb.shape()]))?;
        let cols = ta.shape().last().copied().unwrap_or(1);
        let (da, db) = (ta.data(), tb.data());
        let out: Vec<f64> = da
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = db[rhs_index(bc, i, cols)];
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                }
            })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Binary(kind, a, b, bc)))
    }

    /// `a + b`; `b` may be a scalar, a `1 x n` row or an `m x 1` column.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, "sub", a, b)
    }

    /// Elementwise product with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, "mul", a, b)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let f = |x: f64| match kind {
            UnaryKind::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Recip => 1.0 / x,
            UnaryKind::Scale(c) => c * x,
            UnaryKind::ClampMin(m) => x.max(m),
        };
        let out = ta.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), out).expect("same shape");
        self.push(value, Op::Unary(kind, a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Log, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sqrt, a)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Recip, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(UnaryKind::Scale(c), a)
    }

    /// `max(a, floor)` elementwise; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(UnaryKind::ClampMin(floor), a)
    }

    /// Softmax of a rank-2 tensor. `axis == 0` normalizes every column,
    /// `axis == 1` every row.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (m, n) = dims2("softmax", ta)?;
        if axis > 1 {
            return Err(mismatch("softmax", &[ta.shape(), &[axis]]));
        }
        let src = ta.data();
        let mut out = vec![0.0; m * n];
        let (outer, inner, stride_o, stride_i) = if axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
        for o in 0..outer {
            let base = o * stride_o;
            let max = (0..inner)
                .map(|i| src[base + i * stride_i])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..inner {
                let e = (src[base + i * stride_i] - max).exp();
                out[base + i * stride_i] = e;
                total += e;
            }
            for i in 0..inner {
                out[base + i * stride_i] /= total;
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::Softmax(a, axis)))
    }

    /// Concatenates rank-2 tensors along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(mismatch("concat", &[]));
        }
        let shapes: Vec<&[usize]> = parts.iter().map(|v| self.nodes[v.0].value.shape()).collect();
        let mut dims = Vec::with_capacity(parts.len());
        for p in parts {
            dims.push(dims2("concat", &self.nodes[p.0].value)?);
        }
        let (m0, n0) = dims[0];
        let value = if axis == 0 {
            if dims.iter().any(|&(_, n)| n != n0) {
                return Err(mismatch("concat", &shapes));
            }
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut out = Vec::with_capacity(rows * n0);
            for p in parts {
                out.extend_from_slice(self.nodes[p.0].value.data());
            }
            Tensor::new(vec![rows, n0], out)?
        } else {
            if dims.iter().any(|&(m, _)| m != m0) {
                return Err(mismatch("concat", &shapes));
            }
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut out = Vec::with_capacity(m0 * cols);
            for r in 0..m0 {
                for p in parts {
                    out.extend_from_slice(self.nodes[p.0].value.row_slice(r));
                }
            }
            Tensor::new(vec![m0, cols], out)?
        };
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis)))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Row-wise (`axis == 1`, giving `m x 1`) or column-wise (`axis == 0`,
    /// giving `1 x n`) sums of a rank-2 tensor.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (m, n) = dims2("sum_axis", ta)?;
        let value = match axis {
            0 => {
                let mut out = vec![0.0; n];
                for r in 0..m {
                    for (o, v) in out.iter_mut().zip(ta.row_slice(r)) {
                        *o += v;
                    }
                }
                Tensor::row(out)
            }
            1 => Tensor::column((0..m).map(|r| ta.row_slice(r).iter().sum()).collect()),
            _ => return Err(mismatch("sum_axis", &[ta.shape(), &[axis]])),
        };
        Ok(self.push(value, Op::SumAxis(a, axis)))
    }

    /// Replaces entries where `mask` is set with `fill`.
    pub fn mask_fill(&mut self, a: Var, mask: &[bool], fill: f64) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if mask.len() != ta.numel() {
            return Err(mismatch("mask_fill", &[ta.shape(), &[mask.len()]]));
        }
        let out = ta
            .data()
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { fill } else { x })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(value, Op::MaskFill(a, mask.to_vec())))
    }

    /// Picks entries by flat (row-major) index into a rank-1 tensor.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if let Some(&bad) = indices.iter().find(|&&i| i >= ta.numel()) {
            return Err(mismatch("gather", &[ta.shape(), &[bad]]));
        }
        let out = indices.iter().map(|&i| ta.data()[i]).collect();
        let value = Tensor::new(vec![indices.len()], out)?;
        Ok(self.push(value, Op::Gather(a, indices.to_vec())))
    }

    /// Row `r` of a rank-2 tensor as a `1 x n` matrix.
    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (m, _) = dims2("row", ta)?;
        if r >= m {
            return Err(mismatch("row", &[ta.shape(), &[r]]));
        }
        let value = Tensor::row(ta.row_slice(r).to_vec());
        Ok(self.push(value, Op::Row(a, r)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (m, n) = dims2("transpose", ta)?;
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                out[c * m + r] = ta.get2(r, c);
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(value, Op::Transpose(a)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = &self.nodes[loss.0].value;
        if !lt.is_scalar() {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                n.param.then(|| {
                    let data = grads
                        .get_mut(i)
                        .and_then(Option::take)
                        .unwrap_or_else(|| vec![0.0; n.value.numel()]);
                    Tensor::new(n.value.shape().to_vec(), data).expect("gradient shape")
                })
            })
            .collect();
        Ok(Gradients { params })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = ta.dims2().unwrap();
                let n = tb.dims2().unwrap().1;
                let (da, db) = (ta.data(), tb.data());
                {
                    let ga = slot(grads, &self.nodes, *a);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &db[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                let gb = slot(grads, &self.nodes, *b);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = da[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += av * gv;
                        }
                    }
                }
            }
            Op::Binary(kind, a, b, bc) => {
                let cols = val(*a).shape().last().copied().unwrap_or(1);
                let (da, db) = (val(*a).data(), val(*b).data());
                {
                    let ga = slot(grads, &self.nodes, *a);
                    for (i, gi) in g.iter().enumerate() {
                        ga[i] += match kind {
                            BinaryKind::Add | BinaryKind::Sub => *gi,
                            BinaryKind::Mul => gi * db[rhs_index(*bc, i, cols)],
                        };
                    }
                }
                let gb = slot(grads, &self.nodes, *b);
                for (i, gi) in g.iter().enumerate() {
                    gb[rhs_index(*bc, i, cols)] += match kind {
                        BinaryKind::Add => *gi,
                        BinaryKind::Sub => -gi,
                        BinaryKind::Mul => gi * da[i],
                    };
                }
            }
            Op::Unary(kind, a) => {
                let x = val(*a).data();
                let y = node.value.data();
                let ga = slot(grads, &self.nodes, *a);
                for i in 0..g.len() {
                    ga[i] += g[i]
                        * match kind {
                            UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                            UnaryKind::Tanh => 1.0 - y[i] * y[i],
                            UnaryKind::Exp => y[i],
                            UnaryKind::Log => 1.0 / x[i],
                            UnaryKind::Sqrt => 0.5 / y[i],
                            UnaryKind::Recip => -y[i] * y[i],
                            UnaryKind::Scale(c) => *c,
                            UnaryKind::ClampMin(m) => {
                                if x[i] > *m {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                }
            }
            Op::Softmax(a, axis) => {
                let (m, n) = node.value.dims2().unwrap();
                let y = node.value.data();
                let (outer, inner, so, si) = if *axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
                let ga = slot(grads, &self.nodes, *a);
                for o in 0..outer {
                    let base = o * so;
                    let dot: f64 = (0..inner).map(|i| g[base + i * si] * y[base + i * si]).sum();
                    for i in 0..inner {
                        let j = base + i * si;
                        ga[j] += y[j] * (g[j] - dot);
                    }
                }
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut offset = 0;
                    for p in parts {
                        let len = val(*p).numel();
                        for (o, gv) in slot(grads, &self.nodes, *p).iter_mut().zip(&g[offset..offset + len]) {
                            *o += gv;
                        }
                        offset += len;
                    }
                } else {
                    let (m, total) = node.value.dims2().unwrap();
                    let mut col = 0;
                    for p in parts {
                        let w = val(*p).dims2().unwrap().1;
                        let gp = slot(grads, &self.nodes, *p);
                        for r in 0..m {
                            for c in 0..w {
                                gp[r * w + c] += g[r * total + col + c];
                            }
                        }
                        col += w;
                    }
                }
            }
            Op::Sum(a) => {
                for o in slot(grads, &self.nodes, *a).iter_mut() {
                    *o += g[0];
                }
            }
            Op::SumAxis(a, axis) => {
                let (m, n) = val(*a).dims2().unwrap();
                let ga = slot(grads, &self.nodes, *a);
                for r in 0..m {
                    for c in 0..n {
                        ga[r * n + c] += if *axis == 0 { g[c] } else { g[r] };
                    }
                }
            }
            Op::MaskFill(a, mask) => {
                let ga = slot(grads, &self.nodes, *a);
                for (i, &masked) in mask.iter().enumerate() {
                    if !masked {
                        ga[i] += g[i];
                    }
                }
            }
            Op::Gather(a, indices) => {
                let ga = slot(grads, &self.nodes, *a);
                for (k, &i) in indices.iter().enumerate() {
                    ga[i] += g[k];
                }
            }
            Op::Row(a, r) => {
                let n = g.len();
                let ga = slot(grads, &self.nodes, *a);
                for (o, gv) in ga[r * n..(r + 1) * n].iter_mut().zip(g) {
                    *o += gv;
                }
            }
            Op::Transpose(a) => {
                let (m, n) = val(*a).dims2().unwrap();
                let ga = slot(grads, &self.nodes, *a);
                for r in 0..m {
                    for c in 0..n {
                        ga[r * n + c] += g[c * m + r];
                    }
                }
            }
        }
    }
}

/// Gradients of a scalar with respect to every parameter leaf of a tape.
#[derive(Clone, Debug)]
pub struct Gradients {
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a parameter leaf; `None` for any other node.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.params.get(v.0).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![0.0]));
        let y = t.sigmoid(x);
        assert_eq!(t.value(y).data(), &[0.5]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![0.0, 0.0]));
        let y = t.softmax(x, 1).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn log_inverts_exp() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![1.7]));
        let e = t.exp(x);
        let l = t.log(e);
        assert!((t.value(l).data()[0] - 1.7).abs() < 1e-15);
    }

    #[test]
    fn square_sum_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row(vec![3.0]));
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq);
        let g = t.backward(loss).unwrap();
        // central difference of x^2 at 3 with eps 1e-5
        let eps = 1e-5;
        let fd = ((3.0f64 + eps).powi(2) - (3.0f64 - eps).powi(2)) / (2.0 * eps);
        assert!((g.wrt(x).unwrap().data()[0] - 6.0).abs() < 1e-12);
        assert!((fd - 6.0).abs() < 1e-8);
    }

    #[test]
    fn linear_sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap());
        let loss = t.sum(x);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0; 6]);
        assert_eq!(g.wrt(x).unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row(vec![1.0, 2.0]));
        let c = t.constant(Tensor::row(vec![4.0, 5.0]));
        let loss = t.sum(c);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 0.0]);
        assert!(g.wrt(c).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn matmul_shape_mismatch_names_op() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn masked_softmax_zeroes_entry() {
        let mut t = Tape::new();
        let x = t.param(Tensor::column(vec![0.3, -0.2, 1.1]));
        let m = t.mask_fill(x, &[false, true, false], -1e9).unwrap();
        let a = t.softmax(m, 0).unwrap();
        let v = t.value(a).data();
        assert_eq!(v[1], 0.0);
        assert!((v[0] + v[2] - 1.0).abs() < 1e-12);
        let picked = t.gather(a, &[0]).unwrap();
        let lp = t.log(picked);
        let loss = t.sum(lp);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data()[1], 0.0);
        assert!(g.wrt(x).unwrap().all_finite());
    }
}
