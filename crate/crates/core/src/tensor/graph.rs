use std::collections::HashMap;

use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Bcast {
    Same,
    LeftScalar,
    RightScalar,
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    AddScalar(Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Concat(Vec<Var>, usize),
    AddRow(Var, Var),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    Pick(Var, Vec<usize>),
    Sum(Var),
    MeanRows(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward is a single reverse sweep.
pub struct Graph<'p, T: Scalar> {
    params: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients of a scalar loss with respect to the trainable parameters of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMap<T> {
    grads: Vec<Option<Vec<T>>>,
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params: Some(params),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    /// A graph without parameters; only constants can enter it.
    pub fn detached() -> Self {
        Graph {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> Option<&'p ParamStore<T>> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self
                .params
                .expect("param node without store")
                .get(id)
                .data(),
            _ => &node.value,
        }
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor {
            shape: self.shape(v).to_vec(),
            data: self.value(v).to_vec(),
        }
    }

    /// The single value of a one-element node.
    pub fn scalar_value(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || shape.iter().product::<usize>() == value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        let Tensor { shape, data } = tensor;
        self.push(shape, data, Op::Constant, false)
    }

    pub fn scalar(&mut self, x: T) -> Var {
        self.constant(Tensor::scalar(x))
    }

    /// Loads a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("graph has no parameter store");
        let shape = store.get(id).shape().to_vec();
        let v = self.push(shape, Vec::new(), Op::Param(id), store.requires_grad(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(Error::shape("matmul", sa, sb)),
        };
        let mut out = vec![T::zero(); m * n];
        mm(self.value(a), self.value(b), m, k, n, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Bcast, Vec<usize>)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok((Bcast::Same, sa.to_vec()))
        } else if self.value_len(a) == 1 {
            Ok((Bcast::LeftScalar, sb.to_vec()))
        } else if self.value_len(b) == 1 {
            Ok((Bcast::RightScalar, sa.to_vec()))
        } else {
            Err(Error::shape(op, sa, sb))
        }
    }

    fn value_len(&self, v: Var) -> usize {
        self.shape(v).iter().product()
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Vec<usize>, Vec<T>, Bcast)> {
        let (bc, shape) = self.bcast(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = match bc {
            Bcast::Same => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::LeftScalar => vb.iter().map(|&y| f(va[0], y)).collect(),
            Bcast::RightScalar => va.iter().map(|&x| f(x, vb[0])).collect(),
        };
        Ok((shape, out, bc))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out, bc) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::Add(a, b, bc), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out, bc) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::Sub(a, b, bc), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out, bc) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::Mul(a, b, bc), rg))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).iter().map(|&x| x + c).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(&[a]));
        self.push(shape, out, Op::AddScalar(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(&[a]));
        self.push(shape, out, Op::Scale(a, c), rg)
    }

    /// `1 - a`, element-wise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -T::one());
        self.add_scalar(neg, T::one())
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(&[a]));
        self.push(shape, out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(&[a]));
        self.push(shape, out, Op::Sigmoid(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out: Vec<T> = self.value(a).iter().map(|x| x.exp()).collect();
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("exp"));
        }
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(&[a]));
        Ok(self.push(shape, out, Op::Exp(a), rg))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&x) = self
            .value(a)
            .iter()
            .find(|&&x| x.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater))
        {
            return Err(Error::NonPositiveLog(x.f64()));
        }
        let out = self.value(a).iter().map(|x| x.ln()).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(&[a]));
        Ok(self.push(shape, out, Op::Log(a), rg))
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(a).len() {
            return Err(Error::invalid_shape(
                op,
                self.shape(a),
                format!("axis {axis} out of range"),
            ));
        }
        Ok(())
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", a, axis)?;
        let shape = self.shape(a).to_vec();
        let out = softmax_along(self.value(a), &shape, axis, false);
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, Op::Softmax(a, axis), rg))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", a, axis)?;
        let shape = self.shape(a).to_vec();
        let out = softmax_along(self.value(a), &shape, axis, true);
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, Op::LogSoftmax(a, axis), rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let block = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p)[o * block..(o + 1) * block]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(shape, out, Op::Concat(parts.to_vec(), axis), rg))
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat"))?;
        let axis = self.shape(first).len() - 1;
        self.concat(parts, axis)
    }

    /// Adds a `[1, n]` row to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        let (m, n) = match (sa, sr) {
            ([m, n], [1, n2]) if n == n2 => (*m, *n),
            _ => return Err(Error::shape("add_row", sa, sr)),
        };
        let (va, vr) = (self.value(a), self.value(row));
        let mut out = va.to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = out[i * n + j] + vr[j];
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(vec![m, n], out, Op::AddRow(a, row), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = match self.shape(a) {
            [m, n] => (*m, *n),
            s => return Err(Error::invalid_shape("transpose", s, "expected rank 2")),
        };
        let va = self.value(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = va[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), rg))
    }

    /// Row lookup (embedding): `[V, d]` gathered by `ids` into `[ids.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = match self.shape(table) {
            [r, c] => (*r, *c),
            s => return Err(Error::invalid_shape("gather_rows", s, "expected rank 2")),
        };
        if ids.is_empty() {
            return Err(Error::EmptyInput("gather_rows"));
        }
        if let Some(&id) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::TokenOutOfRange { id, size: rows });
        }
        let vt = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&vt[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![ids.len(), cols],
            out,
            Op::GatherRows(table, ids.to_vec()),
            rg,
        ))
    }

    /// Rows `start..end` of a rank-2 tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = match self.shape(a) {
            [m, n] => (*m, *n),
            s => return Err(Error::invalid_shape("slice_rows", s, "expected rank 2")),
        };
        if start >= end || end > m {
            return Err(Error::invalid_shape(
                "slice_rows",
                &[m, n],
                format!("bad row range {start}..{end}"),
            ));
        }
        let out = self.value(a)[start * n..end * n].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![end - start, n], out, Op::SliceRows(a, start), rg))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        self.slice_rows(a, i, i + 1)
    }

    /// Picks `a[i, idx[i]]` for every row into an `[m, 1]` column.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = match self.shape(a) {
            [m, n] => (*m, *n),
            s => return Err(Error::invalid_shape("pick", s, "expected rank 2")),
        };
        if idx.len() != m {
            return Err(Error::shape("pick", &[m, n], &[idx.len()]));
        }
        if let Some(&id) = idx.iter().find(|&&j| j >= n) {
            return Err(Error::TokenOutOfRange { id, size: n });
        }
        let va = self.value(a);
        let out = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| va[i * n + j])
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![m, 1], out, Op::Pick(a, idx.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value_len(a);
        let s = self.sum(a);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Column means of an `[m, n]` matrix as a `[1, n]` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = match self.shape(a) {
            [m, n] => (*m, *n),
            s => return Err(Error::invalid_shape("mean_rows", s, "expected rank 2")),
        };
        let va = self.value(a);
        let inv = T::one() / T::of(m as f64);
        let out = (0..n)
            .map(|j| (0..m).map(|i| va[i * n + j]).sum::<T>() * inv)
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![1, n], out, Op::MeanRows(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value_len(a) || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(a), shape));
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(a), rg))
    }

    /// Reverse sweep from a one-element `loss`. Every trainable parameter of the
    /// store receives an entry; parameters off the path get zeros.
    pub fn backward(&self, loss: Var) -> Result<GradientMap<T>> {
        if self.value_len(loss) != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Vec<T>> = (0..=loss.0).map(|_| Vec::new()).collect();
        grads[loss.0] = vec![T::one()];
        for i in (0..=loss.0).rev() {
            if grads[i].is_empty() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            self.backprop_node(i, &g, &mut grads);
            if let Op::Param(_) = self.nodes[i].op {
                grads[i] = g;
            }
        }
        let mut map = GradientMap::zeros_for(self.params);
        for (&id, &v) in &self.param_vars {
            if let Some(slot) = map.grads[id.0].as_mut() {
                if !grads[v.0].is_empty() {
                    slot.copy_from_slice(&grads[v.0]);
                }
            }
        }
        Ok(map)
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Vec<T>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.requires_grad(*a) {
                    let ga = grad_buf(grads, *a, m * k);
                    mm_bt(g, self.value(*b), m, k, n, ga);
                }
                if self.requires_grad(*b) {
                    let va = self.value(*a);
                    let gb = grad_buf(grads, *b, k * n);
                    mm_at(va, g, m, k, n, gb);
                }
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                self.accum_bcast(*a, T::one(), g, matches!(bc, Bcast::LeftScalar), grads);
                self.accum_bcast(*b, sign, g, matches!(bc, Bcast::RightScalar), grads);
            }
            Op::Mul(a, b, bc) => {
                let (a, b) = (*a, *b);
                let (va, vb) = (self.value(a), self.value(b));
                // gradient for a is g * b (broadcast b when it is the scalar side)
                let gb_other: Vec<T> = match bc {
                    Bcast::Same => g.iter().zip(vb).map(|(&x, &y)| x * y).collect(),
                    Bcast::LeftScalar => g.iter().zip(vb).map(|(&x, &y)| x * y).collect(),
                    Bcast::RightScalar => g.iter().map(|&x| x * vb[0]).collect(),
                };
                let ga_other: Vec<T> = match bc {
                    Bcast::Same => g.iter().zip(va).map(|(&x, &y)| x * y).collect(),
                    Bcast::LeftScalar => g.iter().map(|&x| x * va[0]).collect(),
                    Bcast::RightScalar => g.iter().zip(va).map(|(&x, &y)| x * y).collect(),
                };
                self.accum_bcast(
                    a,
                    T::one(),
                    &gb_other,
                    matches!(bc, Bcast::LeftScalar),
                    grads,
                );
                self.accum_bcast(
                    b,
                    T::one(),
                    &ga_other,
                    matches!(bc, Bcast::RightScalar),
                    grads,
                );
            }
            Op::AddScalar(a) => self.accum(*a, g, |x, _| x, grads),
            Op::Scale(a, c) => {
                let c = *c;
                self.accum(*a, g, move |x, _| x * c, grads)
            }
            Op::Tanh(a) => self.accum(*a, g, |x, j| x * (T::one() - y[j] * y[j]), grads),
            Op::Sigmoid(a) => self.accum(*a, g, |x, j| x * y[j] * (T::one() - y[j]), grads),
            Op::Exp(a) => self.accum(*a, g, |x, j| x * y[j], grads),
            Op::Log(a) => {
                let va = self.value(*a);
                self.accum(*a, g, |x, j| x / va[j], grads)
            }
            Op::Softmax(a, axis) => {
                if !self.requires_grad(*a) {
                    return;
                }
                let (outer, len, inner) = split_axis(&node.shape, *axis);
                let ga = grad_buf(grads, *a, y.len());
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |t: usize| (o * len + t) * inner + j;
                        let dot: T = (0..len).map(|t| g[idx(t)] * y[idx(t)]).sum();
                        for t in 0..len {
                            ga[idx(t)] = ga[idx(t)] + y[idx(t)] * (g[idx(t)] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a, axis) => {
                if !self.requires_grad(*a) {
                    return;
                }
                let (outer, len, inner) = split_axis(&node.shape, *axis);
                let ga = grad_buf(grads, *a, y.len());
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |t: usize| (o * len + t) * inner + j;
                        let total: T = (0..len).map(|t| g[idx(t)]).sum();
                        for t in 0..len {
                            ga[idx(t)] = ga[idx(t)] + g[idx(t)] - y[idx(t)].exp() * total;
                        }
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let (outer, _, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                let row = node.shape[*axis] * inner;
                for &p in parts {
                    let block = self.shape(p)[*axis] * inner;
                    if self.requires_grad(p) {
                        let gp = grad_buf(grads, p, outer * block);
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + block];
                            for (d, &s) in gp[o * block..(o + 1) * block].iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                    }
                    offset += block;
                }
            }
            Op::AddRow(a, r) => {
                let (m, n) = (node.shape[0], node.shape[1]);
                self.accum(*a, g, |x, _| x, grads);
                if self.requires_grad(*r) {
                    let gr = grad_buf(grads, *r, n);
                    for i in 0..m {
                        for j in 0..n {
                            gr[j] = gr[j] + g[i * n + j];
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if !self.requires_grad(*a) {
                    return;
                }
                let (n, m) = (node.shape[0], node.shape[1]);
                let ga = grad_buf(grads, *a, m * n);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] = ga[i * n + j] + g[j * m + i];
                    }
                }
            }
            Op::GatherRows(t, ids) => {
                if !self.requires_grad(*t) {
                    return;
                }
                let cols = node.shape[1];
                let total = self.value_len(*t);
                let gt = grad_buf(grads, *t, total);
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..cols {
                        gt[id * cols + c] = gt[id * cols + c] + g[r * cols + c];
                    }
                }
            }
            Op::SliceRows(a, start) => {
                if !self.requires_grad(*a) {
                    return;
                }
                let n = node.shape[1];
                let total = self.value_len(*a);
                let ga = grad_buf(grads, *a, total);
                for (d, &s) in ga[start * n..start * n + g.len()].iter_mut().zip(g) {
                    *d = *d + s;
                }
            }
            Op::Pick(a, idx) => {
                if !self.requires_grad(*a) {
                    return;
                }
                let n = self.shape(*a)[1];
                let total = self.value_len(*a);
                let ga = grad_buf(grads, *a, total);
                for (i, &j) in idx.iter().enumerate() {
                    ga[i * n + j] = ga[i * n + j] + g[i];
                }
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.accum(*a, &[], |_, _| g0, grads)
            }
            Op::MeanRows(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let inv = T::one() / T::of(m as f64);
                self.accum(*a, &[], |_, j| g[j % n] * inv, grads)
            }
            Op::Reshape(a) => self.accum(*a, g, |x, _| x, grads),
        }
    }

    /// `grad[a][j] += f(g[j], j)` for every element of `a` (g may be empty when f ignores it).
    fn accum(&self, a: Var, g: &[T], f: impl Fn(T, usize) -> T, grads: &mut [Vec<T>]) {
        if !self.requires_grad(a) {
            return;
        }
        let n = self.value_len(a);
        let ga = grad_buf(grads, a, n);
        for (j, d) in ga.iter_mut().enumerate() {
            let x = if g.is_empty() { T::zero() } else { g[j] };
            *d = *d + f(x, j);
        }
    }

    fn accum_bcast(&self, a: Var, sign: T, g: &[T], reduce: bool, grads: &mut [Vec<T>]) {
        if !self.requires_grad(a) {
            return;
        }
        if reduce {
            let total: T = g.iter().copied().sum();
            let ga = grad_buf(grads, a, 1);
            ga[0] = ga[0] + sign * total;
        } else {
            self.accum(a, g, |x, _| sign * x, grads);
        }
    }
}

fn grad_buf<T: Scalar>(grads: &mut [Vec<T>], v: Var, n: usize) -> &mut Vec<T> {
    let slot = &mut grads[v.0];
    if slot.is_empty() {
        *slot = vec![T::zero(); n];
    }
    slot
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softmax_along<T: Scalar>(x: &[T], shape: &[usize], axis: usize, log: bool) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |t: usize| (o * len + t) * inner + j;
            let max = (0..len).map(|t| x[idx(t)]).fold(T::neg_infinity(), T::max);
            let total: T = (0..len).map(|t| (x[idx(t)] - max).exp()).sum();
            if log {
                let lse = total.ln();
                for t in 0..len {
                    out[idx(t)] = x[idx(t)] - max - lse;
                }
            } else {
                for t in 0..len {
                    out[idx(t)] = (x[idx(t)] - max).exp() / total;
                }
            }
        }
    }
    out
}

/// `out[m,n] += a[m,k] * b[k,n]`
fn mm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o = *o + x * y;
            }
        }
    }
}

/// `ga[m,k] += g[m,n] * b[k,n]^T`
fn mm_bt<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize, ga: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: T = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            ga[i * k + p] = ga[i * k + p] + dot;
        }
    }
}

/// `gb[k,n] += a[m,k]^T * g[m,n]`
fn mm_at<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize, gb: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == T::zero() {
                continue;
            }
            let dst = &mut gb[p * n..(p + 1) * n];
            for (d, &y) in dst.iter_mut().zip(grow) {
                *d = *d + x * y;
            }
        }
    }
}

impl<T: Scalar> GradientMap<T> {
    pub fn zeros_for(store: Option<&ParamStore<T>>) -> Self {
        let grads = match store {
            Some(s) => s
                .iter()
                .map(|(id, _, t)| s.requires_grad(id).then(|| vec![T::zero(); t.numel()]))
                .collect(),
            None => Vec::new(),
        };
        GradientMap { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut [T]> {
        self.grads.get_mut(id.0).and_then(|g| g.as_deref_mut())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> + '_ {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }

    /// `self += other`; both maps must come from the same store.
    pub fn add_assign(&mut self, other: &GradientMap<T>) {
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            if let (Some(d), Some(s)) = (dst.as_mut(), src.as_ref()) {
                for (x, &y) in d.iter_mut().zip(s) {
                    *x = *x + y;
                }
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in self.grads.iter_mut().flatten() {
            for x in g.iter_mut() {
                *x = *x * c;
            }
        }
    }

    pub fn global_norm(&self) -> T {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|&x| x * x)
            .sum::<T>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm > T::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }
}
