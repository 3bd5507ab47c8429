//! Define-by-run reverse-mode tape.
//!
//! Every primitive evaluates eagerly and appends one node. Nodes only refer
//! to earlier nodes, so the node vector is already a topological order and
//! `backward` is a single reverse sweep.

use std::collections::HashMap;

use super::tensor::check_shape;
use super::{AutodiffError, ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    ScalarMul(Var, f64),
    AddScalar(Var),
    Hadamard(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    Negate(Var),
    Ln(Var),
    Reciprocal(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    Embedding { table: Var, index: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Sum { x: Var, axis: usize },
    Mean { x: Var, axis: usize },
    SumAll(Var),
    SpatialConv { input: Var, kernel: Var },
    Reshape(Var),
    Select { x: Var, index: usize },
    StopGradient,
}

#[derive(Clone, Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf or parameter node.
    /// `None` when no gradient reached it.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, var) in &self.params {
            if let Some(g) = self.grads[var.0].as_deref() {
                store.get_mut(id).accumulate_grad(g);
            }
        }
    }
}

/// Recording of primitive applications for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    consumed: bool,
}

/// (outer, n, inner) strides for reducing along `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(acc: &mut Option<Vec<f64>>, g: &[f64]) {
    match acc {
        Some(a) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
        None => *acc = Some(g.to_vec()),
    }
}

fn acc_buf(acc: &mut Option<Vec<f64>>, n: usize) -> &mut Vec<f64> {
    acc.get_or_insert_with(|| vec![0.0; n])
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

    /// Drops every node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        debug_assert_eq!(n.value.len(), 1);
        n.value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::from_vec(&n.shape, n.value.clone()).expect("node shapes are valid")
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf. With `requires_grad` its gradient is reported by `backward`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a constant leaf from raw values.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var, AutodiffError> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "constant",
                detail: format!("shape {shape:?} holds {n} values, got {}", data.len()),
            });
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    pub fn constant_vec(&mut self, data: &[f64]) -> Var {
        assert!(!data.is_empty());
        self.push(vec![data.len()], data.to_vec(), Op::Leaf, false)
    }

    /// Brings a stored parameter onto the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.get(id);
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param, t.requires_grad());
        self.params.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch { op, detail: format!("{sa:?} vs {sb:?}") });
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let n = &self.nodes[x.0];
        let value = n.value.iter().map(|&v| f(v)).collect();
        let shape = n.shape.clone();
        let ng = n.needs_grad;
        self.push(shape, value, op, ng)
    }

    /// `[m,k]·[k,n]`, `[m,k]·[k]` or `[k]·[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        let mismatch = || AutodiffError::ShapeMismatch { op: "matmul", detail: format!("{sa:?} x {sb:?}") };
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (shape, value) = match (sa.len(), sb.len()) {
            (2, 2) => {
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if sb[0] != k {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let row = &av[i * k..(i + 1) * k];
                    let o = &mut out[i * n..(i + 1) * n];
                    for (p, &x) in row.iter().enumerate() {
                        let brow = &bv[p * n..(p + 1) * n];
                        o.iter_mut().zip(brow).for_each(|(y, &w)| *y += x * w);
                    }
                }
                (vec![m, n], out)
            }
            (2, 1) => {
                let (m, k) = (sa[0], sa[1]);
                if sb[0] != k {
                    return Err(mismatch());
                }
                let out = (0..m)
                    .map(|i| av[i * k..(i + 1) * k].iter().zip(bv.iter()).map(|(x, y)| x * y).sum())
                    .collect();
                (vec![m], out)
            }
            (1, 2) => {
                let (k, n) = (sb[0], sb[1]);
                if sa[0] != k {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; n];
                for (p, &x) in av.iter().enumerate() {
                    out.iter_mut().zip(&bv[p * n..(p + 1) * n]).for_each(|(y, &w)| *y += x * w);
                }
                (vec![n], out)
            }
            _ => return Err(mismatch()),
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(shape, value, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let value = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| x + y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), value, Op::Add(a, b), ng))
    }

    /// `a - b`, recorded as `add(a, negate(b))`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let nb = self.negate(b);
        self.add(a, nb)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("hadamard", a, b)?;
        let value = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| x * y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), value, Op::Hadamard(a, b), ng))
    }

    pub fn scalar_mul(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::ScalarMul(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn negate(&mut self, x: Var) -> Var {
        self.unary(x, Op::Negate(x), |v| -v)
    }

    /// Natural log; every entry must be positive.
    pub fn ln(&mut self, x: Var) -> Result<Var, AutodiffError> {
        if let Some(bad) = self.nodes[x.0].value.iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(AutodiffError::Domain { op: "ln", detail: format!("non-positive input {bad}") });
        }
        Ok(self.unary(x, Op::Ln(x), f64::ln))
    }

    /// Elementwise `1/x`; every entry must be nonzero.
    pub fn reciprocal(&mut self, x: Var) -> Result<Var, AutodiffError> {
        if self.nodes[x.0].value.contains(&0.0) {
            return Err(AutodiffError::Domain { op: "reciprocal", detail: "zero input".into() });
        }
        Ok(self.unary(x, Op::Reciprocal(x), |v| 1.0 / v))
    }

    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let n = &self.nodes[x.0];
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::StopGradient, false)
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<(), AutodiffError> {
        let shape = &self.nodes[x.0].shape;
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(AutodiffError::InvalidAxis { op, axis, shape: shape.clone() });
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.check_axis("softmax", x, axis)?;
        let n = &self.nodes[x.0];
        let (outer, len, inner) = axis_split(&n.shape, axis);
        let mut out = n.value.clone();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        let (shape, ng) = (n.shape.clone(), n.needs_grad);
        Ok(self.push(shape, out, Op::Softmax { x, axis }, ng))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.check_axis("log-softmax", x, axis)?;
        let n = &self.nodes[x.0];
        let (outer, len, inner) = axis_split(&n.shape, axis);
        let mut out = n.value.clone();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..len).map(|j| (out[idx(j)] - max).exp()).sum::<f64>().ln();
                for j in 0..len {
                    out[idx(j)] -= lse;
                }
            }
        }
        let (shape, ng) = (n.shape.clone(), n.needs_grad);
        Ok(self.push(shape, out, Op::LogSoftmax { x, axis }, ng))
    }

    /// Row `index` of a `[rows, width]` table.
    pub fn embedding(&mut self, table: Var, index: usize) -> Result<Var, AutodiffError> {
        let n = &self.nodes[table.0];
        if n.shape.len() != 2 || index >= n.shape[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "embedding",
                detail: format!("index {index} into table {:?}", n.shape),
            });
        }
        let w = n.shape[1];
        let value = n.value[index * w..(index + 1) * w].to_vec();
        let ng = n.needs_grad;
        Ok(self.push(vec![w], value, Op::Embedding { table, index }, ng))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = inputs.first().ok_or(AutodiffError::ShapeMismatch { op: "concat", detail: "no inputs".into() })?;
        let base = self.nodes[first.0].shape.clone();
        if axis >= base.len() {
            return Err(AutodiffError::InvalidAxis { op: "concat", axis, shape: base });
        }
        let mut total = 0;
        for v in inputs {
            let s = &self.nodes[v.0].shape;
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch { op: "concat", detail: format!("{base:?} vs {s:?} on axis {axis}") });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let n = &self.nodes[v.0];
                let chunk = n.shape[axis] * inner;
                value.extend_from_slice(&n.value[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(shape, value, Op::Concat { inputs: inputs.to_vec(), axis }, ng))
    }

    fn reduce(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var, AutodiffError> {
        self.check_axis(if mean { "mean" } else { "sum" }, x, axis)?;
        let n = &self.nodes[x.0];
        let (outer, len, inner) = axis_split(&n.shape, axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &n.value[(o * len + j) * inner..(o * len + j + 1) * inner];
                out[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v /= len as f64);
        }
        let shape = reduced_shape(&n.shape, axis);
        let ng = n.needs_grad;
        let op = if mean { Op::Mean { x, axis } } else { Op::Sum { x, axis } };
        Ok(self.push(shape, out, op, ng))
    }

    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.reduce(x, axis, false)
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.reduce(x, axis, true)
    }

    /// Sum of every entry, as a one-element node.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let n = &self.nodes[x.0];
        let s = n.value.iter().sum();
        let ng = n.needs_grad;
        self.push(vec![1], vec![s], Op::SumAll(x), ng)
    }

    /// Same-padded 2-D convolution: input `[c_in, h, w]`, kernel
    /// `[c_out, c_in, kh, kw]` with odd `kh`, `kw`; output `[c_out, h, w]`.
    pub fn spatial_conv(&mut self, input: Var, kernel: Var) -> Result<Var, AutodiffError> {
        let si = self.nodes[input.0].shape.clone();
        let sk = self.nodes[kernel.0].shape.clone();
        if si.len() != 3 || sk.len() != 4 || sk[1] != si[0] || sk[2].is_multiple_of(2) || sk[3].is_multiple_of(2) {
            return Err(AutodiffError::ShapeMismatch { op: "spatial-conv", detail: format!("input {si:?}, kernel {sk:?}") });
        }
        let (ci, h, w) = (si[0], si[1], si[2]);
        let (co, kh, kw) = (sk[0], sk[2], sk[3]);
        let (ph, pw) = (kh / 2, kw / 2);
        let (x, k) = (&self.nodes[input.0].value, &self.nodes[kernel.0].value);
        let mut out = vec![0.0; co * h * w];
        for o in 0..co {
            for c in 0..ci {
                for dy in 0..kh {
                    for dx in 0..kw {
                        let kv = k[((o * ci + c) * kh + dy) * kw + dx];
                        if kv == 0.0 {
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + dy as isize - ph as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for xx in 0..w {
                                let sx = xx as isize + dx as isize - pw as isize;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                out[(o * h + y) * w + xx] += kv * x[(c * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                }
            }
        }
        let ng = self.ng(input) || self.ng(kernel);
        Ok(self.push(vec![co, h, w], out, Op::SpatialConv { input, kernel }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let n = check_shape(shape)?;
        let node = &self.nodes[x.0];
        if n != node.value.len() {
            return Err(AutodiffError::ShapeMismatch { op: "reshape", detail: format!("{:?} -> {shape:?}", node.shape) });
        }
        let (value, ng) = (node.value.clone(), node.needs_grad);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x), ng))
    }

    /// Flat element `index` as a one-element node.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var, AutodiffError> {
        let n = &self.nodes[x.0];
        if index >= n.value.len() {
            return Err(AutodiffError::ShapeMismatch { op: "select", detail: format!("index {index} into {:?}", n.shape) });
        }
        let (v, ng) = (n.value[index], n.needs_grad);
        Ok(self.push(vec![1], vec![v], Op::Select { x, index }, ng))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape: a second call
    /// without [`Tape::reset`] fails with a stale-tape error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::StaleTape);
        }
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        let shape = &self.nodes[loss.0].shape;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(shape.clone()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        let params = self.params.iter().map(|(&id, &v)| (id, v)).filter(|&(_, v)| v.0 <= loss.0).collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                let (av, bv) = (val(*a), val(*b));
                match (sa.len(), sb.len()) {
                    (2, 2) => {
                        let (m, k, n) = (sa[0], sa[1], sb[1]);
                        if self.ng(*a) {
                            let ga = acc_buf(&mut grads[a.0], m * k);
                            for r in 0..m {
                                let grow = &g[r * n..(r + 1) * n];
                                for p in 0..k {
                                    let brow = &bv[p * n..(p + 1) * n];
                                    ga[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                                }
                            }
                        }
                        if self.ng(*b) {
                            let gb = acc_buf(&mut grads[b.0], k * n);
                            for r in 0..m {
                                let grow = &g[r * n..(r + 1) * n];
                                for p in 0..k {
                                    let x = av[r * k + p];
                                    gb[p * n..(p + 1) * n].iter_mut().zip(grow).for_each(|(o, &gg)| *o += x * gg);
                                }
                            }
                        }
                    }
                    (2, 1) => {
                        let (m, k) = (sa[0], sa[1]);
                        if self.ng(*a) {
                            let ga = acc_buf(&mut grads[a.0], m * k);
                            for r in 0..m {
                                let gr = g[r];
                                if gr != 0.0 {
                                    ga[r * k..(r + 1) * k].iter_mut().zip(bv.iter()).for_each(|(o, &x)| *o += gr * x);
                                }
                            }
                        }
                        if self.ng(*b) {
                            let gb = acc_buf(&mut grads[b.0], k);
                            for r in 0..m {
                                let gr = g[r];
                                if gr != 0.0 {
                                    gb.iter_mut().zip(&av[r * k..(r + 1) * k]).for_each(|(o, &w)| *o += gr * w);
                                }
                            }
                        }
                    }
                    (1, 2) => {
                        let (k, n) = (sb[0], sb[1]);
                        if self.ng(*a) {
                            let ga = acc_buf(&mut grads[a.0], k);
                            for p in 0..k {
                                ga[p] += bv[p * n..(p + 1) * n].iter().zip(g).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                        if self.ng(*b) {
                            let gb = acc_buf(&mut grads[b.0], k * n);
                            for p in 0..k {
                                let x = av[p];
                                gb[p * n..(p + 1) * n].iter_mut().zip(g).for_each(|(o, &gg)| *o += x * gg);
                            }
                        }
                    }
                    _ => unreachable!("matmul shapes validated in forward"),
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.ng(*b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::ScalarMul(x, c) => {
                let buf = acc_buf(&mut grads[x.0], g.len());
                buf.iter_mut().zip(g).for_each(|(o, gg)| *o += c * gg);
            }
            Op::AddScalar(x) => add_into(&mut grads[x.0], g),
            Op::Hadamard(a, b) => {
                if self.ng(*a) {
                    let bv = val(*b);
                    let buf = acc_buf(&mut grads[a.0], g.len());
                    for j in 0..g.len() {
                        buf[j] += g[j] * bv[j];
                    }
                }
                if self.ng(*b) {
                    let av = val(*a);
                    let buf = acc_buf(&mut grads[b.0], g.len());
                    for j in 0..g.len() {
                        buf[j] += g[j] * av[j];
                    }
                }
            }
            Op::Relu(x) => {
                let xv = val(*x);
                let buf = acc_buf(&mut grads[x.0], g.len());
                for j in 0..g.len() {
                    if xv[j] > 0.0 {
                        buf[j] += g[j];
                    }
                }
            }
            Op::Tanh(x) => {
                let buf = acc_buf(&mut grads[x.0], g.len());
                for j in 0..g.len() {
                    buf[j] += g[j] * (1.0 - y[j] * y[j]);
                }
            }
            Op::Sigmoid(x) => {
                let buf = acc_buf(&mut grads[x.0], g.len());
                for j in 0..g.len() {
                    buf[j] += g[j] * y[j] * (1.0 - y[j]);
                }
            }
            Op::Square(x) => {
                let xv = val(*x);
                let buf = acc_buf(&mut grads[x.0], g.len());
                for j in 0..g.len() {
                    buf[j] += 2.0 * xv[j] * g[j];
                }
            }
            Op::Negate(x) => {
                let buf = acc_buf(&mut grads[x.0], g.len());
                buf.iter_mut().zip(g).for_each(|(o, gg)| *o -= gg);
            }
            Op::Ln(x) => {
                let xv = val(*x);
                let buf = acc_buf(&mut grads[x.0], g.len());
                for j in 0..g.len() {
                    buf[j] += g[j] / xv[j];
                }
            }
            Op::Reciprocal(x) => {
                let buf = acc_buf(&mut grads[x.0], g.len());
                for j in 0..g.len() {
                    buf[j] -= g[j] * y[j] * y[j];
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(&node.shape, *axis);
                let buf = acc_buf(&mut grads[x.0], g.len());
                for o in 0..outer {
                    for ii in 0..inner {
                        let idx = |j: usize| o * len * inner + j * inner + ii;
                        let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            buf[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax { x, axis } => {
                let (outer, len, inner) = axis_split(&node.shape, *axis);
                let buf = acc_buf(&mut grads[x.0], g.len());
                for o in 0..outer {
                    for ii in 0..inner {
                        let idx = |j: usize| o * len * inner + j * inner + ii;
                        let total: f64 = (0..len).map(|j| g[idx(j)]).sum();
                        for j in 0..len {
                            buf[idx(j)] += g[idx(j)] - y[idx(j)].exp() * total;
                        }
                    }
                }
            }
            Op::Embedding { table, index } => {
                let ts = &self.nodes[table.0].shape;
                let w = ts[1];
                let buf = acc_buf(&mut grads[table.0], ts[0] * w);
                buf[index * w..(index + 1) * w].iter_mut().zip(g).for_each(|(o, gg)| *o += gg);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(&node.shape, *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.nodes[v.0].shape[*axis];
                    if self.ng(*v) {
                        let chunk = len * inner;
                        let buf = acc_buf(&mut grads[v.0], outer * chunk);
                        for o in 0..outer {
                            let src = &g[o * total * inner + offset * inner..][..chunk];
                            buf[o * chunk..(o + 1) * chunk].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += len;
                }
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let xs = &self.nodes[x.0].shape;
                let (outer, len, inner) = axis_split(xs, *axis);
                let scale = if matches!(node.op, Op::Mean { .. }) { 1.0 / len as f64 } else { 1.0 };
                let buf = acc_buf(&mut grads[x.0], outer * len * inner);
                for o in 0..outer {
                    for j in 0..len {
                        let dst = &mut buf[(o * len + j) * inner..(o * len + j + 1) * inner];
                        dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]).for_each(|(a, b)| *a += scale * b);
                    }
                }
            }
            Op::SumAll(x) => {
                let n = self.nodes[x.0].value.len();
                let buf = acc_buf(&mut grads[x.0], n);
                buf.iter_mut().for_each(|o| *o += g[0]);
            }
            Op::SpatialConv { input, kernel } => {
                let si = &self.nodes[input.0].shape;
                let sk = &self.nodes[kernel.0].shape;
                let (ci, h, w) = (si[0], si[1], si[2]);
                let (co, kh, kw) = (sk[0], sk[2], sk[3]);
                let (ph, pw) = (kh / 2, kw / 2);
                let (xv, kv) = (val(*input), val(*kernel));
                let want_x = self.ng(*input);
                let want_k = self.ng(*kernel);
                let mut gx = if want_x { Some(vec![0.0; xv.len()]) } else { None };
                let mut gk = if want_k { Some(vec![0.0; kv.len()]) } else { None };
                for o in 0..co {
                    for c in 0..ci {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let ki = ((o * ci + c) * kh + dy) * kw + dx;
                                for yy in 0..h {
                                    let sy = yy as isize + dy as isize - ph as isize;
                                    if sy < 0 || sy >= h as isize {
                                        continue;
                                    }
                                    for xx in 0..w {
                                        let sx = xx as isize + dx as isize - pw as isize;
                                        if sx < 0 || sx >= w as isize {
                                            continue;
                                        }
                                        let go = g[(o * h + yy) * w + xx];
                                        let xi = (c * h + sy as usize) * w + sx as usize;
                                        if let Some(gx) = gx.as_mut() {
                                            gx[xi] += kv[ki] * go;
                                        }
                                        if let Some(gk) = gk.as_mut() {
                                            gk[ki] += xv[xi] * go;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(gx) = gx {
                    add_into(&mut grads[input.0], &gx);
                }
                if let Some(gk) = gk {
                    add_into(&mut grads[kernel.0], &gk);
                }
            }
            Op::Reshape(x) => add_into(&mut grads[x.0], g),
            Op::Select { x, index } => {
                let n = self.nodes[x.0].value.len();
                acc_buf(&mut grads[x.0], n)[*index] += g[0];
            }
        }
    }
}
