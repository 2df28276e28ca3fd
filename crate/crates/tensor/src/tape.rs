//! Wengert-list autodiff.
//!
//! Nodes are appended in construction order, so inputs always precede the
//! node that consumes them and a single reverse sweep is a valid
//! topological order for backpropagation.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

const GELU_COEFF: f64 = 0.044_715;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddRow { x: usize, bias: usize },
    Mul(usize, usize),
    Scale(usize, T),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceCols { x: usize, start: usize },
    SliceRows { x: usize, start: usize },
    SoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(usize),
    MeanRows(usize),
    Sum(usize),
    Mse { pred: usize, target: Vec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::AddRow { .. } => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(_) => "gelu",
            Op::MeanRows(_) => "mean_rows",
            Op::Sum(_) => "sum",
            Op::Mse { .. } => "mse",
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::SoftmaxRows(x)
            | Op::Gelu(x)
            | Op::MeanRows(x)
            | Op::Sum(x)
            | Op::SliceCols { x, .. }
            | Op::SliceRows { x, .. }
            | Op::Mse { pred: x, .. } => vec![*x],
            Op::AddRow { x, bias } => vec![*x, *bias],
            Op::ConcatRows(xs) | Op::ConcatCols(xs) => xs.clone(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// A tape without per-op non-finite detection.
    pub fn new() -> Self {
        Self::with_finite_check(false)
    }

    pub fn with_finite_check(check_finite: bool) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            check_finite,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Operation names and input indices in construction order.
    pub fn trace(&self) -> Vec<(&'static str, Vec<usize>)> {
        self.nodes
            .iter()
            .map(|n| (n.op.name(), n.op.inputs()))
            .collect()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Value of `v`.
    ///
    /// Panics when `v` was recorded on another tape.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.try_value(v).expect("variable from a different tape")
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor<T>> {
        self.check(v)?;
        Ok(&self.nodes[v.index].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        v.tape == self.id && self.nodes[v.index].requires_grad
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(TensorError::Lineage {
                var_tape: v.tape,
                tape: self.id,
            });
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index,
        })
    }

    fn any_grad(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn dims2(&self, i: usize) -> Result<(usize, usize)> {
        self.nodes[i].value.dims2()
    }

    fn dim_err(&self, op: &'static str, a: usize, b: usize) -> TensorError {
        TensorError::Dimension {
            op,
            lhs: self.nodes[a].value.shape().to_vec(),
            rhs: self.nodes[b].value.shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.dims2(ia)?;
        let (k2, n) = self.dims2(ib)?;
        if k != k2 {
            return Err(self.dim_err("matmul", ia, ib));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.nodes[ia].value.data(),
            (k as isize, 1),
            self.nodes[ib].value.data(),
            (n as isize, 1),
            T::zero(),
            &mut out,
        );
        let rg = self.any_grad(&[ia, ib]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(ia, ib), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.nodes[ix].value.transpose()?;
        let rg = self.any_grad(&[ix]);
        self.push(t, Op::Transpose(ix), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        if self.nodes[ia].value.shape() != self.nodes[ib].value.shape() {
            return Err(self.dim_err("add", ia, ib));
        }
        let va = &self.nodes[ia].value;
        let vb = &self.nodes[ib].value;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[ia, ib]);
        self.push(out, Op::Add(ia, ib), rg)
    }

    /// Adds a `[n]` (or `[1, n]`) vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let n = self.nodes[ix].value.last_dim();
        if self.nodes[ib].value.numel() != n {
            return Err(self.dim_err("add_row", ix, ib));
        }
        let vb = self.nodes[ib].value.data();
        let vx = &self.nodes[ix].value;
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + vb[i % n])
            .collect();
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.any_grad(&[ix, ib]);
        self.push(out, Op::AddRow { x: ix, bias: ib }, rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        if self.nodes[ia].value.shape() != self.nodes[ib].value.shape() {
            return Err(self.dim_err("mul", ia, ib));
        }
        let va = &self.nodes[ia].value;
        let vb = &self.nodes[ib].value;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[ia, ib]);
        self.push(out, Op::Mul(ia, ib), rg)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.nodes[ix].value.map(|v| v * factor);
        let rg = self.any_grad(&[ix]);
        self.push(out, Op::Scale(ix, factor), rg)
    }

    /// Stacks 2-D tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts
            .iter()
            .map(|&p| self.check(p))
            .collect::<Result<Vec<_>>>()?;
        let first = *ids
            .first()
            .ok_or_else(|| TensorError::Contract("concat_rows of nothing".into()))?;
        let (_, cols) = self.dims2(first)?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &i in &ids {
            let (r, c) = self.dims2(i)?;
            if c != cols {
                return Err(self.dim_err("concat_rows", first, i));
            }
            rows += r;
            data.extend_from_slice(self.nodes[i].value.data());
        }
        let rg = self.any_grad(&ids);
        self.push(Tensor::new(vec![rows, cols], data)?, Op::ConcatRows(ids), rg)
    }

    /// Joins 2-D tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts
            .iter()
            .map(|&p| self.check(p))
            .collect::<Result<Vec<_>>>()?;
        let first = *ids
            .first()
            .ok_or_else(|| TensorError::Contract("concat_cols of nothing".into()))?;
        let (rows, _) = self.dims2(first)?;
        let mut widths = Vec::with_capacity(ids.len());
        for &i in &ids {
            let (r, c) = self.dims2(i)?;
            if r != rows {
                return Err(self.dim_err("concat_cols", first, i));
            }
            widths.push(c);
        }
        let cols: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (&i, &w) in ids.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[i].value.data()[r * w..(r + 1) * w]);
            }
        }
        let rg = self.any_grad(&ids);
        self.push(Tensor::new(vec![rows, cols], data)?, Op::ConcatCols(ids), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let (rows, cols) = self.dims2(ix)?;
        if start + len > cols {
            return Err(TensorError::Contract(format!(
                "column slice {start}..{} out of {cols}",
                start + len
            )));
        }
        let src = self.nodes[ix].value.data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let rg = self.any_grad(&[ix]);
        self.push(
            Tensor::new(vec![rows, len], data)?,
            Op::SliceCols { x: ix, start },
            rg,
        )
    }

    /// Rows `start..start + len` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let (rows, cols) = self.dims2(ix)?;
        if start + len > rows {
            return Err(TensorError::Contract(format!(
                "row slice {start}..{} out of {rows}",
                start + len
            )));
        }
        let data = self.nodes[ix].value.data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.any_grad(&[ix]);
        self.push(
            Tensor::new(vec![len, cols], data)?,
            Op::SliceRows { x: ix, start },
            rg,
        )
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let v = &self.nodes[ix].value;
        let c = v.last_dim();
        if c == 0 {
            return Err(TensorError::Contract("softmax over zero columns".into()));
        }
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                total = total + *e;
            }
            for e in row.iter_mut() {
                *e = *e / total;
            }
        }
        let out = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.any_grad(&[ix]);
        self.push(out, Op::SoftmaxRows(ix), rg)
    }

    /// Normalizes each vector along the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let d = self.nodes[ix].value.last_dim();
        if d == 0 || self.nodes[ix].value.ndim() == 0 {
            return Err(TensorError::Dimension {
                op: "layer_norm",
                lhs: self.nodes[ix].value.shape().to_vec(),
                rhs: vec![0],
            });
        }
        if self.nodes[ig].value.numel() != d {
            return Err(self.dim_err("layer_norm", ix, ig));
        }
        if self.nodes[ib].value.numel() != d {
            return Err(self.dim_err("layer_norm", ix, ib));
        }
        let eps = T::from_f64_lossy(eps);
        let dn = T::from_usize(d).unwrap();
        let xv = &self.nodes[ix].value;
        let g = self.nodes[ig].value.data();
        let b = self.nodes[ib].value.data();
        let rows = xv.numel() / d;
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.any_grad(&[ix, ig, ib]);
        self.push(
            out,
            Op::LayerNorm {
                x: ix,
                gamma: ig,
                beta: ib,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.nodes[ix].value.map(gelu_scalar);
        let rg = self.any_grad(&[ix]);
        self.push(out, Op::Gelu(ix), rg)
    }

    /// Column means of an `r x c` tensor as a `1 x c` tensor.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let (r, c) = self.dims2(ix)?;
        if r == 0 {
            return Err(TensorError::Contract("mean over zero rows".into()));
        }
        let rn = T::from_usize(r).unwrap();
        let v = self.nodes[ix].value.data();
        let mut acc = vec![T::zero(); c];
        for row in v.chunks(c) {
            for (a, &e) in acc.iter_mut().zip(row) {
                *a = *a + e;
            }
        }
        for a in acc.iter_mut() {
            *a = *a / rn;
        }
        let rg = self.any_grad(&[ix]);
        self.push(Tensor::new(vec![1, c], acc)?, Op::MeanRows(ix), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let s = self.nodes[ix].value.sum();
        let rg = self.any_grad(&[ix]);
        self.push(Tensor::scalar(s), Op::Sum(ix), rg)
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let ip = self.check(pred)?;
        let pv = &self.nodes[ip].value;
        if pv.shape() != target.shape() {
            return Err(TensorError::Dimension {
                op: "mse",
                lhs: pv.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        if pv.numel() == 0 {
            return Err(TensorError::Contract("mse of empty tensors".into()));
        }
        let n = T::from_usize(pv.numel()).unwrap();
        let loss = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<T>()
            / n;
        let rg = self.any_grad(&[ip]);
        self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred: ip,
                target: target.data().to_vec(),
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let il = self.check(loss)?;
        if self.nodes[il].value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[il].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[il].requires_grad {
            grads[il] = Some(vec![T::one()]);
        }
        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::new(n.value.shape().to_vec(), g).unwrap()))
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[j].requires_grad {
                return;
            }
            let buf = grads[j].get_or_insert_with(|| vec![T::zero(); self.nodes[j].value.numel()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a].value.dims2().unwrap();
                let n = self.nodes[b].value.last_dim();
                let av = self.nodes[a].value.data();
                let bv = self.nodes[b].value.data();
                // dA = dC * B^T
                acc(a, &mut |da| {
                    T::gemm(m, n, k, T::one(), g, (n as isize, 1), bv, (1, n as isize), T::one(), da)
                });
                // dB = A^T * dC
                acc(b, &mut |db| {
                    T::gemm(k, m, n, T::one(), av, (1, k as isize), g, (n as isize, 1), T::one(), db)
                });
            }
            &Op::Transpose(x) => {
                let (r, c) = self.nodes[x].value.dims2().unwrap();
                acc(x, &mut |dx| {
                    for p in 0..r {
                        for q in 0..c {
                            dx[p * c + q] = dx[p * c + q] + g[q * r + p];
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                acc(a, &mut |da| add_into(da, g));
                acc(b, &mut |db| add_into(db, g));
            }
            &Op::AddRow { x, bias } => {
                acc(x, &mut |dx| add_into(dx, g));
                let n = self.nodes[bias].value.numel();
                acc(bias, &mut |db| {
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                });
            }
            &Op::Mul(a, b) => {
                let av = self.nodes[a].value.data();
                let bv = self.nodes[b].value.data();
                acc(a, &mut |da| {
                    for ((d, &gi), &bi) in da.iter_mut().zip(g).zip(bv) {
                        *d = *d + gi * bi;
                    }
                });
                acc(b, &mut |db| {
                    for ((d, &gi), &ai) in db.iter_mut().zip(g).zip(av) {
                        *d = *d + gi * ai;
                    }
                });
            }
            &Op::Scale(x, f) => acc(x, &mut |dx| {
                for (d, &gi) in dx.iter_mut().zip(g) {
                    *d = *d + gi * f;
                }
            }),
            Op::ConcatRows(ids) => {
                let mut offset = 0;
                for &j in ids {
                    let len = self.nodes[j].value.numel();
                    acc(j, &mut |dj| add_into(dj, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::ConcatCols(ids) => {
                let cols = node.value.last_dim();
                let mut start = 0;
                for &j in ids {
                    let (rows, w) = self.nodes[j].value.dims2().unwrap();
                    acc(j, &mut |dj| {
                        for r in 0..rows {
                            add_into(
                                &mut dj[r * w..(r + 1) * w],
                                &g[r * cols + start..r * cols + start + w],
                            );
                        }
                    });
                    start += w;
                }
            }
            &Op::SliceCols { x, start } => {
                let (rows, len) = node.value.dims2().unwrap();
                let cols = self.nodes[x].value.last_dim();
                acc(x, &mut |dx| {
                    for r in 0..rows {
                        add_into(
                            &mut dx[r * cols + start..r * cols + start + len],
                            &g[r * len..(r + 1) * len],
                        );
                    }
                });
            }
            &Op::SliceRows { x, start } => {
                let cols = node.value.last_dim();
                let n = node.value.numel();
                acc(x, &mut |dx| add_into(&mut dx[start * cols..start * cols + n], g));
            }
            &Op::SoftmaxRows(x) => {
                let c = node.value.last_dim();
                let y = node.value.data();
                acc(x, &mut |dx| {
                    for ((dxr, yr), gr) in dx.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((d, &yi), &gi) in dxr.iter_mut().zip(yr).zip(gr) {
                            *d = *d + yi * (gi - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let gv = self.nodes[*gamma].value.data();
                let dn = T::from_usize(d).unwrap();
                acc(*x, &mut |dx| {
                    for (r, ((dxr, hr), gr)) in dx
                        .chunks_mut(d)
                        .zip(xhat.chunks(d))
                        .zip(g.chunks(d))
                        .enumerate()
                    {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            s1 = s1 + dh;
                            s2 = s2 + dh * hr[j];
                        }
                        let scale = inv_std[r] / dn;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            dxr[j] = dxr[j] + scale * (dn * dh - s1 - hr[j] * s2);
                        }
                    }
                });
                acc(*gamma, &mut |dg| {
                    for (hr, gr) in xhat.chunks(d).zip(g.chunks(d)) {
                        for j in 0..d {
                            dg[j] = dg[j] + gr[j] * hr[j];
                        }
                    }
                });
                acc(*beta, &mut |db| {
                    for gr in g.chunks(d) {
                        add_into(db, gr);
                    }
                });
            }
            &Op::Gelu(x) => {
                let xv = self.nodes[x].value.data();
                acc(x, &mut |dx| {
                    for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                        *d = *d + gi * gelu_grad_scalar(xi);
                    }
                });
            }
            &Op::MeanRows(x) => {
                let (r, _) = self.nodes[x].value.dims2().unwrap();
                let inv = T::one() / T::from_usize(r).unwrap();
                acc(x, &mut |dx| {
                    for row in dx.chunks_mut(g.len()) {
                        for (d, &gi) in row.iter_mut().zip(g) {
                            *d = *d + gi * inv;
                        }
                    }
                });
            }
            &Op::Sum(x) => acc(x, &mut |dx| {
                for d in dx.iter_mut() {
                    *d = *d + g[0];
                }
            }),
            Op::Mse { pred, target } => {
                let pv = self.nodes[*pred].value.data();
                let two_over_n = T::from_f64_lossy(2.0) / T::from_usize(pv.len()).unwrap();
                acc(*pred, &mut |dp| {
                    for ((d, &p), &t) in dp.iter_mut().zip(pv).zip(target) {
                        *d = *d + g[0] * two_over_n * (p - t);
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// `tanh` through a single `exp`.
fn tanh<T: Scalar>(z: T) -> T {
    let limit = T::from_f64_lossy(20.0);
    if z.abs() > limit {
        return z.signum();
    }
    let e = (z + z).exp();
    (e - T::one()) / (e + T::one())
}

pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(GELU_COEFF);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + tanh(c * (x + k * x * x * x)))
}

pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(GELU_COEFF);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = tanh(c * (x + k * x * x * x));
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `v` is not reachable from the loss or does not require grad.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    pub fn try_get(&self, v: Var) -> Result<Option<&Tensor<T>>> {
        if v.tape != self.tape {
            return Err(TensorError::Lineage {
                var_tape: v.tape,
                tape: self.tape,
            });
        }
        Ok(self.get(v))
    }

    /// Gradient of `v`, or zeros of `shape` when `v` was unreachable.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t2(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let b = tape.constant(t2(&[&[3.0, 4.0], &[5.0, 6.0]])).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);

        let x = tape.constant(t2(&[&[2.0]])).unwrap();
        let y = tape.constant(t2(&[&[3.0]])).unwrap();
        let z = tape.matmul(x, y).unwrap();
        assert_eq!(tape.value(z).data(), &[6.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(vec![2, 3])).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, TensorError::Dimension { .. }));
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t2(&[&[0.0, 0.0]])).unwrap();
        let s = tape.softmax_rows(a).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
        let b = tape.constant(t2(&[&[1000.0, 1000.0, 1000.0]])).unwrap();
        let s = tape.softmax_rows(b).unwrap();
        for &v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::<f64>::new();
        let g = tape.constant(Tensor::ones(vec![3])).unwrap();
        let b = tape.constant(Tensor::zeros(vec![3])).unwrap();
        let x = tape.constant(t2(&[&[1.0, 1.0, 1.0]])).unwrap();
        let y = tape.layer_norm(x, g, b, 1e-6).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);

        // var = 1 so each entry is +-1/sqrt(1 + 1e-6)
        let g = tape.constant(Tensor::ones(vec![2])).unwrap();
        let b = tape.constant(Tensor::zeros(vec![2])).unwrap();
        let x = tape.constant(t2(&[&[-1.0, 1.0]])).unwrap();
        let y = tape.layer_norm(x, g, b, 1e-6).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-6).sqrt();
        assert!((tape.value(y).data()[0] + expect).abs() < 1e-15);
        assert!((tape.value(y).data()[1] - expect).abs() < 1e-15);
        assert!((expect - 1.0).abs() < 1e-6);

        let g0 = tape.constant(Tensor::zeros(vec![2])).unwrap();
        let beta = tape.constant(Tensor::from_rows(&[&[0.25, -3.0]]).unwrap().reshape(vec![2]).unwrap()).unwrap();
        let x = tape.constant(t2(&[&[5.0, -2.0], &[0.3, 0.1]])).unwrap();
        let y = tape.layer_norm(x, g0, beta, 1e-6).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25, -3.0, 0.25, -3.0]);
    }

    #[test]
    fn layer_norm_rejects_zero_width() {
        let mut tape = Tape::<f64>::new();
        let g = tape.constant(Tensor::zeros(vec![0])).unwrap();
        let b = tape.constant(Tensor::zeros(vec![0])).unwrap();
        let x = tape.constant(Tensor::zeros(vec![2, 0])).unwrap();
        assert!(matches!(
            tape.layer_norm(x, g, b, 1e-6),
            Err(TensorError::Dimension { .. })
        ));
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        assert!((gelu_scalar(10.0f64) - 10.0).abs() < 1e-6);
        // 0.5 * (1 + tanh(sqrt(2/pi) * 1.044715))
        let u = (2.0 / std::f64::consts::PI).sqrt() * 1.044_715;
        let oracle = 0.5 * (1.0 + u.tanh());
        assert!((gelu_scalar(1.0f64) - oracle).abs() < 1e-15);
        assert!((gelu_scalar(1.0f64) - 0.8412).abs() < 1e-4);
    }

    #[test]
    fn backward_sum_and_square() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0)).unwrap();
        let a = tape.scale(x, 2.0).unwrap();
        let b = tape.add(a, x).unwrap();
        let c = tape.add(b, x).unwrap();
        let g = tape.backward(c).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn backward_requires_scalar_and_same_tape() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(vec![2])).unwrap();
        assert!(matches!(tape.backward(x), Err(TensorError::Contract(_))));

        let mut other = Tape::<f64>::new();
        let y = other.param(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(tape.backward(y), Err(TensorError::Lineage { .. })));
        assert!(matches!(tape.add(x, y), Err(TensorError::Lineage { .. })));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(t2(&[&[1.0, 2.0]])).unwrap();
        let c = tape.constant(t2(&[&[3.0], &[4.0]])).unwrap();
        let y = tape.matmul(w, c).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn non_finite_values_are_rejected_when_checking() {
        let mut tape = Tape::<f64>::with_finite_check(true);
        assert!(matches!(
            tape.constant(Tensor::scalar(f64::NAN)),
            Err(TensorError::NonFinite { .. })
        ));
        let x = tape.constant(Tensor::scalar(1e300)).unwrap();
        assert!(tape.mul(x, x).is_err());
        let mut lax = Tape::<f64>::with_finite_check(false);
        assert!(lax.constant(Tensor::scalar(f64::INFINITY)).is_ok());
    }

    #[test]
    fn trace_inputs_precede_nodes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.param(Tensor::ones(vec![2, 2])).unwrap();
        let b = tape.gelu(a).unwrap();
        let c = tape.matmul(a, b).unwrap();
        let _ = tape.mean_rows(c).unwrap();
        for (i, (_, inputs)) in tape.trace().iter().enumerate() {
            assert!(inputs.iter().all(|&j| j < i));
        }
    }
}
