//! Define-by-run tape. Every op appends a node whose id is larger than the ids
//! of its inputs, so node order is a topological order and the backward pass
//! is a single reverse sweep.

use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Nonlinearity used by MLP blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

#[derive(Debug, Clone, Copy)]
struct Lanes {
    outer: usize,
    len: usize,
    inner: usize,
}

impl Lanes {
    fn of(shape: &[usize], axis: usize) -> Self {
        Self {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    ScaleBy(usize, usize),
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchMatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        transpose_b: bool,
    },
    /// input index and the saved derivative at each element
    Gelu(usize, Vec<f64>),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Softmax(usize, Lanes),
    MaskedSoftmax {
        x: usize,
        cols: usize,
    },
    SumAxis(usize, Lanes, f64),
    SumAll(usize, f64),
    Dot(usize, usize),
    L2Norm(usize),
    Concat {
        inputs: Vec<usize>,
        outer: usize,
        chunks: Vec<usize>,
    },
    Reshape(usize),
    Im2Col(usize, ConvGeometry),
    MaxPool(usize, Vec<usize>),
    GatherRows {
        x: usize,
        index: Vec<usize>,
        cols: usize,
    },
    Select(usize, usize),
    NllProbs {
        p: usize,
        labels: Vec<usize>,
        classes: usize,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
        classes: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn invalid(op: &'static str, shape: &[usize], reason: impl Into<String>) -> TensorError {
    TensorError::InvalidShape {
        op,
        shape: shape.to_vec(),
        reason: reason.into(),
    }
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let value = value.with_grad(requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn make(&mut self, shape: &[usize], data: Vec<f64>, op: Op, inputs: &[usize]) -> Var {
        let t = Tensor::new(shape, data).expect("op produced inconsistent shape");
        self.push(t, op, inputs)
    }

    /// Records a leaf; gradients flow to it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad(true))
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.make(&shape, data, op, &[a.0, b.0])
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.make(&shape, data, op, &[a.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, Op::Add(a.0, b.0), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, Op::Sub(a.0, b.0), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, Op::Mul(a.0, b.0), |x, y| x * y))
    }

    /// Adds a `[k]` row vector to every row of an `[.., k]` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.len() != 1 || sa.last() != Some(&sr[0]) {
            return Err(mismatch("add_row", sa, sr));
        }
        let k = sr[0];
        let r = self.data(row);
        let data = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + r[i % k])
            .collect();
        let shape = sa.to_vec();
        Ok(self.make(&shape, data, Op::AddRow(a.0, row.0), &[a.0, row.0]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a.0, c), |x| x * c)
    }

    /// Multiplies every element of `a` by the single element of `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(mismatch("scale_by", self.shape(a), self.shape(s)));
        }
        let c = self.data(s)[0];
        let data = self.data(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.make(&shape, data, Op::ScaleBy(a.0, s.0), &[a.0, s.0]))
    }

    /// `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, 0.0);
        Ok(self.make(&[m, n], out, Op::MatMul { a: a.0, b: b.0, m, k, n }, &[a.0, b.0]))
    }

    /// Batched `[B,m,k] · [B,k,n]`, or `[B,m,k] · [B,n,k]ᵀ` when `transpose_b`.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(mismatch("bmm", sa, sb));
        }
        let mut out = vec![0.0; batch * m * n];
        {
            let (da, db) = (self.data(a), self.data(b));
            for i in 0..batch {
                kernels::gemm(
                    m,
                    k,
                    n,
                    &da[i * m * k..(i + 1) * m * k],
                    false,
                    &db[i * k * n..(i + 1) * k * n],
                    transpose_b,
                    &mut out[i * m * n..(i + 1) * m * n],
                    0.0,
                );
            }
        }
        let op = Op::BatchMatMul {
            a: a.0,
            b: b.0,
            batch,
            m,
            k,
            n,
            transpose_b,
        };
        Ok(self.make(&[batch, m, n], out, op, &[a.0, b.0]))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let (data, grad): (Vec<f64>, Vec<f64>) = self.data(a).iter().map(|&x| kernels::gelu_with_grad(x)).unzip();
        let shape = self.shape(a).to_vec();
        self.make(&shape, data, Op::Gelu(a.0, grad), &[a.0])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a.0), |x| x.max(0.0))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Gelu => self.gelu(a),
            Activation::Relu => self.relu(a),
        }
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a.0), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a.0), f64::ln)
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<Lanes> {
        let s = self.shape(a);
        if axis >= s.len() {
            return Err(invalid(op, s, format!("axis {axis} out of range")));
        }
        Ok(Lanes::of(s, axis))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let l = self.check_axis("softmax", a, axis)?;
        let x = self.data(a);
        let mut out = vec![0.0; x.len()];
        for o in 0..l.outer {
            for i in 0..l.inner {
                kernels::softmax_lane(x, &mut out, o * l.len * l.inner + i, l.len, l.inner);
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.make(&shape, out, Op::Softmax(a.0, l), &[a.0]))
    }

    /// Softmax over the last axis restricted to positions where `mask` holds.
    /// `mask` is `rows × cols` and is shared by every leading batch index;
    /// every row must admit at least one position.
    pub fn masked_softmax(&mut self, a: Var, mask: &Rc<[bool]>) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(invalid("masked_softmax", &s, "need at least 2 axes"));
        }
        let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
        if mask.len() != rows * cols {
            return Err(mismatch("masked_softmax", &s, &[mask.len()]));
        }
        if (0..rows).any(|r| !mask[r * cols..(r + 1) * cols].iter().any(|&m| m)) {
            return Err(invalid("masked_softmax", &s, "mask row admits no position"));
        }
        let x = self.data(a);
        let mut out = vec![0.0; x.len()];
        for (lane, chunk) in x.chunks(cols).enumerate() {
            let r = lane % rows;
            let m = &mask[r * cols..(r + 1) * cols];
            let dst = &mut out[lane * cols..(lane + 1) * cols];
            let max = chunk
                .iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..cols {
                if m[j] {
                    dst[j] = (chunk[j] - max).exp();
                    sum += dst[j];
                }
            }
            for v in dst.iter_mut() {
                *v /= sum;
            }
        }
        Ok(self.make(&s, out, Op::MaskedSoftmax { x: a.0, cols }, &[a.0]))
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, scale: f64, l: Lanes) -> Var {
        let x = self.data(a);
        let mut out = vec![0.0; l.outer * l.inner];
        for o in 0..l.outer {
            for j in 0..l.len {
                let src = &x[(o * l.len + j) * l.inner..(o * l.len + j + 1) * l.inner];
                let dst = &mut out[o * l.inner..(o + 1) * l.inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        if scale != 1.0 {
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let mut shape: Vec<usize> = self.shape(a).to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.make(&shape, out, Op::SumAxis(a.0, l, scale), &[a.0])
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let l = self.check_axis("sum_axis", a, axis)?;
        Ok(self.reduce_axis(a, axis, 1.0, l))
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let l = self.check_axis("mean_axis", a, axis)?;
        Ok(self.reduce_axis(a, axis, 1.0 / l.len as f64, l))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.make(&[1], vec![s], Op::SumAll(a.0, 1.0), &[a.0])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.data(a).iter().sum::<f64>() / n;
        self.make(&[1], vec![s], Op::SumAll(a.0, 1.0 / n), &[a.0])
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let s = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).sum();
        Ok(self.make(&[1], vec![s], Op::Dot(a.0, b.0), &[a.0, b.0]))
    }

    /// Euclidean norm of all elements.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().map(|x| x * x).sum::<f64>().sqrt();
        self.make(&[1], vec![s], Op::L2Norm(a.0), &[a.0])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", &base, format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let chunks: Vec<usize> = parts.iter().map(|&p| self.shape(p)[axis] * inner).collect();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &c) in parts.iter().zip(&chunks) {
                out.extend_from_slice(&self.data(p)[o * c..(o + 1) * c]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        let op = Op::Concat {
            inputs: ids.clone(),
            outer,
            chunks,
        };
        Ok(self.make(&shape, out, op, &ids))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() || shape.contains(&0) {
            return Err(mismatch("reshape", self.shape(a), shape));
        }
        let data = self.data(a).to_vec();
        Ok(self.make(shape, data, Op::Reshape(a.0), &[a.0]))
    }

    /// Patch extraction from an NHWC tensor `[B,H,W,C]`; output rows are
    /// ordered `(b, oy, ox)` and columns `(ky, kx, c)`.
    pub fn im2col(&mut self, a: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || kernel == 0 || stride == 0 {
            return Err(invalid("im2col", &s, "expected [B,H,W,C] and positive kernel/stride"));
        }
        if s[1] + 2 * pad < kernel || s[2] + 2 * pad < kernel {
            return Err(invalid("im2col", &s, format!("kernel {kernel} larger than padded input")));
        }
        let g = ConvGeometry {
            batch: s[0],
            height: s[1],
            width: s[2],
            channels: s[3],
            kernel,
            stride,
            pad,
        };
        let out = kernels::im2col(&g, self.data(a));
        Ok(self.make(&[g.rows(), g.patch_len()], out, Op::Im2Col(a.0, g), &[a.0]))
    }

    /// 2×2 stride-2 max pooling over NHWC `[B,H,W,C]`.
    pub fn max_pool2(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(invalid("max_pool2", &s, "expected [B,H,W,C] with even H and W"));
        }
        let (out, arg) = kernels::max_pool2(s[0], s[1], s[2], s[3], self.data(a));
        Ok(self.make(&[s[0], s[1] / 2, s[2] / 2, s[3]], out, Op::MaxPool(a.0, arg), &[a.0]))
    }

    /// Gathers rows of a `[m,k]` tensor (rows may repeat).
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(invalid("gather_rows", &s, "expected a matrix"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= s[0]) {
            return Err(invalid("gather_rows", &s, format!("row {bad} out of range")));
        }
        if index.is_empty() {
            return Err(invalid("gather_rows", &s, "empty index"));
        }
        let k = s[1];
        let x = self.data(a);
        let mut out = Vec::with_capacity(index.len() * k);
        for &i in index {
            out.extend_from_slice(&x[i * k..(i + 1) * k]);
        }
        let op = Op::GatherRows {
            x: a.0,
            index: index.to_vec(),
            cols: k,
        };
        Ok(self.make(&[index.len(), k], out, op, &[a.0]))
    }

    /// Single element as a `[1]` tensor.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        if index >= self.value(a).numel() {
            return Err(invalid("select", self.shape(a), format!("index {index} out of range")));
        }
        let v = self.data(a)[index];
        Ok(self.make(&[1], vec![v], Op::Select(a.0, index), &[a.0]))
    }

    fn check_labels(&self, op: &'static str, a: Var, labels: &[usize]) -> Result<(usize, usize)> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(mismatch(op, s, &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= s[1]) {
            return Err(invalid(op, s, format!("label {bad} out of range")));
        }
        Ok((s[0], s[1]))
    }

    /// Mean negative log-likelihood of `labels` under row-probabilities `p`.
    pub fn nll_probs(&mut self, p: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.check_labels("nll_probs", p, labels)?;
        let x = self.data(p);
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(i, &y)| x[i * c + y].ln())
            .sum::<f64>()
            / b as f64;
        let op = Op::NllProbs {
            p: p.0,
            labels: labels.to_vec(),
            classes: c,
        };
        Ok(self.make(&[1], vec![loss], op, &[p.0]))
    }

    /// Mean softmax cross-entropy of `[B,C]` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.check_labels("softmax_cross_entropy", logits, labels)?;
        let x = self.data(logits);
        let mut probs = vec![0.0; x.len()];
        for r in 0..b {
            kernels::softmax_lane(x, &mut probs, r * c, c, 1);
        }
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let row = &x[i * c..(i + 1) * c];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                row[y] - lse
            })
            .sum::<f64>()
            / b as f64;
        let op = Op::SoftmaxCrossEntropy {
            logits: logits.0,
            labels: labels.to_vec(),
            probs,
            classes: c,
        };
        Ok(self.make(&[1], vec![loss], op, &[logits.0]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            self.propagate(id, &dy, &mut grads);
            grads[id] = Some(dy);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|d| Tensor::new(n.value.shape(), d).expect("grad shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn propagate(&self, id: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let y = node.value.data();
        let mut acc = |target: usize, f: &mut dyn FnMut(&mut [f64])| {
            if self.wants(target) {
                let len = self.nodes[target].value.numel();
                let buf = grads[target].get_or_insert_with(|| vec![0.0; len]);
                f(buf);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| add_into(g, dy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g -= d));
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * xb[i];
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * xa[i];
                    }
                });
            }
            Op::AddRow(a, r) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*r, &mut |g| {
                    let k = g.len();
                    for (i, d) in dy.iter().enumerate() {
                        g[i % k] += d;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += c * d)),
            Op::ScaleBy(a, s) => {
                let c = self.nodes[*s].value.data()[0];
                let xa = self.nodes[*a].value.data();
                acc(*a, &mut |g| g.iter_mut().zip(dy).for_each(|(g, d)| *g += c * d));
                acc(*s, &mut |g| g[0] += dy.iter().zip(xa).map(|(d, x)| d * x).sum::<f64>());
            }
            Op::MatMul { a, b, m, k, n } => {
                let (xa, xb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                // dA = dY·Bᵀ, dB = Aᵀ·dY
                acc(*a, &mut |g| kernels::gemm(*m, *n, *k, dy, false, xb, true, g, 1.0));
                acc(*b, &mut |g| kernels::gemm(*k, *m, *n, xa, true, dy, false, g, 1.0));
            }
            Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                transpose_b,
            } => {
                let (xa, xb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                let (m, k, n) = (*m, *k, *n);
                for i in 0..*batch {
                    let dyi = &dy[i * m * n..(i + 1) * m * n];
                    let ai = &xa[i * m * k..(i + 1) * m * k];
                    let bi = &xb[i * k * n..(i + 1) * k * n];
                    acc(*a, &mut |g| {
                        // dA = dY·Bᵀ with B the logical k×n operand
                        kernels::gemm(m, n, k, dyi, false, bi, !transpose_b, &mut g[i * m * k..(i + 1) * m * k], 1.0)
                    });
                    acc(*b, &mut |g| {
                        let gb = &mut g[i * k * n..(i + 1) * k * n];
                        if *transpose_b {
                            // stored n×k: dBstored = dYᵀ·A
                            kernels::gemm(n, m, k, dyi, true, ai, false, gb, 1.0)
                        } else {
                            kernels::gemm(k, m, n, ai, true, dyi, false, gb, 1.0)
                        }
                    });
                }
            }
            Op::Gelu(a, d) => {
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * d[i];
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.nodes[*a].value.data();
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            g[i] += dy[i];
                        }
                    }
                });
            }
            Op::Exp(a) => acc(*a, &mut |g| {
                for i in 0..g.len() {
                    g[i] += dy[i] * y[i];
                }
            }),
            Op::Log(a) => {
                let x = self.nodes[*a].value.data();
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] / x[i];
                    }
                });
            }
            Op::Softmax(a, l) => acc(*a, &mut |g| {
                for o in 0..l.outer {
                    for i in 0..l.inner {
                        let base = o * l.len * l.inner + i;
                        let dot: f64 = (0..l.len).map(|j| dy[base + j * l.inner] * y[base + j * l.inner]).sum();
                        for j in 0..l.len {
                            let p = base + j * l.inner;
                            g[p] += y[p] * (dy[p] - dot);
                        }
                    }
                }
            }),
            Op::MaskedSoftmax { x, cols } => acc(*x, &mut |g| {
                for lane in 0..g.len() / cols {
                    let r = lane * cols..(lane + 1) * cols;
                    let (yl, dl) = (&y[r.clone()], &dy[r.clone()]);
                    let dot: f64 = yl.iter().zip(dl).map(|(a, b)| a * b).sum();
                    for (j, gj) in g[r].iter_mut().enumerate() {
                        *gj += yl[j] * (dl[j] - dot);
                    }
                }
            }),
            Op::SumAxis(a, l, scale) => acc(*a, &mut |g| {
                for o in 0..l.outer {
                    let src = &dy[o * l.inner..(o + 1) * l.inner];
                    for j in 0..l.len {
                        let dst = &mut g[(o * l.len + j) * l.inner..(o * l.len + j + 1) * l.inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += scale * s;
                        }
                    }
                }
            }),
            Op::SumAll(a, scale) => acc(*a, &mut |g| g.iter_mut().for_each(|v| *v += scale * dy[0])),
            Op::Dot(a, b) => {
                let (xa, xb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                acc(*a, &mut |g| g.iter_mut().zip(xb).for_each(|(g, x)| *g += dy[0] * x));
                acc(*b, &mut |g| g.iter_mut().zip(xa).for_each(|(g, x)| *g += dy[0] * x));
            }
            Op::L2Norm(a) => {
                let x = self.nodes[*a].value.data();
                let norm = y[0];
                if norm > 0.0 {
                    acc(*a, &mut |g| g.iter_mut().zip(x).for_each(|(g, x)| *g += dy[0] * x / norm));
                }
            }
            Op::Concat { inputs, outer, chunks } => {
                let total: usize = chunks.iter().sum();
                let mut offset = 0;
                for (&p, &c) in inputs.iter().zip(chunks) {
                    acc(p, &mut |g| {
                        for o in 0..*outer {
                            add_into(&mut g[o * c..(o + 1) * c], &dy[o * total + offset..o * total + offset + c]);
                        }
                    });
                    offset += c;
                }
            }
            Op::Reshape(a) => acc(*a, &mut |g| add_into(g, dy)),
            Op::Im2Col(a, geom) => acc(*a, &mut |g| kernels::col2im_accumulate(geom, dy, g)),
            Op::MaxPool(a, arg) => acc(*a, &mut |g| {
                for (d, &i) in dy.iter().zip(arg) {
                    g[i] += d;
                }
            }),
            Op::GatherRows { x, index, cols } => acc(*x, &mut |g| {
                for (r, &i) in index.iter().enumerate() {
                    add_into(&mut g[i * cols..(i + 1) * cols], &dy[r * cols..(r + 1) * cols]);
                }
            }),
            Op::Select(a, i) => acc(*a, &mut |g| g[*i] += dy[0]),
            Op::NllProbs { p, labels, classes } => {
                let x = self.nodes[*p].value.data();
                let b = labels.len() as f64;
                acc(*p, &mut |g| {
                    for (r, &lab) in labels.iter().enumerate() {
                        let i = r * classes + lab;
                        g[i] -= dy[0] / (b * x[i]);
                    }
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
                classes,
            } => {
                let b = labels.len() as f64;
                acc(*logits, &mut |g| {
                    for (r, &lab) in labels.iter().enumerate() {
                        for c in 0..*classes {
                            let i = r * classes + c;
                            let target = if c == lab { 1.0 } else { 0.0 };
                            g[i] += dy[0] * (probs[i] - target) / b;
                        }
                    }
                });
            }
        }
    }
}

fn add_into(g: &mut [f64], d: &[f64]) {
    for (g, d) in g.iter_mut().zip(d) {
        *g += d;
    }
}

/// Gradients of one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like it when `v` was unreachable.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }
}
