use std::borrow::Cow;

use super::flops::{self, GELU_COST, NORM_COST, SOFTMAX_COST};
use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::tensor::{check_finite, numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adjoint of a user-supplied unary op: `(input, output, grad_output) -> grad_input`.
pub type CustomBackward<T> = Box<dyn Fn(&[T], &[T], &[T]) -> Vec<T> + Send + Sync>;

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatMulNt { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddRow { x: Var, row: Var, width: usize },
    Scale { x: Var, factor: T },
    Sum { x: Var },
    MeanRows { x: Var, rows: usize, cols: usize },
    RepeatRows { x: Var, times: usize },
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, width: usize, xhat: Vec<T>, rstd: Vec<T> },
    Gelu { x: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T>, classes: usize },
    SliceRows { x: Var, start: usize, cols: usize },
    SliceCols { x: Var, start: usize, in_cols: usize, out_cols: usize },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<(Var, usize)>, total: usize },
    Custom { x: Var, backward: CustomBackward<T> },
}

struct Node<'a, T: Scalar> {
    shape: Vec<usize>,
    value: Cow<'a, [T]>,
    op: Op<T>,
    requires_grad: bool,
}

/// Linear record of tensor operations supporting one reverse sweep.
///
/// Leaves may borrow parameter tensors, so independent tapes over the same
/// parameters can be built on different threads. Nodes are appended in
/// evaluation order, which is already a topological order.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    tracking: bool,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        _ => {
            let cols = shape[shape.len() - 1];
            (numel(&shape[..shape.len() - 1]), cols)
        }
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            tracking: true,
        }
    }

    /// A tape whose leaves never require gradients. Used for inference and profiling.
    pub fn without_grad() -> Self {
        Self {
            nodes: Vec::new(),
            tracking: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Result<Var> {
        check_finite(&value, name)?;
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a borrowed tensor. It is tracked iff the tensor requires grad.
    pub fn leaf(&mut self, t: &'a Tensor<T>) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.data()),
            op: Op::Leaf,
            requires_grad: self.tracking && t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an owned, untracked value.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(t.into_data()),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an owned value that gradients flow into.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(t.into_data()),
            op: Op::Leaf,
            requires_grad: self.tracking,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("tape values are finite and shaped")
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Dimension {
                op,
                lhs: s.to_vec(),
                rhs: vec![0, 0],
            }),
        }
    }

    /// Matrix product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        flops::add(2 * (m * k * n) as u64);
        let rg = self.rg(a) || self.rg(b);
        self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, rg, "matmul")
    }

    /// `a[m×k] · b[n×k]ᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul_nt")?;
        let (n, k2) = self.matrix(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul_nt",
                lhs: vec![m, k],
                rhs: vec![n, k2],
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(self.value(a), self.value(b), &mut out, m, k, n);
        flops::add(2 * (m * k * n) as u64);
        let rg = self.rg(a) || self.rg(b);
        self.push(vec![m, n], out, Op::MatMulNt { a, b, m, k, n }, rg, "matmul_nt")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.matrix(x, "transpose")?;
        let src = self.value(x);
        let mut out = vec![T::zero(); rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = src[i * cols + j];
            }
        }
        let rg = self.rg(x);
        self.push(vec![cols, rows], out, Op::Transpose { x, rows, cols }, rg, "transpose")
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out: Vec<T> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        flops::add(out.len() as u64);
        let rg = self.rg(a) || self.rg(b);
        self.push(self.shape(a).to_vec(), out, Op::Add { a, b }, rg, "add")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out: Vec<T> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        flops::add(out.len() as u64);
        let rg = self.rg(a) || self.rg(b);
        self.push(self.shape(a).to_vec(), out, Op::Mul { a, b }, rg, "mul")
    }

    /// Adds a length-`n` row to every slice along the last axis of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, width) = rows_cols(self.shape(x));
        if numel(self.shape(row)) != width || self.shape(row).len() > 2 {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let r = self.value(row);
        let out: Vec<T> = self
            .value(x)
            .chunks(width.max(1))
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&a, &b)| a + b))
            .collect();
        flops::add(out.len() as u64);
        let rg = self.rg(x) || self.rg(row);
        self.push(self.shape(x).to_vec(), out, Op::AddRow { x, row, width }, rg, "add_row")
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out: Vec<T> = self.value(x).iter().map(|&v| v * factor).collect();
        flops::add(out.len() as u64);
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Scale { x, factor }, rg, "scale")
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).iter().copied().sum();
        flops::add(self.value(x).len() as u64);
        let rg = self.rg(x);
        self.push(Vec::new(), vec![s], Op::Sum { x }, rg, "sum")
    }

    /// Column means of a matrix, as a `1×n` matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.matrix(x, "mean_rows")?;
        if rows == 0 {
            return Err(Error::Dimension {
                op: "mean_rows",
                lhs: vec![rows, cols],
                rhs: vec![1, cols],
            });
        }
        let src = self.value(x);
        let mut out = vec![T::zero(); cols];
        for r in src.chunks(cols) {
            out.iter_mut().zip(r).for_each(|(o, &v)| *o += v);
        }
        let inv = T::one() / T::of(rows as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        flops::add(src.len() as u64);
        let rg = self.rg(x);
        self.push(vec![1, cols], out, Op::MeanRows { x, rows, cols }, rg, "mean_rows")
    }

    /// Stacks a single row (`[n]` or `[1, n]`) `times` times into `[times, n]`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = match shape.as_slice() {
            [n] | [1, n] => *n,
            _ => {
                return Err(Error::Dimension {
                    op: "repeat_rows",
                    lhs: shape,
                    rhs: vec![1, 0],
                })
            }
        };
        let src = self.value(x);
        let mut out = Vec::with_capacity(times * n);
        for _ in 0..times {
            out.extend_from_slice(src);
        }
        let rg = self.rg(x);
        self.push(vec![times, n], out, Op::RepeatRows { x, times }, rg, "repeat_rows")
    }

    /// Softmax along `axis`, computed after subtracting the slice maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension {
                op: "softmax",
                lhs: shape,
                rhs: vec![axis],
            });
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let src = self.value(x);
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let mut mx = T::neg_infinity();
                for a in 0..len {
                    mx = mx.max(src[idx(a)]);
                }
                let mut total = T::zero();
                for a in 0..len {
                    let e = (src[idx(a)] - mx).exp();
                    out[idx(a)] = e;
                    total += e;
                }
                for a in 0..len {
                    out[idx(a)] /= total;
                }
            }
        }
        flops::add(SOFTMAX_COST * src.len() as u64);
        let rg = self.rg(x);
        self.push(shape, out, Op::Softmax { x, outer, len, inner }, rg, "softmax")
    }

    /// Normalizes each slice along the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        if !(eps > T::zero()) {
            return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let shape = self.shape(x).to_vec();
        let (rows, width) = rows_cols(&shape);
        for p in [gain, bias] {
            if numel(self.shape(p)) != width {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: shape,
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let src = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); src.len()];
        let inv_w = T::one() / T::of(width as f64);
        for r in 0..rows {
            let row = &src[r * width..(r + 1) * width];
            let mean = row.iter().copied().sum::<T>() * inv_w;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_w;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..width {
                let h = (row[c] - mean) * rs;
                xhat[r * width + c] = h;
                out[r * width + c] = h * g[c] + b[c];
            }
        }
        flops::add(NORM_COST * src.len() as u64);
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        let (xhat, rstd) = if rg { (xhat, rstd) } else { (Vec::new(), Vec::new()) };
        self.push(shape, out, Op::LayerNorm { x, gain, bias, width, xhat, rstd }, rg, "layer_norm")
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let half = T::of(0.5);
        let inv_sqrt2 = T::of(std::f64::consts::FRAC_1_SQRT_2);
        let out: Vec<T> = self
            .value(x)
            .iter()
            .map(|&v| v * half * (T::one() + (v * inv_sqrt2).erf()))
            .collect();
        flops::add(GELU_COST * out.len() as u64);
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Gelu { x }, rg, "gelu")
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits[B×K]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (batch, classes) = self.matrix(logits, "cross_entropy")?;
        if batch != labels.len() || batch == 0 {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: vec![batch, classes],
                rhs: vec![labels.len()],
            });
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Data(format!(
                "label {l} at index {i} is outside [0, {classes})"
            )));
        }
        let src = self.value(logits);
        let mut probs = vec![T::zero(); src.len()];
        let mut loss = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &src[r * classes..(r + 1) * classes];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total: T = row.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + total.ln();
            loss += lse - row[label];
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - lse).exp();
            }
        }
        loss /= T::of(batch as f64);
        flops::add(SOFTMAX_COST * src.len() as u64);
        let rg = self.rg(logits);
        self.push(
            Vec::new(),
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                classes,
            },
            rg,
            "cross_entropy",
        )
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.matrix(x, "slice_rows")?;
        if start + len > rows {
            return Err(Error::Dimension {
                op: "slice_rows",
                lhs: vec![rows, cols],
                rhs: vec![start, len],
            });
        }
        let out = self.value(x)[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(x);
        self.push(vec![len, cols], out, Op::SliceRows { x, start, cols }, rg, "slice_rows")
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.matrix(x, "slice_cols")?;
        if start + len > cols {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: vec![rows, cols],
                rhs: vec![start, len],
            });
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(x);
        self.push(
            vec![rows, len],
            out,
            Op::SliceCols {
                x,
                start,
                in_cols: cols,
                out_cols: len,
            },
            rg,
            "slice_cols",
        )
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Usage("concat_rows of nothing".into()))?;
        let (_, cols) = self.matrix(first, "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.matrix(p, "concat_rows")?;
            if c != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: vec![r, c],
                    rhs: vec![0, cols],
                });
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(vec![rows, cols], out, Op::ConcatRows { parts: parts.to_vec() }, rg, "concat_rows")
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Usage("concat_cols of nothing".into()))?;
        let (rows, _) = self.matrix(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix(p, "concat_cols")?;
            if r != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: vec![r, c],
                    rhs: vec![rows, 0],
                });
            }
            widths.push((p, c));
        }
        let total: usize = widths.iter().map(|&(_, c)| c).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(p, c) in &widths {
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(vec![rows, total], out, Op::ConcatCols { parts: widths, total }, rg, "concat_cols")
    }

    /// Elementwise op with caller-supplied forward and adjoint.
    pub fn custom_unary(
        &mut self,
        x: Var,
        forward: impl Fn(&[T]) -> Vec<T>,
        backward: impl Fn(&[T], &[T], &[T]) -> Vec<T> + Send + Sync + 'static,
    ) -> Result<Var> {
        let out = forward(self.value(x));
        if out.len() != self.value(x).len() {
            return Err(Error::Dimension {
                op: "custom_unary",
                lhs: self.shape(x).to_vec(),
                rhs: vec![out.len()],
            });
        }
        let rg = self.rg(x);
        self.push(
            self.shape(x).to_vec(),
            out,
            Op::Custom {
                x,
                backward: Box::new(backward),
            },
            rg,
            "custom_unary",
        )
    }

    /// Reverse sweep from a single-element `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if numel(self.shape(loss)) != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let val = |v: Var| -> &[T] { &nodes[v.0].value };
            let wants = |v: Var| nodes[v.0].requires_grad;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
                if wants(v) {
                    let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
                    f(buf);
                }
            };
            match &node.op {
                Op::Leaf => {}
                &Op::MatMul { a, b, m, k, n } => {
                    acc(a, &mut |ga| gemm_nt(&g, val(b), ga, m, n, k));
                    acc(b, &mut |gb| gemm_tn(val(a), &g, gb, m, k, n));
                }
                &Op::MatMulNt { a, b, m, k, n } => {
                    acc(a, &mut |ga| gemm_nn(&g, val(b), ga, m, n, k));
                    acc(b, &mut |gb| gemm_tn(&g, val(a), gb, m, n, k));
                }
                &Op::Transpose { x, rows, cols } => acc(x, &mut |gx| {
                    for r in 0..rows {
                        for c in 0..cols {
                            gx[r * cols + c] += g[c * rows + r];
                        }
                    }
                }),
                &Op::Add { a, b } => {
                    acc(a, &mut |ga| ga.iter_mut().zip(&g).for_each(|(x, &y)| *x += y));
                    acc(b, &mut |gb| gb.iter_mut().zip(&g).for_each(|(x, &y)| *x += y));
                }
                &Op::Mul { a, b } => {
                    acc(a, &mut |ga| {
                        ga.iter_mut().zip(&g).zip(val(b)).for_each(|((x, &y), &z)| *x += y * z)
                    });
                    acc(b, &mut |gb| {
                        gb.iter_mut().zip(&g).zip(val(a)).for_each(|((x, &y), &z)| *x += y * z)
                    });
                }
                &Op::AddRow { x, row, width } => {
                    acc(x, &mut |gx| gx.iter_mut().zip(&g).for_each(|(a, &b)| *a += b));
                    acc(row, &mut |gr| {
                        for chunk in g.chunks(width.max(1)) {
                            gr.iter_mut().zip(chunk).for_each(|(a, &b)| *a += b);
                        }
                    });
                }
                &Op::Scale { x, factor } => {
                    acc(x, &mut |gx| gx.iter_mut().zip(&g).for_each(|(a, &b)| *a += b * factor))
                }
                &Op::Sum { x } => acc(x, &mut |gx| gx.iter_mut().for_each(|a| *a += g[0])),
                &Op::MeanRows { x, rows, cols } => {
                    let inv = T::one() / T::of(rows as f64);
                    acc(x, &mut |gx| {
                        for r in gx.chunks_mut(cols) {
                            r.iter_mut().zip(&g).for_each(|(a, &b)| *a += b * inv);
                        }
                    })
                }
                &Op::RepeatRows { x, times } => {
                    let n = g.len() / times.max(1);
                    acc(x, &mut |gx| {
                        for chunk in g.chunks(n.max(1)) {
                            gx.iter_mut().zip(chunk).for_each(|(a, &b)| *a += b);
                        }
                    })
                }
                &Op::Softmax { x, outer, len, inner } => {
                    let y = &node.value;
                    acc(x, &mut |gx| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let idx = |a: usize| (o * len + a) * inner + i;
                                let mut dot = T::zero();
                                for a in 0..len {
                                    dot += g[idx(a)] * y[idx(a)];
                                }
                                for a in 0..len {
                                    gx[idx(a)] += y[idx(a)] * (g[idx(a)] - dot);
                                }
                            }
                        }
                    })
                }
                Op::LayerNorm { x, gain, bias, width, xhat, rstd } => {
                    let (x, gain, bias, width) = (*x, *gain, *bias, *width);
                    let gv = val(gain);
                    acc(gain, &mut |gg| {
                        for (gr, hr) in g.chunks(width).zip(xhat.chunks(width)) {
                            for c in 0..width {
                                gg[c] += gr[c] * hr[c];
                            }
                        }
                    });
                    acc(bias, &mut |gb| {
                        for gr in g.chunks(width) {
                            gb.iter_mut().zip(gr).for_each(|(a, &b)| *a += b);
                        }
                    });
                    let inv_w = T::one() / T::of(width as f64);
                    acc(x, &mut |gx| {
                        for (r, rs) in rstd.iter().enumerate() {
                            let gr = &g[r * width..(r + 1) * width];
                            let hr = &xhat[r * width..(r + 1) * width];
                            let mut mean_d = T::zero();
                            let mut mean_dh = T::zero();
                            for c in 0..width {
                                let d = gr[c] * gv[c];
                                mean_d += d;
                                mean_dh += d * hr[c];
                            }
                            mean_d *= inv_w;
                            mean_dh *= inv_w;
                            for c in 0..width {
                                let d = gr[c] * gv[c];
                                gx[r * width + c] += *rs * (d - mean_d - hr[c] * mean_dh);
                            }
                        }
                    });
                }
                &Op::Gelu { x } => {
                    let half = T::of(0.5);
                    let inv_sqrt2 = T::of(std::f64::consts::FRAC_1_SQRT_2);
                    let inv_sqrt_2pi = T::of(0.398_942_280_401_432_7);
                    acc(x, &mut |gx| {
                        for ((a, &gy), &v) in gx.iter_mut().zip(&g).zip(val(x)) {
                            let cdf = half * (T::one() + (v * inv_sqrt2).erf());
                            let pdf = inv_sqrt_2pi * (-half * v * v).exp();
                            *a += gy * (cdf + v * pdf);
                        }
                    })
                }
                Op::CrossEntropy { logits, labels, probs, classes } => {
                    let classes = *classes;
                    let scale = g[0] / T::of(labels.len() as f64);
                    acc(*logits, &mut |gl| {
                        for (r, &label) in labels.iter().enumerate() {
                            for c in 0..classes {
                                let onehot = if c == label { T::one() } else { T::zero() };
                                gl[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                            }
                        }
                    })
                }
                &Op::SliceRows { x, start, cols } => acc(x, &mut |gx| {
                    gx[start * cols..start * cols + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, &b)| *a += b)
                }),
                &Op::SliceCols { x, start, in_cols, out_cols } => acc(x, &mut |gx| {
                    for (r, gr) in g.chunks(out_cols).enumerate() {
                        gx[r * in_cols + start..r * in_cols + start + out_cols]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(a, &b)| *a += b);
                    }
                }),
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = nodes[p.0].value.len();
                        acc(p, &mut |gp| {
                            gp.iter_mut().zip(&g[offset..offset + n]).for_each(|(a, &b)| *a += b)
                        });
                        offset += n;
                    }
                }
                Op::ConcatCols { parts, total } => {
                    let total = *total;
                    let mut offset = 0;
                    for &(p, c) in parts {
                        acc(p, &mut |gp| {
                            for (r, row) in gp.chunks_mut(c.max(1)).enumerate() {
                                let src = &g[r * total + offset..r * total + offset + c];
                                row.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                            }
                        });
                        offset += c;
                    }
                }
                Op::Custom { x, backward } => {
                    let x = *x;
                    let gin = backward(val(x), &node.value, &g);
                    acc(x, &mut |gx| gx.iter_mut().zip(&gin).for_each(|(a, &b)| *a += b));
                }
            }
        }

        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite {
                        op: if matches!(nodes[i].op, Op::Leaf) { "backward" } else { "backward (interior)" },
                    });
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of the leaves reached by a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Adds the gradient for `v` (if any) into `t.grad`.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor<T>) -> Result<()> {
        match self.get(v) {
            Some(g) => t.accumulate_grad(g),
            None => Ok(()),
        }
    }
}
