//! Operation tape for reverse-mode differentiation.
//!
//! Every op appends one node holding the forward value and enough metadata
//! for the backward pass. Node inputs always reference earlier nodes, so the
//! record is topologically ordered by construction and a single reverse sweep
//! visits each operation exactly once.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Abs,
    Tanh,
    Gelu,
    Sqrt,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
    },
    Transpose {
        x: usize,
    },
    Binary {
        a: usize,
        b: usize,
        kind: BinaryKind,
    },
    Scale {
        x: usize,
        factor: f64,
    },
    AddScalar {
        x: usize,
    },
    Unary {
        x: usize,
        kind: UnaryKind,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    Row {
        x: usize,
        index: usize,
    },
    Reshape {
        x: usize,
    },
    EmbedRows {
        table: usize,
        ids: Vec<usize>,
    },
    Softmax {
        x: usize,
        axis: usize,
    },
    /// Row-wise softmax over a 2-D tensor where masked columns get weight
    /// exactly 0 and each row normalizes over the unmasked columns only.
    MaskedSoftmaxRows {
        x: usize,
        mask: Vec<bool>,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        eps: f64,
    },
    MaskedMean {
        x: usize,
        axis: usize,
        mask: Vec<bool>,
    },
    MaskedMax {
        x: usize,
        /// Flat input index chosen per output coordinate.
        argmax: Vec<usize>,
    },
    /// loss = Σ_i target_i · (logsumexp(z) − z_i) for a fixed target.
    SoftCrossEntropy {
        logits: usize,
        target: Vec<f64>,
    },
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// Ordered record of executed operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn gelu_value(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    let d_inner = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Validates the trailing-alignment broadcast rule: shapes must be equal, or
/// the smaller shape must be either `[1]` or a suffix of the larger shape.
fn broadcast_shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Vec<usize>> {
    if lhs == rhs {
        return Ok(lhs.to_vec());
    }
    let (big, small) = if lhs.iter().product::<usize>() >= rhs.iter().product::<usize>() {
        (lhs, rhs)
    } else {
        (rhs, lhs)
    };
    let suffix_ok = small == [1]
        || (small.len() <= big.len() && &big[big.len() - small.len()..] == small);
    if !suffix_ok || big == small {
        return Err(Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        });
    }
    Ok(big.to_vec())
}

/// Splits a shape at `axis` into (outer, axis_len, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    /// Registers a tensor as a leaf. Its `requires_grad` flag decides whether
    /// backward populates a gradient for it.
    pub fn leaf(&mut self, tensor: Tensor) -> TensorId {
        self.nodes.push(Node {
            tensor,
            op: Op::Leaf,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Registers a constant leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor) -> TensorId {
        let mut tensor = tensor;
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn scalar(&mut self, value: f64) -> TensorId {
        self.constant(Tensor::scalar(value))
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].tensor.values()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].tensor.shape()
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad()
    }

    pub fn item(&self, id: TensorId) -> Result<f64> {
        self.nodes[id.0].tensor.item()
    }

    /// Clears every gradient buffer on the tape.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            *node.tensor.grad_mut() = None;
        }
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, values: Vec<f64>, op: Op) -> Result<TensorId> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires = match &op {
            Op::Leaf => unreachable!("leaves go through leaf()"),
            op => self.op_inputs(op).iter().any(|&i| self.nodes[i].tensor.requires_grad()),
        };
        let mut tensor = Tensor::new(shape, values)?;
        tensor.set_requires_grad(requires);
        self.nodes.push(Node { tensor, op });
        Ok(TensorId(self.nodes.len() - 1))
    }

    fn op_inputs(&self, op: &Op) -> Vec<usize> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul { a, b } | Op::Binary { a, b, .. } => vec![*a, *b],
            Op::Transpose { x }
            | Op::Scale { x, .. }
            | Op::AddScalar { x }
            | Op::Unary { x, .. }
            | Op::Sum { x }
            | Op::Mean { x }
            | Op::SliceCols { x, .. }
            | Op::Row { x, .. }
            | Op::Reshape { x }
            | Op::Softmax { x, .. }
            | Op::MaskedSoftmaxRows { x, .. }
            | Op::MaskedMean { x, .. }
            | Op::MaskedMax { x, .. } => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
            Op::EmbedRows { table, .. } => vec![*table],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::SoftCrossEntropy { logits, .. } => vec![*logits],
        }
    }

    // ── Forward operations ──────────────────────────────────────────────

    /// Matrix product of `a: [m×k]` and `b: [k×n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let values = matmul_raw(self.data(a), self.data(b), m, k, n);
        self.push("matmul", vec![m, n], values, Op::MatMul { a: a.0, b: b.0 })
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                shape,
                reason: "expected 2-D".into(),
            });
        }
        let (m, n) = (shape[0], shape[1]);
        let src = self.data(x);
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                values[j * m + i] = src[i * n + j];
            }
        }
        self.push("transpose", vec![n, m], values, Op::Transpose { x: x.0 })
    }

    fn binary(&mut self, op_name: &'static str, a: TensorId, b: TensorId, kind: BinaryKind) -> Result<TensorId> {
        let out_shape = broadcast_shape(op_name, self.shape(a), self.shape(b))?;
        let (da, db) = (self.data(a), self.data(b));
        let (na, nb) = (da.len(), db.len());
        let numel: usize = out_shape.iter().product();
        let mut values = vec![0.0; numel];
        for (i, v) in values.iter_mut().enumerate() {
            let (x, y) = (da[i % na], db[i % nb]);
            *v = match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
                BinaryKind::Div => x / y,
            };
        }
        self.push(op_name, out_shape, values, Op::Binary { a: a.0, b: b.0, kind })
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("add", a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("sub", a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("mul", a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("div", a, b, BinaryKind::Div)
    }

    pub fn scale(&mut self, x: TensorId, factor: f64) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let values = self.data(x).iter().map(|v| v * factor).collect();
        self.push("scale", shape, values, Op::Scale { x: x.0, factor })
    }

    pub fn add_scalar(&mut self, x: TensorId, constant: f64) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let values = self.data(x).iter().map(|v| v + constant).collect();
        self.push("add_scalar", shape, values, Op::AddScalar { x: x.0 })
    }

    fn unary(&mut self, op_name: &'static str, x: TensorId, kind: UnaryKind) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let values: Vec<f64> = self
            .data(x)
            .iter()
            .map(|&v| match kind {
                UnaryKind::Abs => v.abs(),
                UnaryKind::Tanh => v.tanh(),
                UnaryKind::Gelu => gelu_value(v),
                UnaryKind::Sqrt => v.sqrt(),
            })
            .collect();
        self.push(op_name, shape, values, Op::Unary { x: x.0, kind })
    }

    /// Elementwise |x|; the subgradient at 0 is 0.
    pub fn abs(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary("abs", x, UnaryKind::Abs)
    }

    pub fn tanh(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary("tanh", x, UnaryKind::Tanh)
    }

    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary("gelu", x, UnaryKind::Gelu)
    }

    pub fn sqrt(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary("sqrt", x, UnaryKind::Sqrt)
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let total: f64 = self.data(x).iter().sum();
        self.push("sum", vec![1], vec![total], Op::Sum { x: x.0 })
    }

    /// Mean of all entries, as a `[1]` tensor.
    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        let data = self.data(x);
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        self.push("mean", vec![1], vec![mean], Op::Mean { x: x.0 })
    }

    /// Concatenation along `axis`; all parts must agree on the other axes.
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::IndexOutOfRange {
                what: "concat axis",
                index: axis,
                size: first.len(),
            });
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let numel: usize = out_shape.iter().product();
        let mut values = vec![0.0; numel];
        for o in 0..outer {
            let mut offset = 0;
            for &p in parts {
                let s_axis = self.shape(p)[axis];
                let src = self.data(p);
                for j in 0..s_axis {
                    let dst_base = (o * axis_total + offset + j) * inner;
                    let src_base = (o * s_axis + j) * inner;
                    values[dst_base..dst_base + inner]
                        .copy_from_slice(&src[src_base..src_base + inner]);
                }
                offset += s_axis;
            }
        }
        let ids = parts.iter().map(|p| p.0).collect();
        self.push("concat", out_shape, values, Op::Concat { parts: ids, axis })
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || start >= end || end > shape[1] {
            return Err(Error::InvalidShape {
                op: "slice_cols",
                shape,
                reason: format!("cannot take columns {start}..{end}"),
            });
        }
        let (m, n, w) = (shape[0], shape[1], end - start);
        let src = self.data(x);
        let mut values = vec![0.0; m * w];
        for i in 0..m {
            values[i * w..(i + 1) * w].copy_from_slice(&src[i * n + start..i * n + end]);
        }
        self.push("slice_cols", vec![m, w], values, Op::SliceCols { x: x.0, start })
    }

    /// Row `index` of a 2-D tensor, as a 1-D tensor.
    pub fn row(&mut self, x: TensorId, index: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "row",
                shape,
                reason: "expected 2-D".into(),
            });
        }
        if index >= shape[0] {
            return Err(Error::IndexOutOfRange {
                what: "row",
                index,
                size: shape[0],
            });
        }
        let n = shape[1];
        let values = self.data(x)[index * n..(index + 1) * n].to_vec();
        self.push("row", vec![n], values, Op::Row { x: x.0, index })
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.data(x).len() {
            return Err(Error::InvalidShape {
                op: "reshape",
                shape,
                reason: "element count mismatch".into(),
            });
        }
        let values = self.data(x).to_vec();
        self.push("reshape", shape, values, Op::Reshape { x: x.0 })
    }

    /// Gathers rows of `table: [V×d]` by id, producing `[len×d]`.
    pub fn embed_rows(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "embed_rows",
                shape,
                reason: "expected 2-D table".into(),
            });
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::IndexOutOfRange {
                what: "embedding id",
                index: bad,
                size: v,
            });
        }
        if ids.is_empty() {
            return Err(Error::InvalidArgument("embed_rows with no ids".into()));
        }
        let src = self.data(table);
        let mut values = vec![0.0; ids.len() * d];
        for (pos, &id) in ids.iter().enumerate() {
            values[pos * d..(pos + 1) * d].copy_from_slice(&src[id * d..(id + 1) * d]);
        }
        self.push(
            "embed_rows",
            vec![ids.len(), d],
            values,
            Op::EmbedRows {
                table: table.0,
                ids: ids.to_vec(),
            },
        )
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::IndexOutOfRange {
                what: "softmax axis",
                index: axis,
                size: shape.len(),
            });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.data(x);
        let mut values = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    values[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    values[at(j)] /= total;
                }
            }
        }
        self.push("softmax", shape, values, Op::Softmax { x: x.0, axis })
    }

    /// Row-wise masked softmax over `x: [m×n]` with `mask: [n]`. Masked
    /// columns get weight exactly 0; every row must see at least one
    /// unmasked column.
    pub fn masked_softmax_rows(&mut self, x: TensorId, mask: &[bool]) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != mask.len() {
            return Err(Error::InvalidShape {
                op: "masked_softmax_rows",
                shape,
                reason: format!("mask of length {} does not fit", mask.len()),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidArgument("masked_softmax_rows: empty mask".into()));
        }
        let (m, n) = (shape[0], shape[1]);
        let src = self.data(x);
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..n {
                if mask[j] {
                    let e = (row[j] - max).exp();
                    values[i * n + j] = e;
                    total += e;
                }
            }
            for j in 0..n {
                values[i * n + j] /= total;
            }
        }
        self.push(
            "masked_softmax_rows",
            shape,
            values,
            Op::MaskedSoftmaxRows {
                x: x.0,
                mask: mask.to_vec(),
            },
        )
    }

    /// Layer normalization over the last dimension followed by the affine
    /// transform `gamma * xhat + beta`.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("tensor shapes are nonempty");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(Error::InvalidArgument("layer_norm: eps must be positive".into()));
        }
        let src = self.data(x);
        let g = self.data(gamma).to_vec();
        let b = self.data(beta).to_vec();
        let rows = src.len() / d;
        let mut values = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                values[r * d + j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        self.push(
            "layer_norm",
            shape,
            values,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                eps,
            },
        )
    }

    fn masked_axis_check(
        &self,
        op: &'static str,
        x: TensorId,
        axis: usize,
        mask: &[bool],
    ) -> Result<(usize, usize)> {
        let shape = self.shape(x);
        if shape.len() != 2 || axis > 1 {
            return Err(Error::InvalidShape {
                op,
                shape: shape.to_vec(),
                reason: "expected 2-D with axis 0 or 1".into(),
            });
        }
        if mask.len() != shape[axis] {
            return Err(Error::InvalidShape {
                op,
                shape: shape.to_vec(),
                reason: format!("mask of length {} does not fit axis {axis}", mask.len()),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidArgument(format!("{op}: empty mask")));
        }
        Ok((shape[0], shape[1]))
    }

    /// Mean over `axis` of a 2-D tensor counting only unmasked positions;
    /// divides by the mask count, never by the full extent.
    pub fn masked_mean(&mut self, x: TensorId, axis: usize, mask: &[bool]) -> Result<TensorId> {
        let (m, n) = self.masked_axis_check("masked_mean", x, axis, mask)?;
        let count = mask.iter().filter(|&&k| k).count() as f64;
        let src = self.data(x);
        let out_len = if axis == 0 { n } else { m };
        let mut values = vec![0.0; out_len];
        if axis == 0 {
            for i in 0..m {
                if mask[i] {
                    for j in 0..n {
                        values[j] += src[i * n + j];
                    }
                }
            }
        } else {
            for i in 0..m {
                for j in 0..n {
                    if mask[j] {
                        values[i] += src[i * n + j];
                    }
                }
            }
        }
        for v in &mut values {
            *v /= count;
        }
        self.push(
            "masked_mean",
            vec![out_len],
            values,
            Op::MaskedMean {
                x: x.0,
                axis,
                mask: mask.to_vec(),
            },
        )
    }

    /// Coordinate-wise max over `axis` of a 2-D tensor, restricted to
    /// unmasked positions. Ties route the gradient to the first maximum.
    pub fn masked_max(&mut self, x: TensorId, axis: usize, mask: &[bool]) -> Result<TensorId> {
        let (m, n) = self.masked_axis_check("masked_max", x, axis, mask)?;
        let src = self.data(x);
        let out_len = if axis == 0 { n } else { m };
        let mut values = vec![f64::NEG_INFINITY; out_len];
        let mut argmax = vec![0usize; out_len];
        for i in 0..m {
            for j in 0..n {
                let (keep, slot) = if axis == 0 { (mask[i], j) } else { (mask[j], i) };
                if keep && src[i * n + j] > values[slot] {
                    values[slot] = src[i * n + j];
                    argmax[slot] = i * n + j;
                }
            }
        }
        self.push(
            "masked_max",
            vec![out_len],
            values,
            Op::MaskedMax { x: x.0, argmax },
        )
    }

    /// Cross-entropy of a fixed target distribution against `softmax(logits)`,
    /// computed from logits in a single stable step:
    /// `Σ_i target_i (logsumexp(z) − z_i)`.
    pub fn soft_cross_entropy(&mut self, target: &[f64], logits: TensorId) -> Result<TensorId> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 1 || shape[0] != target.len() {
            return Err(Error::ShapeMismatch {
                op: "soft_cross_entropy",
                lhs: vec![target.len()],
                rhs: shape,
            });
        }
        let z = self.data(logits);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss: f64 = target.iter().zip(z).map(|(t, v)| t * (lse - v)).sum();
        self.push(
            "soft_cross_entropy",
            vec![1],
            vec![loss],
            Op::SoftCrossEntropy {
                logits: logits.0,
                target: target.to_vec(),
            },
        )
    }

    /// Inverted dropout: keeps each entry with probability `1 - rate` and
    /// rescales by `1/(1 - rate)`. A rate of 0 is the identity.
    pub fn dropout(&mut self, x: TensorId, rate: f64, rng: &mut ChaCha8Rng) -> Result<TensorId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0,1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.data(x).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let shape = self.shape(x).to_vec();
        let mask_id = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, mask_id)
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients on `requires_grad` leaves
    /// accumulate across calls; [`Tape::zero_grads`] resets them.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("backward on an empty tape".into()));
        }
        if self.data(loss).len() != 1 {
            return Err(Error::InvalidShape {
                op: "backward",
                shape: self.shape(loss).to_vec(),
                reason: "loss must be scalar".into(),
            });
        }

        let mut scratch: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        scratch[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let grad = match scratch[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].tensor.requires_grad() {
                continue;
            }
            self.propagate(i, &grad, &mut scratch)?;
            // Leaves accumulate across backward calls; interior nodes keep
            // the gradient of the most recent call for inspection.
            let node = &mut self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                if node.tensor.requires_grad() {
                    match node.tensor.grad_mut() {
                        Some(existing) => {
                            for (e, g) in existing.iter_mut().zip(&grad) {
                                *e += g;
                            }
                        }
                        slot @ None => *slot = Some(grad),
                    }
                }
            } else {
                *node.tensor.grad_mut() = Some(grad);
            }
        }
        Ok(())
    }

    fn accumulate(scratch: &mut [Option<Vec<f64>>], target: usize, len: usize) -> &mut Vec<f64> {
        scratch[target].get_or_insert_with(|| vec![0.0; len])
    }

    fn propagate(&self, i: usize, grad: &[f64], scratch: &mut [Option<Vec<f64>>]) -> Result<()> {
        let needs = |tape: &Tape, id: usize| tape.nodes[id].tensor.requires_grad();
        match &self.nodes[i].op {
            Op::Leaf => {}

            Op::MatMul { a, b } => {
                let (m, k) = {
                    let s = self.nodes[*a].tensor.shape();
                    (s[0], s[1])
                };
                let n = self.nodes[*b].tensor.shape()[1];
                if needs(self, *a) {
                    let bd = self.nodes[*b].tensor.values();
                    let da = Self::accumulate(scratch, *a, m * k);
                    for r in 0..m {
                        for j in 0..n {
                            let g = grad[r * n + j];
                            for p in 0..k {
                                da[r * k + p] += g * bd[p * n + j];
                            }
                        }
                    }
                }
                if needs(self, *b) {
                    let ad = self.nodes[*a].tensor.values();
                    let db = Self::accumulate(scratch, *b, k * n);
                    for r in 0..m {
                        for p in 0..k {
                            let av = ad[r * k + p];
                            for j in 0..n {
                                db[p * n + j] += av * grad[r * n + j];
                            }
                        }
                    }
                }
            }

            Op::Transpose { x } => {
                if needs(self, *x) {
                    let (n, m) = {
                        let s = self.nodes[i].tensor.shape();
                        (s[0], s[1])
                    };
                    let dx = Self::accumulate(scratch, *x, m * n);
                    for r in 0..n {
                        for c in 0..m {
                            dx[c * n + r] += grad[r * m + c];
                        }
                    }
                }
            }

            Op::Binary { a, b, kind } => {
                let ad = self.nodes[*a].tensor.values();
                let bd = self.nodes[*b].tensor.values();
                let (na, nb) = (ad.len(), bd.len());
                if needs(self, *a) {
                    let da = Self::accumulate(scratch, *a, na);
                    for (g_idx, g) in grad.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add | BinaryKind::Sub => *g,
                            BinaryKind::Mul => g * bd[g_idx % nb],
                            BinaryKind::Div => g / bd[g_idx % nb],
                        };
                        da[g_idx % na] += d;
                    }
                }
                if needs(self, *b) {
                    let db = Self::accumulate(scratch, *b, nb);
                    for (g_idx, g) in grad.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add => *g,
                            BinaryKind::Sub => -g,
                            BinaryKind::Mul => g * ad[g_idx % na],
                            BinaryKind::Div => {
                                let bv = bd[g_idx % nb];
                                -g * ad[g_idx % na] / (bv * bv)
                            }
                        };
                        db[g_idx % nb] += d;
                    }
                }
            }

            Op::Scale { x, factor } => {
                if needs(self, *x) {
                    let dx = Self::accumulate(scratch, *x, grad.len());
                    for (d, g) in dx.iter_mut().zip(grad) {
                        *d += g * factor;
                    }
                }
            }

            Op::AddScalar { x } => {
                if needs(self, *x) {
                    let dx = Self::accumulate(scratch, *x, grad.len());
                    for (d, g) in dx.iter_mut().zip(grad) {
                        *d += g;
                    }
                }
            }

            Op::Unary { x, kind } => {
                if needs(self, *x) {
                    let xv = self.nodes[*x].tensor.values();
                    let yv = self.nodes[i].tensor.values();
                    let dx = Self::accumulate(scratch, *x, xv.len());
                    for (idx, g) in grad.iter().enumerate() {
                        let d = match kind {
                            UnaryKind::Abs => match xv[idx].partial_cmp(&0.0) {
                                Some(std::cmp::Ordering::Greater) => *g,
                                Some(std::cmp::Ordering::Less) => -g,
                                _ => 0.0,
                            },
                            UnaryKind::Tanh => g * (1.0 - yv[idx] * yv[idx]),
                            UnaryKind::Gelu => g * gelu_derivative(xv[idx]),
                            UnaryKind::Sqrt => g / (2.0 * yv[idx]),
                        };
                        dx[idx] += d;
                    }
                }
            }

            Op::Sum { x } => {
                if needs(self, *x) {
                    let len = self.nodes[*x].tensor.numel();
                    let dx = Self::accumulate(scratch, *x, len);
                    for d in dx.iter_mut() {
                        *d += grad[0];
                    }
                }
            }

            Op::Mean { x } => {
                if needs(self, *x) {
                    let len = self.nodes[*x].tensor.numel();
                    let g = grad[0] / len as f64;
                    let dx = Self::accumulate(scratch, *x, len);
                    for d in dx.iter_mut() {
                        *d += g;
                    }
                }
            }

            Op::Concat { parts, axis } => {
                let out_shape = self.nodes[i].tensor.shape().to_vec();
                let (outer, axis_total, inner) = axis_split(&out_shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let p_axis = self.nodes[p].tensor.shape()[*axis];
                    if needs(self, p) {
                        let len = self.nodes[p].tensor.numel();
                        let dp = Self::accumulate(scratch, p, len);
                        for o in 0..outer {
                            for j in 0..p_axis {
                                let src_base = (o * axis_total + offset + j) * inner;
                                let dst_base = (o * p_axis + j) * inner;
                                for t in 0..inner {
                                    dp[dst_base + t] += grad[src_base + t];
                                }
                            }
                        }
                    }
                    offset += p_axis;
                }
            }

            Op::SliceCols { x, start } => {
                if needs(self, *x) {
                    let (m, n) = {
                        let s = self.nodes[*x].tensor.shape();
                        (s[0], s[1])
                    };
                    let w = self.nodes[i].tensor.shape()[1];
                    let dx = Self::accumulate(scratch, *x, m * n);
                    for r in 0..m {
                        for c in 0..w {
                            dx[r * n + start + c] += grad[r * w + c];
                        }
                    }
                }
            }

            Op::Row { x, index } => {
                if needs(self, *x) {
                    let (m, n) = {
                        let s = self.nodes[*x].tensor.shape();
                        (s[0], s[1])
                    };
                    let dx = Self::accumulate(scratch, *x, m * n);
                    for c in 0..n {
                        dx[index * n + c] += grad[c];
                    }
                }
            }

            Op::Reshape { x } => {
                if needs(self, *x) {
                    let dx = Self::accumulate(scratch, *x, grad.len());
                    for (d, g) in dx.iter_mut().zip(grad) {
                        *d += g;
                    }
                }
            }

            Op::EmbedRows { table, ids } => {
                if needs(self, *table) {
                    let (v, d) = {
                        let s = self.nodes[*table].tensor.shape();
                        (s[0], s[1])
                    };
                    let dt = Self::accumulate(scratch, *table, v * d);
                    for (pos, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            dt[id * d + c] += grad[pos * d + c];
                        }
                    }
                }
            }

            Op::Softmax { x, axis } => {
                if needs(self, *x) {
                    let shape = self.nodes[i].tensor.shape().to_vec();
                    let (outer, len, inner) = axis_split(&shape, *axis);
                    let y = self.nodes[i].tensor.values();
                    let dx = Self::accumulate(scratch, *x, y.len());
                    for o in 0..outer {
                        for t in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + t;
                            let dot: f64 = (0..len).map(|j| grad[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                dx[at(j)] += y[at(j)] * (grad[at(j)] - dot);
                            }
                        }
                    }
                }
            }

            Op::MaskedSoftmaxRows { x, mask } => {
                if needs(self, *x) {
                    let (m, n) = {
                        let s = self.nodes[i].tensor.shape();
                        (s[0], s[1])
                    };
                    let y = self.nodes[i].tensor.values();
                    let dx = Self::accumulate(scratch, *x, m * n);
                    for r in 0..m {
                        let base = r * n;
                        let dot: f64 = (0..n)
                            .filter(|&j| mask[j])
                            .map(|j| grad[base + j] * y[base + j])
                            .sum();
                        for j in 0..n {
                            if mask[j] {
                                dx[base + j] += y[base + j] * (grad[base + j] - dot);
                            }
                        }
                    }
                }
            }

            Op::LayerNorm { x, gamma, beta, eps } => {
                let d = *self.nodes[i].tensor.shape().last().expect("nonempty");
                let xv = self.nodes[*x].tensor.values();
                let gv = self.nodes[*gamma].tensor.values();
                let rows = xv.len() / d;
                // Per-row statistics are recomputed; cheaper than storing them.
                for r in 0..rows {
                    let row = &xv[r * d..(r + 1) * d];
                    let g_row = &grad[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
                    if needs(self, *gamma) {
                        let dg = Self::accumulate(scratch, *gamma, d);
                        for j in 0..d {
                            dg[j] += g_row[j] * xhat[j];
                        }
                    }
                    if needs(self, *beta) {
                        let db = Self::accumulate(scratch, *beta, d);
                        for j in 0..d {
                            db[j] += g_row[j];
                        }
                    }
                    if needs(self, *x) {
                        let dxhat: Vec<f64> = (0..d).map(|j| g_row[j] * gv[j]).collect();
                        let sum_dxhat: f64 = dxhat.iter().sum();
                        let sum_dxhat_xhat: f64 =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        let df = d as f64;
                        let dx = Self::accumulate(scratch, *x, xv.len());
                        for j in 0..d {
                            dx[r * d + j] += inv_std / df
                                * (df * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                        }
                    }
                }
            }

            Op::MaskedMean { x, axis, mask } => {
                if needs(self, *x) {
                    let (m, n) = {
                        let s = self.nodes[*x].tensor.shape();
                        (s[0], s[1])
                    };
                    let count = mask.iter().filter(|&&k| k).count() as f64;
                    let dx = Self::accumulate(scratch, *x, m * n);
                    for r in 0..m {
                        for c in 0..n {
                            let (keep, slot) = if *axis == 0 { (mask[r], c) } else { (mask[c], r) };
                            if keep {
                                dx[r * n + c] += grad[slot] / count;
                            }
                        }
                    }
                }
            }

            Op::MaskedMax { x, argmax, .. } => {
                if needs(self, *x) {
                    let len = self.nodes[*x].tensor.numel();
                    let dx = Self::accumulate(scratch, *x, len);
                    for (slot, &flat) in argmax.iter().enumerate() {
                        dx[flat] += grad[slot];
                    }
                }
            }

            Op::SoftCrossEntropy { logits, target } => {
                if needs(self, *logits) {
                    let z = self.nodes[*logits].tensor.values();
                    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                    let total: f64 = exps.iter().sum();
                    let t_sum: f64 = target.iter().sum();
                    let dz = Self::accumulate(scratch, *logits, z.len());
                    for j in 0..z.len() {
                        dz[j] += grad[0] * (t_sum * exps[j] / total - target[j]);
                    }
                }
            }
        }
        Ok(())
    }
}
