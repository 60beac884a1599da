//! The computation tape and its forward operations.

use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

/// Provenance record: which operation produced a node and from which parents.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    /// Source node. `param` is the slot of the bound parameter, if any.
    Leaf {
        param: Option<usize>,
    },
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    /// Add a `[d]` vector to every row of an `[n, d]` matrix.
    AddRowVec(TensorId, TensorId),
    Scale(TensorId, f64),
    Matmul(TensorId, TensorId),
    Transpose(TensorId),
    Gelu(TensorId),
    LayerNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
    },
    SoftmaxLast {
        x: TensorId,
    },
    /// Per-row log-softmax evaluated at one vocabulary index per row.
    GatherLogProb {
        logits: TensorId,
        ids: Vec<usize>,
    },
    /// Gather rows of an embedding table.
    EmbedRows {
        table: TensorId,
        ids: Vec<usize>,
    },
    SliceRows {
        x: TensorId,
        start: usize,
    },
    SliceCols {
        x: TensorId,
        start: usize,
    },
    ConcatCols(Vec<TensorId>),
    /// Stack single-element tensors into a `[k]` vector.
    StackScalars(Vec<TensorId>),
    Reshape(TensorId),
    PickIndex {
        x: TensorId,
        index: usize,
    },
    Log(TensorId),
    Mse(TensorId, TensorId),
    MeanAll(TensorId),
    SumAll(TensorId),
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) grad: Option<Vec<f64>>,
    pub(crate) op: Op,
    pub(crate) needs_grad: bool,
}

/// Append-only computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn dims2(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

const GELU_C: f64 = 0.044715;

fn gelu_scalar(x: f64) -> f64 {
    let u = (2.0 / std::f64::consts::PI).sqrt() * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let u = k * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * k * (1.0 + 3.0 * GELU_C * x * x)
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    /// Gradient accumulated on a node by [`Graph::backward`], if any.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        needs_grad: bool,
    ) -> TensorId {
        debug_assert_eq!(numel(&shape), data.len());
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            op,
            needs_grad,
        });
        id
    }

    fn check_len(shape: &[usize], data: &[f64]) -> Result<()> {
        if numel(shape) != data.len() {
            return Err(Error::Dim(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(())
    }

    /// Gradient-enabled source node not tied to any parameter.
    pub fn input(&mut self, shape: &[usize], data: &[f64]) -> Result<TensorId> {
        Self::check_len(shape, data)?;
        Ok(self.push(
            shape.to_vec(),
            data.to_vec(),
            Op::Leaf { param: None },
            true,
        ))
    }

    /// Source node that never receives gradient.
    pub fn constant(&mut self, shape: &[usize], data: &[f64]) -> Result<TensorId> {
        Self::check_len(shape, data)?;
        Ok(self.push(
            shape.to_vec(),
            data.to_vec(),
            Op::Leaf { param: None },
            false,
        ))
    }

    /// Gradient-enabled source node bound to parameter slot `slot`.
    pub fn param(&mut self, shape: &[usize], data: &[f64], slot: usize) -> Result<TensorId> {
        Self::check_len(shape, data)?;
        Ok(self.push(
            shape.to_vec(),
            data.to_vec(),
            Op::Leaf { param: Some(slot) },
            true,
        ))
    }

    pub fn scalar(&mut self, value: f64) -> TensorId {
        self.push(vec![1], vec![value], Op::Leaf { param: None }, false)
    }

    fn needs(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    fn same_shape(&self, a: TensorId, b: TensorId, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "add")?;
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, b]);
        Ok(self.push(shape, data, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "sub")?;
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, b]);
        Ok(self.push(shape, data, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "mul")?;
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, b]);
        Ok(self.push(shape, data, Op::Mul(a, b), ng))
    }

    /// `x + v` where `v` is broadcast over the rows of `x`.
    pub fn add_row_vec(&mut self, x: TensorId, v: TensorId) -> Result<TensorId> {
        let (rows, cols) = dims2(self.shape(x)).ok_or_else(|| {
            Error::Dim(format!(
                "add_row_vec: x must be 2-d, got {:?}",
                self.shape(x)
            ))
        })?;
        if self.shape(v) != [cols] {
            return Err(Error::Dim(format!(
                "add_row_vec: vector shape {:?} does not match row width {cols}",
                self.shape(v)
            )));
        }
        let mut data = self.value(x).to_vec();
        let vv = self.value(v).to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += vv[c];
            }
        }
        let ng = self.needs(&[x, v]);
        Ok(self.push(vec![rows, cols], data, Op::AddRowVec(x, v), ng))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.value(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a]);
        self.push(shape, data, Op::Scale(a, c), ng)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = dims2(self.shape(a)).ok_or_else(|| {
            Error::Dim(format!("matmul: lhs must be 2-d, got {:?}", self.shape(a)))
        })?;
        let (k2, n) = dims2(self.shape(b)).ok_or_else(|| {
            Error::Dim(format!("matmul: rhs must be 2-d, got {:?}", self.shape(b)))
        })?;
        if k != k2 {
            return Err(Error::Dim(format!(
                "matmul: inner dimensions disagree, lhs {:?} vs rhs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = matmul_raw(self.value(a), self.value(b), m, k, n);
        let ng = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], data, Op::Matmul(a, b), ng))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = dims2(self.shape(a))
            .ok_or_else(|| Error::Dim(format!("transpose: need 2-d, got {:?}", self.shape(a))))?;
        let src = self.value(a);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.needs(&[a]);
        Ok(self.push(vec![c, r], data, Op::Transpose(a), ng))
    }

    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.value(a).iter().map(|&x| gelu_scalar(x)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a]);
        self.push(shape, data, Op::Gelu(a), ng)
    }

    /// Row-wise layer normalization over the last dimension of a 2-d tensor.
    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId) -> Result<TensorId> {
        let (rows, cols) = dims2(self.shape(x))
            .ok_or_else(|| Error::Dim(format!("layer_norm: need 2-d, got {:?}", self.shape(x))))?;
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return Err(Error::Dim(format!(
                "layer_norm: gamma {:?} / beta {:?} must both be [{cols}]",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for c in 0..cols {
                data[r * cols + c] = (row[c] - mean) * inv * gv[c] + bv[c];
            }
        }
        let ng = self.needs(&[x, gamma, beta]);
        Ok(self.push(vec![rows, cols], data, Op::LayerNorm { x, gamma, beta }, ng))
    }

    /// Softmax over the last dimension. Positions where `masked_out` is
    /// `true` receive exactly zero probability; a fully masked row is an
    /// error.
    pub fn softmax_last(&mut self, x: TensorId, masked_out: Option<&[bool]>) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let cols = *shape
            .last()
            .ok_or_else(|| Error::Rank("softmax_last: zero-rank input".into()))?;
        let rows = numel(&shape) / cols;
        if let Some(m) = masked_out {
            if m.len() != numel(&shape) {
                return Err(Error::Dim(format!(
                    "softmax_last: mask length {} does not match {} elements",
                    m.len(),
                    numel(&shape)
                )));
            }
        }
        let xv = self.value(x);
        let mut data = vec![0.0; xv.len()];
        for r in 0..rows {
            let base = r * cols;
            let visible = |c: usize| masked_out.is_none_or(|m| !m[base + c]);
            let mut max = f64::NEG_INFINITY;
            for c in 0..cols {
                if visible(c) {
                    max = max.max(xv[base + c]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::DegenerateMask(format!(
                    "softmax row {r} is fully masked"
                )));
            }
            let mut sum = 0.0;
            for c in 0..cols {
                if visible(c) {
                    let e = (xv[base + c] - max).exp();
                    data[base + c] = e;
                    sum += e;
                }
            }
            for c in 0..cols {
                data[base + c] /= sum;
            }
        }
        let ng = self.needs(&[x]);
        Ok(self.push(shape, data, Op::SoftmaxLast { x }, ng))
    }

    /// For each row `r` of `[t, V]` logits, returns `log softmax(row)[ids[r]]`.
    pub fn gather_logprob(&mut self, logits: TensorId, ids: &[usize]) -> Result<TensorId> {
        let (rows, vocab) = dims2(self.shape(logits)).ok_or_else(|| {
            Error::Dim(format!(
                "gather_logprob: need 2-d logits, got {:?}",
                self.shape(logits)
            ))
        })?;
        if ids.len() != rows {
            return Err(Error::Alignment(format!(
                "gather_logprob: {} logits rows vs {} token ids",
                rows,
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Vocab(format!(
                "token id {bad} out of range for vocab {vocab}"
            )));
        }
        let xv = self.value(logits);
        let mut data = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv[r * vocab..(r + 1) * vocab];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            data[r] = row[ids[r]] - lse;
        }
        let ng = self.needs(&[logits]);
        Ok(self.push(
            vec![rows],
            data,
            Op::GatherLogProb {
                logits,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Gather rows `ids` from a `[V, d]` table into `[t, d]`.
    pub fn embed_rows(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let (vocab, dim) = dims2(self.shape(table)).ok_or_else(|| {
            Error::Dim(format!(
                "embed_rows: need 2-d table, got {:?}",
                self.shape(table)
            ))
        })?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Vocab(format!(
                "token id {bad} out of range for vocab {vocab}"
            )));
        }
        let tv = self.value(table);
        let mut data = vec![0.0; ids.len() * dim];
        for (r, &id) in ids.iter().enumerate() {
            data[r * dim..(r + 1) * dim].copy_from_slice(&tv[id * dim..(id + 1) * dim]);
        }
        let ng = self.needs(&[table]);
        Ok(self.push(
            vec![ids.len(), dim],
            data,
            Op::EmbedRows {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn slice_rows(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (rows, cols) = dims2(self.shape(x))
            .ok_or_else(|| Error::Dim(format!("slice_rows: need 2-d, got {:?}", self.shape(x))))?;
        if start + len > rows {
            return Err(Error::Dim(format!(
                "slice_rows: rows {start}..{} out of range for {rows}",
                start + len
            )));
        }
        let data = self.value(x)[start * cols..(start + len) * cols].to_vec();
        let ng = self.needs(&[x]);
        Ok(self.push(vec![len, cols], data, Op::SliceRows { x, start }, ng))
    }

    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (rows, cols) = dims2(self.shape(x))
            .ok_or_else(|| Error::Dim(format!("slice_cols: need 2-d, got {:?}", self.shape(x))))?;
        if start + len > cols {
            return Err(Error::Dim(format!(
                "slice_cols: cols {start}..{} out of range for {cols}",
                start + len
            )));
        }
        let xv = self.value(x);
        let mut data = vec![0.0; rows * len];
        for r in 0..rows {
            data[r * len..(r + 1) * len]
                .copy_from_slice(&xv[r * cols + start..r * cols + start + len]);
        }
        let ng = self.needs(&[x]);
        Ok(self.push(vec![rows, len], data, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Dim("concat_cols: no parts".into()));
        }
        let rows = dims2(self.shape(parts[0]))
            .ok_or_else(|| Error::Dim("concat_cols: parts must be 2-d".into()))?
            .0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = dims2(self.shape(p))
                .ok_or_else(|| Error::Dim("concat_cols: parts must be 2-d".into()))?;
            if r != rows {
                return Err(Error::Dim(format!(
                    "concat_cols: row counts differ ({rows} vs {r})"
                )));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&pv[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let ng = self.needs(parts);
        Ok(self.push(vec![rows, total], data, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Stack `k` single-element tensors into a `[k]` vector.
    pub fn stack_scalars(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Dim("stack_scalars: no parts".into()));
        }
        let mut data = Vec::with_capacity(parts.len());
        for &p in parts {
            if numel(self.shape(p)) != 1 {
                return Err(Error::Rank(format!(
                    "stack_scalars: part has shape {:?}, expected a scalar",
                    self.shape(p)
                )));
            }
            data.push(self.value(p)[0]);
        }
        let ng = self.needs(parts);
        Ok(self.push(
            vec![parts.len()],
            data,
            Op::StackScalars(parts.to_vec()),
            ng,
        ))
    }

    pub fn reshape(&mut self, x: TensorId, new_shape: &[usize]) -> Result<TensorId> {
        if numel(new_shape) != numel(self.shape(x)) {
            return Err(Error::Dim(format!(
                "reshape: {:?} incompatible with {:?}",
                self.shape(x),
                new_shape
            )));
        }
        let data = self.value(x).to_vec();
        let ng = self.needs(&[x]);
        Ok(self.push(new_shape.to_vec(), data, Op::Reshape(x), ng))
    }

    pub fn pick_index(&mut self, x: TensorId, index: usize) -> Result<TensorId> {
        if index >= numel(self.shape(x)) {
            return Err(Error::Label(format!(
                "pick_index: index {index} out of range for shape {:?}",
                self.shape(x)
            )));
        }
        let data = vec![self.value(x)[index]];
        let ng = self.needs(&[x]);
        Ok(self.push(vec![1], data, Op::PickIndex { x, index }, ng))
    }

    pub fn log(&mut self, x: TensorId) -> Result<TensorId> {
        if self.value(x).iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::Numeric(
                "log of non-positive or non-finite value".into(),
            ));
        }
        let data: Vec<f64> = self.value(x).iter().map(|v| v.ln()).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(&[x]);
        Ok(self.push(shape, data, Op::Log(x), ng))
    }

    /// Mean over all elements of `(a - b)^2`.
    pub fn mse(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "mse")?;
        let n = self.value(a).len() as f64;
        let s: f64 = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let ng = self.needs(&[a, b]);
        Ok(self.push(vec![1], vec![s / n], Op::Mse(a, b), ng))
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let n = self.value(x).len() as f64;
        let s: f64 = self.value(x).iter().sum();
        let ng = self.needs(&[x]);
        self.push(vec![1], vec![s / n], Op::MeanAll(x), ng)
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.value(x).iter().sum();
        let ng = self.needs(&[x]);
        self.push(vec![1], vec![s], Op::SumAll(x), ng)
    }
}

/// Row-major `[m,k] x [k,n]` matrix product.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}
