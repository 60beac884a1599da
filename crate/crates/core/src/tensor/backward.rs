//! Reverse-mode gradient propagation over the tape.

use crate::error::{Error, Result};

use super::graph::{gelu_grad_scalar, matmul_raw, numel, Graph, Op, TensorId, LAYER_NORM_EPS};

impl Graph {
    /// Backpropagate from a single-element `loss` node. Gradients of every
    /// grad-enabled node reachable from `loss` are accumulated into the
    /// node's `grad` slot; calling `backward` again without clearing adds on
    /// top of the previous gradients.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if numel(self.shape(loss)) != 1 {
            return Err(Error::Rank(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        // Fresh adjoint buffers per call so repeated calls accumulate
        // correctly into node.grad.
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            self.propagate(id, &g, &mut adj);
            let node = &mut self.nodes[id];
            let slot = node.grad.get_or_insert_with(|| vec![0.0; node.data.len()]);
            for (s, v) in slot.iter_mut().zip(&g) {
                *s += v;
            }
        }
        Ok(())
    }

    /// Clear accumulated gradients on every node.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn accumulate(&self, adj: &mut [Option<Vec<f64>>], target: TensorId, contribution: &[f64]) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        let slot = adj[target.0].get_or_insert_with(|| vec![0.0; self.nodes[target.0].data.len()]);
        for (s, v) in slot.iter_mut().zip(contribution) {
            *s += v;
        }
    }

    fn propagate(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        // Clone: ids and masks are small; node data is borrowed immutably.
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                self.accumulate(adj, a, g);
                self.accumulate(adj, b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.accumulate(adj, b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.iter().zip(self.value(b)).map(|(v, y)| v * y).collect();
                let db: Vec<f64> = g.iter().zip(self.value(a)).map(|(v, x)| v * x).collect();
                self.accumulate(adj, a, &da);
                self.accumulate(adj, b, &db);
            }
            Op::AddRowVec(x, v) => {
                self.accumulate(adj, x, g);
                let cols = self.shape(v)[0];
                let rows = g.len() / cols;
                let mut dv = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        dv[c] += g[r * cols + c];
                    }
                }
                self.accumulate(adj, v, &dv);
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.accumulate(adj, a, &da);
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                // dA = G . B^T ; dB = A^T . G
                let bt = transpose_raw(self.value(b), k, n);
                let da = matmul_raw(g, &bt, m, n, k);
                self.accumulate(adj, a, &da);
                let at = transpose_raw(self.value(a), m, k);
                let db = matmul_raw(&at, g, k, m, n);
                self.accumulate(adj, b, &db);
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
                let da = transpose_raw(g, c, r);
                self.accumulate(adj, a, &da);
            }
            Op::Gelu(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.value(a))
                    .map(|(v, &x)| v * gelu_grad_scalar(x))
                    .collect();
                self.accumulate(adj, a, &da);
            }
            Op::LayerNorm { x, gamma, beta } => {
                let (rows, cols) = (self.shape(x)[0], self.shape(x)[1]);
                let xv = self.value(x);
                let gv = self.value(gamma);
                let mut dx = vec![0.0; rows * cols];
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                for r in 0..rows {
                    let row = &xv[r * cols..(r + 1) * cols];
                    let grow = &g[r * cols..(r + 1) * cols];
                    let mean = row.iter().sum::<f64>() / cols as f64;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    let dxhat: Vec<f64> = grow.iter().zip(gv).map(|(gr, ga)| gr * ga).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / cols as f64;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / cols as f64;
                    for c in 0..cols {
                        dgamma[c] += grow[c] * xhat[c];
                        dbeta[c] += grow[c];
                        dx[r * cols + c] =
                            inv * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                    }
                }
                self.accumulate(adj, x, &dx);
                self.accumulate(adj, gamma, &dgamma);
                self.accumulate(adj, beta, &dbeta);
            }
            Op::SoftmaxLast { x } => {
                // Masked positions hold y = 0, so the standard Jacobian
                // already routes them zero gradient.
                let y = &self.nodes[id].data;
                let cols = *self.shape(x).last().unwrap();
                let rows = y.len() / cols;
                let mut dx = vec![0.0; y.len()];
                for r in 0..rows {
                    let base = r * cols;
                    let dot: f64 = (0..cols).map(|c| g[base + c] * y[base + c]).sum();
                    for c in 0..cols {
                        dx[base + c] = y[base + c] * (g[base + c] - dot);
                    }
                }
                self.accumulate(adj, x, &dx);
            }
            Op::GatherLogProb { logits, ids } => {
                let (rows, vocab) = (self.shape(logits)[0], self.shape(logits)[1]);
                let xv = self.value(logits);
                let mut dx = vec![0.0; rows * vocab];
                for r in 0..rows {
                    let row = &xv[r * vocab..(r + 1) * vocab];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    let gr = g[r];
                    for c in 0..vocab {
                        let p = (row[c] - max).exp() / sum;
                        dx[r * vocab + c] = gr * (if c == ids[r] { 1.0 } else { 0.0 } - p);
                    }
                }
                self.accumulate(adj, logits, &dx);
            }
            Op::EmbedRows { table, ids } => {
                let dim = self.shape(table)[1];
                let mut dt = vec![0.0; self.value(table).len()];
                for (r, &tok) in ids.iter().enumerate() {
                    for c in 0..dim {
                        dt[tok * dim + c] += g[r * dim + c];
                    }
                }
                self.accumulate(adj, table, &dt);
            }
            Op::SliceRows { x, start } => {
                let cols = self.shape(x)[1];
                let mut dx = vec![0.0; self.value(x).len()];
                dx[start * cols..start * cols + g.len()].copy_from_slice(g);
                self.accumulate(adj, x, &dx);
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = (self.shape(x)[0], self.shape(x)[1]);
                let width = self.nodes[id].shape[1];
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..width {
                        dx[r * cols + start + c] = g[r * width + c];
                    }
                }
                self.accumulate(adj, x, &dx);
            }
            Op::ConcatCols(parts) => {
                let total = self.nodes[id].shape[1];
                let rows = self.nodes[id].shape[0];
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(p)[1];
                    let mut dp = vec![0.0; rows * w];
                    for r in 0..rows {
                        dp[r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    self.accumulate(adj, p, &dp);
                    offset += w;
                }
            }
            Op::StackScalars(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    self.accumulate(adj, *p, &[g[i]]);
                }
            }
            Op::Reshape(x) => {
                self.accumulate(adj, x, g);
            }
            Op::PickIndex { x, index } => {
                let mut dx = vec![0.0; self.value(x).len()];
                dx[index] = g[0];
                self.accumulate(adj, x, &dx);
            }
            Op::Log(x) => {
                let dx: Vec<f64> = g.iter().zip(self.value(x)).map(|(v, y)| v / y).collect();
                self.accumulate(adj, x, &dx);
            }
            Op::Mse(a, b) => {
                let n = self.value(a).len() as f64;
                let s = 2.0 * g[0] / n;
                let da: Vec<f64> = self
                    .value(a)
                    .iter()
                    .zip(self.value(b))
                    .map(|(x, y)| s * (x - y))
                    .collect();
                let db: Vec<f64> = da.iter().map(|v| -v).collect();
                self.accumulate(adj, a, &da);
                self.accumulate(adj, b, &db);
            }
            Op::MeanAll(x) => {
                let n = self.value(x).len() as f64;
                let dx = vec![g[0] / n; self.value(x).len()];
                self.accumulate(adj, x, &dx);
            }
            Op::SumAll(x) => {
                let dx = vec![g[0]; self.value(x).len()];
                self.accumulate(adj, x, &dx);
            }
        }
    }

    /// Gradients of parameter-bound leaves, as `(slot, grad)` pairs in tape
    /// order.
    pub fn param_grads(&self) -> Vec<(usize, Vec<f64>)> {
        self.nodes
            .iter()
            .filter_map(|n| match (&n.op, &n.grad) {
                (Op::Leaf { param: Some(slot) }, Some(g)) => Some((*slot, g.clone())),
                _ => None,
            })
            .collect()
    }
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}
