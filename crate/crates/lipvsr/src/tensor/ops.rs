//! Forward primitives and their backward rules.
//!
//! The set is exactly what the networks in this crate need: elementwise
//! arithmetic and activations, matrix multiply, layer normalization,
//! softmax variants, gathers, reductions, shape surgery, and 1D/2D/3D
//! convolution. Broadcasting is limited to row-vector biases.

use super::{BackwardArgs, Tensor};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Raw row-major matrix multiply used by forward and backward paths.
/// Loop order (i, p, j) keeps the inner loop on contiguous rows.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
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

/// Iteration geometry for reducing/normalizing along one axis:
/// shape = outer x axis_len x inner, element (o, a, i) at
/// (o * axis_len + a) * inner + i.
fn axis_geometry(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, axis_len, inner)
}

impl Tensor {
    // ── Elementwise arithmetic ─────────────────────────────────────────

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        same_shape("add", self, rhs)?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|args: &BackwardArgs| {
                vec![Some(args.out_grad.to_vec()), Some(args.out_grad.to_vec())]
            }),
        )
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, rhs)?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(a, b)| a - b)
            .collect();
        Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|args: &BackwardArgs| {
                vec![
                    Some(args.out_grad.to_vec()),
                    Some(args.out_grad.iter().map(|g| -g).collect()),
                ]
            }),
        )
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, rhs)?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(a, b)| a * b)
            .collect();
        let lhs_c = self.clone();
        let rhs_c = rhs.clone();
        Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |args: &BackwardArgs| {
                let a = lhs_c.data();
                let b = rhs_c.data();
                let da = args.out_grad.iter().zip(b.iter()).map(|(g, v)| g * v);
                let db = args.out_grad.iter().zip(a.iter()).map(|(g, v)| g * v);
                vec![Some(da.collect()), Some(db.collect())]
            }),
        )
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                vec![Some(args.out_grad.iter().map(|g| g * factor).collect())]
            }),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v + c).collect();
        Tensor::from_op(
            "add_scalar",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|args: &BackwardArgs| vec![Some(args.out_grad.to_vec())]),
        )
    }

    /// Broadcast add of a vector over the last axis: out[.., j] = a[.., j] + v[j].
    pub fn add_rowvec(&self, v: &Tensor) -> Result<Tensor> {
        let cols = *self.shape().last().unwrap_or(&0);
        if v.shape() != [cols] {
            return Err(Error::ShapeMismatch {
                op: "add_rowvec",
                lhs: self.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let vd = v.data_vec();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, a)| a + vd[i % cols])
            .collect();
        Tensor::from_op(
            "add_rowvec",
            self.shape().to_vec(),
            data,
            vec![self.clone(), v.clone()],
            Box::new(move |args: &BackwardArgs| {
                let mut dv = vec![0.0; cols];
                for (i, g) in args.out_grad.iter().enumerate() {
                    dv[i % cols] += g;
                }
                vec![Some(args.out_grad.to_vec()), Some(dv)]
            }),
        )
    }

    /// Broadcast multiply by a vector over the last axis.
    pub fn mul_rowvec(&self, v: &Tensor) -> Result<Tensor> {
        let cols = *self.shape().last().unwrap_or(&0);
        if v.shape() != [cols] {
            return Err(Error::ShapeMismatch {
                op: "mul_rowvec",
                lhs: self.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let vd = v.data_vec();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, a)| a * vd[i % cols])
            .collect();
        let lhs = self.clone();
        Tensor::from_op(
            "mul_rowvec",
            self.shape().to_vec(),
            data,
            vec![self.clone(), v.clone()],
            Box::new(move |args: &BackwardArgs| {
                let a = lhs.data();
                let mut dv = vec![0.0; cols];
                let mut da = vec![0.0; a.len()];
                for (i, g) in args.out_grad.iter().enumerate() {
                    da[i] = g * vd[i % cols];
                    dv[i % cols] += g * a[i];
                }
                vec![Some(da), Some(dv)]
            }),
        )
    }

    // ── Activations ────────────────────────────────────────────────────

    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v.max(0.0)).collect();
        let x = self.clone();
        Tensor::from_op(
            "relu",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                let xd = x.data();
                vec![Some(
                    args.out_grad
                        .iter()
                        .zip(xd.iter())
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| sigmoid(*v)).collect();
        Tensor::from_op(
            "sigmoid",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|args: &BackwardArgs| {
                vec![Some(
                    args.out_grad
                        .iter()
                        .zip(args.out_data)
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect(),
                )]
            }),
        )
    }

    pub fn tanh(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| v.tanh()).collect();
        Tensor::from_op(
            "tanh",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|args: &BackwardArgs| {
                vec![Some(
                    args.out_grad
                        .iter()
                        .zip(args.out_data)
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect(),
                )]
            }),
        )
    }

    /// x * sigmoid(x).
    pub fn swish(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| v * sigmoid(*v)).collect();
        let x = self.clone();
        Tensor::from_op(
            "swish",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                let xd = x.data();
                vec![Some(
                    args.out_grad
                        .iter()
                        .zip(xd.iter())
                        .map(|(g, v)| {
                            let s = sigmoid(*v);
                            g * (s + v * s * (1.0 - s))
                        })
                        .collect(),
                )]
            }),
        )
    }

    pub fn exp(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| v.exp()).collect();
        Tensor::from_op(
            "exp",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|args: &BackwardArgs| {
                vec![Some(
                    args.out_grad
                        .iter()
                        .zip(args.out_data)
                        .map(|(g, y)| g * y)
                        .collect(),
                )]
            }),
        )
    }

    pub fn log(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| v.ln()).collect();
        let x = self.clone();
        Tensor::from_op(
            "log",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                let xd = x.data();
                vec![Some(
                    args.out_grad
                        .iter()
                        .zip(xd.iter())
                        .map(|(g, v)| g / v)
                        .collect(),
                )]
            }),
        )
    }

    // ── Linear algebra ─────────────────────────────────────────────────

    /// 2-D matrix multiply: [m, k] x [k, n] -> [m, n].
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a_shape, b_shape) = (self.shape(), rhs.shape());
        if a_shape.len() != 2 || b_shape.len() != 2 || a_shape[1] != b_shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a_shape.to_vec(),
                rhs: b_shape.to_vec(),
            });
        }
        let (m, k, n) = (a_shape[0], a_shape[1], b_shape[1]);
        let data = matmul_raw(&self.data(), &rhs.data(), m, k, n);
        let a = self.clone();
        let b = rhs.clone();
        Tensor::from_op(
            "matmul",
            vec![m, n],
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |args: &BackwardArgs| {
                let ad = a.data();
                let bd = b.data();
                // dA = dC . B^T ; dB = A^T . dC
                let bt = transpose_raw(&bd, k, n);
                let da = matmul_raw(args.out_grad, &bt, m, n, k);
                let at = transpose_raw(&ad, m, k);
                let db = matmul_raw(&at, args.out_grad, k, m, n);
                vec![Some(da), Some(db)]
            }),
        )
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        let (r, c) = (s[0], s[1]);
        let data = transpose_raw(&self.data(), r, c);
        Tensor::from_op(
            "transpose",
            vec![c, r],
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                vec![Some(transpose_raw(args.out_grad, c, r))]
            }),
        )
    }

    // ── Normalization and softmax ──────────────────────────────────────

    /// Normalize over the last axis: (x - mean) / sqrt(var + eps),
    /// biased variance, no affine part.
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor> {
        let cols = *self.shape().last().ok_or(Error::ShapeMismatch {
            op: "layer_norm",
            lhs: vec![],
            rhs: vec![],
        })?;
        let rows = self.numel() / cols;
        let xd = self.data_vec();
        let mut data = vec![0.0; xd.len()];
        let mut sigmas = vec![0.0; rows];
        for r in 0..rows {
            let x = &xd[r * cols..(r + 1) * cols];
            let mean = x.iter().sum::<f64>() / cols as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let sigma = (var + eps).sqrt();
            sigmas[r] = sigma;
            for (o, v) in data[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *o = (v - mean) / sigma;
            }
        }
        Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                let mut dx = vec![0.0; args.out_grad.len()];
                for r in 0..rows {
                    let g = &args.out_grad[r * cols..(r + 1) * cols];
                    let y = &args.out_data[r * cols..(r + 1) * cols];
                    let g_mean = g.iter().sum::<f64>() / cols as f64;
                    let gy_mean = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                    for ((d, gi), yi) in dx[r * cols..(r + 1) * cols].iter_mut().zip(g).zip(y) {
                        *d = (gi - g_mean - yi * gy_mean) / sigmas[r];
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Softmax along `axis` with per-slice max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        self.softmax_impl(axis, false)
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        self.softmax_impl(axis, true)
    }

    fn softmax_impl(&self, axis: usize, log: bool) -> Result<Tensor> {
        if axis >= self.shape().len() {
            return Err(Error::contract(format!(
                "softmax axis {axis} out of range for shape {:?}",
                self.shape()
            )));
        }
        if !self.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                op: if log { "log_softmax" } else { "softmax" },
            });
        }
        let (outer, len, inner) = axis_geometry(self.shape(), axis);
        let xd = self.data_vec();
        let mut data = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| xd[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = (0..len).map(|a| (xd[idx(a)] - max).exp()).sum();
                if log {
                    let lse = max + sum.ln();
                    for a in 0..len {
                        data[idx(a)] = xd[idx(a)] - lse;
                    }
                } else {
                    for a in 0..len {
                        data[idx(a)] = (xd[idx(a)] - max).exp() / sum;
                    }
                }
            }
        }
        Tensor::from_op(
            if log { "log_softmax" } else { "softmax" },
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                let mut dx = vec![0.0; args.out_grad.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let g_sum: f64 = if log {
                            (0..len).map(|a| args.out_grad[idx(a)]).sum()
                        } else {
                            (0..len)
                                .map(|a| args.out_grad[idx(a)] * args.out_data[idx(a)])
                                .sum()
                        };
                        for a in 0..len {
                            let j = idx(a);
                            dx[j] = if log {
                                args.out_grad[j] - args.out_data[j].exp() * g_sum
                            } else {
                                args.out_data[j] * (args.out_grad[j] - g_sum)
                            };
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Row-wise causal softmax for stacked attention heads.
    ///
    /// Input is [heads * t, t]; row r belongs to query position r % t and
    /// normalizes over key columns 0..=that position. Forbidden columns
    /// get exact zeros, so future positions receive exactly zero gradient.
    pub fn softmax_causal(&self, t: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || s[1] != t || s[0] % t != 0 {
            return Err(Error::ShapeMismatch {
                op: "softmax_causal",
                lhs: s.to_vec(),
                rhs: vec![t, t],
            });
        }
        let rows = s[0];
        let xd = self.data_vec();
        let mut data = vec![0.0; xd.len()];
        for r in 0..rows {
            let q = r % t;
            let row = &xd[r * t..r * t + q + 1];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for (c, v) in row.iter().enumerate() {
                data[r * t + c] = (v - max).exp() / sum;
            }
        }
        Tensor::from_op(
            "softmax_causal",
            s.to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                let mut dx = vec![0.0; args.out_grad.len()];
                for r in 0..rows {
                    let q = r % t;
                    let g = &args.out_grad[r * t..r * t + q + 1];
                    let y = &args.out_data[r * t..r * t + q + 1];
                    let g_sum: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    for c in 0..=q {
                        dx[r * t + c] = y[c] * (g[c] - g_sum);
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Per-row log-sum-exp over all columns except `banned`. Output shape
    /// is [rows]. Used to normalize language-model logits with the blank
    /// column excluded from the probability mass.
    pub fn lse_excluding(&self, banned: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || banned >= s[1] {
            return Err(Error::contract(format!(
                "lse_excluding: bad column {banned} for shape {s:?}"
            )));
        }
        let (rows, cols) = (s[0], s[1]);
        let xd = self.data_vec();
        let mut data = vec![0.0; rows];
        for r in 0..rows {
            let row = &xd[r * cols..(r + 1) * cols];
            let max = row
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != banned)
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != banned)
                .map(|(_, v)| (*v - max).exp())
                .sum();
            data[r] = max + sum.ln();
        }
        let x = self.clone();
        Tensor::from_op(
            "lse_excluding",
            vec![rows],
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                let xd = x.data();
                let mut dx = vec![0.0; xd.len()];
                for r in 0..rows {
                    for c in 0..cols {
                        if c == banned {
                            continue;
                        }
                        dx[r * cols + c] =
                            args.out_grad[r] * (xd[r * cols + c] - args.out_data[r]).exp();
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    // ── Gathers ────────────────────────────────────────────────────────

    /// Gather flat elements: out[i] = self[indices[i]].
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let n = self.numel();
        for &i in indices {
            if i >= n {
                return Err(Error::contract(format!(
                    "gather index {i} out of range for {n} elements"
                )));
            }
        }
        let xd = self.data();
        let data = indices.iter().map(|&i| xd[i]).collect();
        drop(xd);
        let idx = indices.to_vec();
        Tensor::from_op(
            "gather",
            vec![indices.len()],
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                let mut dx = vec![0.0; n];
                for (g, &i) in args.out_grad.iter().zip(&idx) {
                    dx[i] += g;
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Gather rows of a 2-D table: out[i, :] = self[ids[i], :].
    /// This is the embedding lookup.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        let (rows, cols) = (s[0], s[1]);
        for &i in ids {
            if i >= rows {
                return Err(Error::TokenRange { id: i, size: rows });
            }
        }
        let xd = self.data();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            data.extend_from_slice(&xd[i * cols..(i + 1) * cols]);
        }
        drop(xd);
        let ids_c = ids.to_vec();
        Tensor::from_op(
            "gather_rows",
            vec![ids.len(), cols],
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                let mut dx = vec![0.0; rows * cols];
                for (r, &i) in ids_c.iter().enumerate() {
                    for c in 0..cols {
                        dx[i * cols + c] += args.out_grad[r * cols + c];
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    // ── Reductions ─────────────────────────────────────────────────────

    pub fn sum_all(&self) -> Result<Tensor> {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum_all",
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| vec![Some(vec![args.out_grad[0]; n])]),
        )
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let n = self.numel();
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(
            "mean_all",
            vec![1],
            vec![s / n as f64],
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                vec![Some(vec![args.out_grad[0] / n as f64; n])]
            }),
        )
    }

    /// Mean over the last axis; shape [.., n] -> [..]. Average pooling.
    pub fn mean_last(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.is_empty() {
            return Err(Error::contract("mean_last on rank-0 tensor"));
        }
        let n = s[s.len() - 1];
        let rows = self.numel() / n;
        let xd = self.data();
        let data = (0..rows)
            .map(|r| xd[r * n..(r + 1) * n].iter().sum::<f64>() / n as f64)
            .collect();
        drop(xd);
        let out_shape: Vec<usize> = if s.len() == 1 {
            vec![1]
        } else {
            s[..s.len() - 1].to_vec()
        };
        Tensor::from_op(
            "mean_last",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                let mut dx = vec![0.0; rows * n];
                for r in 0..rows {
                    let g = args.out_grad[r] / n as f64;
                    for d in dx[r * n..(r + 1) * n].iter_mut() {
                        *d = g;
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    // ── Shape surgery ──────────────────────────────────────────────────

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data_vec(),
            vec![self.clone()],
            Box::new(|args: &BackwardArgs| vec![Some(args.out_grad.to_vec())]),
        )
    }

    /// Contiguous slice along one axis.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let s = self.shape();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::contract(format!(
                "narrow(axis={axis}, start={start}, len={len}) out of range for {s:?}"
            )));
        }
        let (outer, axis_len, inner) = axis_geometry(s, axis);
        let xd = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            data.extend_from_slice(&xd[base..base + len * inner]);
        }
        drop(xd);
        let mut out_shape = s.to_vec();
        out_shape[axis] = len;
        let full = self.numel();
        Tensor::from_op(
            "narrow",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                let mut dx = vec![0.0; full];
                for o in 0..outer {
                    let src = o * len * inner;
                    let dst = (o * axis_len + start) * inner;
                    dx[dst..dst + len * inner]
                        .copy_from_slice(&args.out_grad[src..src + len * inner]);
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Concatenate tensors along one axis. All other extents must agree.
    pub fn concat(axis: usize, parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let first = parts[0].shape().to_vec();
        if axis >= first.len() {
            return Err(Error::contract(format!(
                "concat axis {axis} out of range for {first:?}"
            )));
        }
        let mut total = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_geometry(&out_shape, axis);
        let mut data = vec![0.0; outer * total * inner];
        let mut offset = 0;
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let plen = p.shape()[axis];
            let pd = p.data();
            for o in 0..outer {
                let src = o * plen * inner;
                let dst = (o * total + offset) * inner;
                data[dst..dst + plen * inner].copy_from_slice(&pd[src..src + plen * inner]);
            }
            offset += plen;
            lens.push(plen);
        }
        Tensor::from_op(
            "concat",
            out_shape,
            data,
            parts.to_vec(),
            Box::new(move |args: &BackwardArgs| {
                let mut out = Vec::with_capacity(lens.len());
                let mut offset = 0;
                for &plen in &lens {
                    let mut dp = vec![0.0; outer * plen * inner];
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * plen * inner;
                        dp[dst..dst + plen * inner]
                            .copy_from_slice(&args.out_grad[src..src + plen * inner]);
                    }
                    out.push(Some(dp));
                    offset += plen;
                }
                out
            }),
        )
    }

    /// Replicate-pad along axis 1 of a [C, T, H, W] tensor: `pad` copies of
    /// the first and last frame. Keeps every output frame's receptive field
    /// inside the clip, so a constant video stays constant in time.
    pub fn pad_time_replicate(&self, pad: usize) -> Result<Tensor> {
        let s = self.shape().to_vec();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "pad_time_replicate",
                lhs: s,
                rhs: vec![],
            });
        }
        let (c, t, h, w) = (s[0], s[1], s[2], s[3]);
        let frame = h * w;
        let t_out = t + 2 * pad;
        let xd = self.data();
        let mut data = vec![0.0; c * t_out * frame];
        for ci in 0..c {
            for to in 0..t_out {
                let ti = to.saturating_sub(pad).min(t - 1);
                let src = (ci * t + ti) * frame;
                let dst = (ci * t_out + to) * frame;
                data[dst..dst + frame].copy_from_slice(&xd[src..src + frame]);
            }
        }
        drop(xd);
        Tensor::from_op(
            "pad_time_replicate",
            vec![c, t_out, h, w],
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs| {
                let mut dx = vec![0.0; c * t * frame];
                for ci in 0..c {
                    for to in 0..t_out {
                        let ti = to.saturating_sub(pad).min(t - 1);
                        let src = (ci * t_out + to) * frame;
                        let dst = (ci * t + ti) * frame;
                        for k in 0..frame {
                            dx[dst + k] += args.out_grad[src + k];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    // ── Convolution ────────────────────────────────────────────────────

    /// 3-D convolution: input [Ci, T, H, W], weight [Co, Ci, kt, kh, kw],
    /// bias [Co], zero padding. Output [Co, T', H', W'].
    pub fn conv3d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> Result<Tensor> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        if xs.len() != 4 || ws.len() != 5 || xs[0] != ws[1] {
            return Err(Error::ShapeMismatch {
                op: "conv3d",
                lhs: xs,
                rhs: ws,
            });
        }
        let (ci, t, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kt, kh, kw) = (ws[0], ws[2], ws[3], ws[4]);
        if bias.shape() != [co] {
            return Err(Error::ShapeMismatch {
                op: "conv3d",
                lhs: bias.shape().to_vec(),
                rhs: vec![co],
            });
        }
        let out_dim = |n: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            let padded = n + 2 * p;
            if padded < k {
                return Err(Error::ShapeMismatch {
                    op: "conv3d",
                    lhs: vec![n],
                    rhs: vec![k],
                });
            }
            Ok((padded - k) / s + 1)
        };
        let to = out_dim(t, kt, stride.0, pad.0)?;
        let ho = out_dim(h, kh, stride.1, pad.1)?;
        let wo = out_dim(w, kw, stride.2, pad.2)?;

        let xd = self.data();
        let wd = weight.data();
        let bd = bias.data();
        let mut data = vec![0.0; co * to * ho * wo];
        let x_at = |c: usize, tt: usize, yy: usize, xx: usize| ((c * t + tt) * h + yy) * w + xx;
        for oc in 0..co {
            for ot in 0..to {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bd[oc];
                        for icyc in 0..ci {
                            for dt in 0..kt {
                                let it = (ot * stride.0 + dt) as isize - pad.0 as isize;
                                if it < 0 || it >= t as isize {
                                    continue;
                                }
                                for dy in 0..kh {
                                    let iy = (oy * stride.1 + dy) as isize - pad.1 as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for dxk in 0..kw {
                                        let ix = (ox * stride.2 + dxk) as isize - pad.2 as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let wv = wd[(((oc * ci + icyc) * kt + dt) * kh + dy) * kw
                                            + dxk];
                                        acc += wv
                                            * xd[x_at(icyc, it as usize, iy as usize, ix as usize)];
                                    }
                                }
                            }
                        }
                        data[((oc * to + ot) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        drop(xd);
        drop(wd);
        drop(bd);
        let x_c = self.clone();
        let w_c = weight.clone();
        Tensor::from_op(
            "conv3d",
            vec![co, to, ho, wo],
            data,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |args: &BackwardArgs| {
                let xd = x_c.data();
                let wd = w_c.data();
                let mut dx = vec![0.0; ci * t * h * w];
                let mut dw = vec![0.0; co * ci * kt * kh * kw];
                let mut db = vec![0.0; co];
                for oc in 0..co {
                    for ot in 0..to {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let g = args.out_grad[((oc * to + ot) * ho + oy) * wo + ox];
                                if g == 0.0 {
                                    continue;
                                }
                                db[oc] += g;
                                for icyc in 0..ci {
                                    for dt in 0..kt {
                                        let it = (ot * stride.0 + dt) as isize - pad.0 as isize;
                                        if it < 0 || it >= t as isize {
                                            continue;
                                        }
                                        for dy in 0..kh {
                                            let iy = (oy * stride.1 + dy) as isize - pad.1 as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            for dxk in 0..kw {
                                                let ix = (ox * stride.2 + dxk) as isize
                                                    - pad.2 as isize;
                                                if ix < 0 || ix >= w as isize {
                                                    continue;
                                                }
                                                let xi = ((icyc * t + it as usize) * h
                                                    + iy as usize)
                                                    * w
                                                    + ix as usize;
                                                let wi = (((oc * ci + icyc) * kt + dt) * kh + dy)
                                                    * kw
                                                    + dxk;
                                                dx[xi] += g * wd[wi];
                                                dw[wi] += g * xd[xi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                vec![Some(dx), Some(dw), Some(db)]
            }),
        )
    }

    /// 2-D convolution: input [Ci, H, W], weight [Co, Ci, kh, kw], bias [Co].
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        if xs.len() != 3 || ws.len() != 4 || xs[0] != ws[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        // Reuse the 3-D kernel with a singleton time axis.
        let x3 = self.reshape(&[xs[0], 1, xs[1], xs[2]])?;
        let w3 = weight.reshape(&[ws[0], ws[1], 1, ws[2], ws[3]])?;
        let y = x3.conv3d(&w3, bias, (1, stride, stride), (0, pad, pad))?;
        let ys = y.shape().to_vec();
        y.reshape(&[ys[0], ys[2], ys[3]])
    }

    /// Depthwise 1-D convolution over time: input [T, d], weight [d, k]
    /// (k odd), bias [d], zero padding (k-1)/2 so T is preserved.
    pub fn conv1d_depthwise(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || ws[1] % 2 == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv1d_depthwise",
                lhs: xs,
                rhs: ws,
            });
        }
        let (t, d) = (xs[0], xs[1]);
        let k = ws[1];
        let pad = (k - 1) / 2;
        if bias.shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "conv1d_depthwise",
                lhs: bias.shape().to_vec(),
                rhs: vec![d],
            });
        }
        let xd = self.data();
        let wd = weight.data();
        let bd = bias.data();
        let mut data = vec![0.0; t * d];
        for ot in 0..t {
            for c in 0..d {
                let mut acc = bd[c];
                for j in 0..k {
                    let it = (ot + j) as isize - pad as isize;
                    if it < 0 || it >= t as isize {
                        continue;
                    }
                    acc += wd[c * k + j] * xd[it as usize * d + c];
                }
                data[ot * d + c] = acc;
            }
        }
        drop(xd);
        drop(wd);
        drop(bd);
        let x_c = self.clone();
        let w_c = weight.clone();
        Tensor::from_op(
            "conv1d_depthwise",
            vec![t, d],
            data,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |args: &BackwardArgs| {
                let xd = x_c.data();
                let wd = w_c.data();
                let mut dx = vec![0.0; t * d];
                let mut dw = vec![0.0; d * k];
                let mut db = vec![0.0; d];
                for ot in 0..t {
                    for c in 0..d {
                        let g = args.out_grad[ot * d + c];
                        if g == 0.0 {
                            continue;
                        }
                        db[c] += g;
                        for j in 0..k {
                            let it = (ot + j) as isize - pad as isize;
                            if it < 0 || it >= t as isize {
                                continue;
                            }
                            dx[it as usize * d + c] += g * wd[c * k + j];
                            dw[c * k + j] += g * xd[it as usize * d + c];
                        }
                    }
                }
                vec![Some(dx), Some(dw), Some(db)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn softmax_symmetry_and_hand_values() {
        let x = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let y = x.softmax(0).unwrap();
        assert_eq!(y.data_vec(), vec![0.5, 0.5]);

        let x = Tensor::from_vec(&[2], vec![1f64.ln(), 3f64.ln()]).unwrap();
        let y = x.softmax(0).unwrap();
        assert_close(y.data()[0], 0.25, 1e-12);
        assert_close(y.data()[1], 0.75, 1e-12);
    }

    #[test]
    fn softmax_large_inputs_stable() {
        let x = Tensor::from_vec(&[2], vec![1000.0, 1000.0]).unwrap();
        let y = x.softmax(0).unwrap();
        assert_eq!(y.data_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = crate::rng::SplitRng::new(11);
        for _ in 0..20 {
            let vals: Vec<f64> = (0..12).map(|_| rng.uniform_in(-4.0, 4.0)).collect();
            let x = Tensor::from_vec(&[3, 4], vals.clone()).unwrap();
            let y = x.softmax(1).unwrap();
            for r in 0..3 {
                let s: f64 = y.data()[r * 4..(r + 1) * 4].iter().sum();
                assert_close(s, 1.0, 1e-9);
            }
            let shifted: Vec<f64> = vals
                .iter()
                .enumerate()
                .map(|(i, v)| v + 7.5 * ((i / 4) as f64 + 1.0))
                .collect();
            let y2 = Tensor::from_vec(&[3, 4], shifted).unwrap().softmax(1).unwrap();
            for (a, b) in y.data().iter().zip(y2.data().iter()) {
                assert_close(*a, *b, 1e-9);
            }
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        // Build a non-finite intermediate by exp overflow.
        let big = x.scale(1e308).and_then(|t| t.exp());
        assert!(big.is_err());
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = eye.matmul(&a).unwrap();
        assert_eq!(y.data_vec(), a.data_vec());
    }

    #[test]
    fn matmul_sum_gradient_is_ones_bt() {
        // loss = sum(A.B): dA = ones . B^T
        let a = Tensor::param(&[2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let b = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let loss = a.matmul(&b).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        let g = a.grad_vec().unwrap();
        // row sums of B: [6, 15]
        assert_eq!(g, vec![6.0, 15.0, 6.0, 15.0]);
    }

    #[test]
    fn layernorm_two_point_row() {
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 3.0]).unwrap();
        let y = x.layer_norm(0.0).unwrap();
        assert_close(y.data()[0], -1.0, 1e-12);
        assert_close(y.data()[1], 1.0, 1e-12);
    }

    #[test]
    fn conv2d_constant_input_averaging_kernel() {
        // 3x3 averaging kernel over a constant image, no padding -> constant.
        let x = Tensor::from_vec(&[1, 5, 5], vec![0.7; 25]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0 / 9.0; 9]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let y = x.conv2d(&w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        for v in y.data().iter() {
            assert_close(*v, 0.7, 1e-12);
        }
    }

    #[test]
    fn conv_shape_errors_name_both_shapes() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![0.0; 4]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 5, 5], vec![0.0; 25]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let err = x.conv2d(&w, &b, 1, 0).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    }

    #[test]
    fn narrow_concat_roundtrip() {
        let x = Tensor::from_vec(&[2, 4], (0..8).map(|v| v as f64).collect()).unwrap();
        let a = x.narrow(1, 0, 2).unwrap();
        let b = x.narrow(1, 2, 2).unwrap();
        let y = Tensor::concat(1, &[a, b]).unwrap();
        assert_eq!(y.data_vec(), x.data_vec());
    }

    #[test]
    fn pad_time_replicate_edges() {
        // [1, 2, 1, 1] frames valued 1, 2 padded by 1 -> 1 1 2 2
        let x = Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let y = x.pad_time_replicate(1).unwrap();
        assert_eq!(y.data_vec(), vec![1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn gather_rows_scatter_gradient() {
        let table = Tensor::param(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = table.gather_rows(&[2, 0, 2]).unwrap();
        assert_eq!(y.data_vec(), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        y.sum_all().unwrap().backward().unwrap();
        assert_eq!(table.grad_vec().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn causal_softmax_masks_future() {
        let x = Tensor::from_vec(&[3, 3], vec![0.3; 9]).unwrap();
        let y = x.softmax_causal(3).unwrap();
        let d = y.data_vec();
        assert_eq!(d[0], 1.0);
        assert_eq!(&d[1..3], &[0.0, 0.0]);
        assert_close(d[3], 0.5, 1e-12);
        assert_close(d[4], 0.5, 1e-12);
        assert_eq!(d[5], 0.0);
        for c in 6..9 {
            assert_close(d[c], 1.0 / 3.0, 1e-12);
        }
    }

    #[test]
    fn lse_excluding_matches_manual() {
        let x = Tensor::from_vec(&[1, 3], vec![0.1, 5.0, -0.7]).unwrap();
        let y = x.lse_excluding(1).unwrap();
        let manual = (0.1f64.exp() + (-0.7f64).exp()).ln();
        assert_close(y.item(), manual, 1e-12);
    }
}
