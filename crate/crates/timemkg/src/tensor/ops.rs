//! Tensor operations and their reverse-mode rules.
//!
//! Every op computes its forward value eagerly and, when any input is
//! attached to a live tape, pushes one backward step onto that tape. The
//! step closure captures the input/output handles and accumulates
//! vector-Jacobian products into tracked inputs.

use super::{accum_if_tracked, joint_tape, Tensor};
use crate::error::{Error, Result};

const GELU_COEF: f64 = 0.044715;

/// Shape both operands broadcast to, aligning from the right; axes of
/// size 1 stretch.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = a.len().checked_sub(1 + i).map_or(1, |j| a[j]);
        let db = b.len().checked_sub(1 + i).map_or(1, |j| b[j]);
        out[rank - 1 - i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Row-major strides with broadcast axes (size 1 against a larger output
/// axis) pinned to stride 0, so a flat output index maps straight to the
/// input element it reads.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        let s = if shape[i] == 1 { 0 } else { acc };
        strides[offset + i] = s;
        acc *= shape[i];
    }
    strides
}

fn for_each_broadcast(
    out_shape: &[usize],
    strides_a: &[usize],
    strides_b: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let numel: usize = out_shape.iter().product();
    let rank = out_shape.len();
    let mut coords = vec![0usize; rank];
    for out_idx in 0..numel {
        let mut ia = 0;
        let mut ib = 0;
        for k in 0..rank {
            ia += coords[k] * strides_a[k];
            ib += coords[k] * strides_b[k];
        }
        f(out_idx, ia, ib);
        for k in (0..rank).rev() {
            coords[k] += 1;
            if coords[k] < out_shape[k] {
                break;
            }
            coords[k] = 0;
        }
    }
}

fn binary_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    forward: fn(f64, f64) -> f64,
    // (grad_out, a_val, b_val) -> (contrib_a, contrib_b)
    backward: fn(f64, f64, f64) -> (f64, f64),
) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
        Error::shape(op, format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()))
    })?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let numel: usize = out_shape.iter().product();
    let mut data = vec![0.0; numel];
    {
        let da = a.borrow_data();
        let db = b.borrow_data();
        for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
            data[o] = forward(da[ia], db[ib]);
        });
    }
    let tape = joint_tape(&[a, b]);
    let out = Tensor::traced(out_shape.clone(), data, tape.as_ref());
    if let Some(tape) = tape {
        let (a, b, out_h) = (a.clone(), b.clone(), out.clone());
        tape.push(Box::new(move || {
            let Some(g) = out_h.grad_ref() else { return };
            let da = a.borrow_data();
            let db = b.borrow_data();
            let mut ga = vec![0.0; da.len()];
            let mut gb = vec![0.0; db.len()];
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                let (ca, cb) = backward(g[o], da[ia], db[ib]);
                ga[ia] += ca;
                gb[ib] += cb;
            });
            drop(da);
            drop(db);
            accum_if_tracked(&a, &ga);
            accum_if_tracked(&b, &gb);
        }));
    }
    Ok(out)
}

/// Elementwise unary op with pointwise derivative `df(x, y) = dy/dx`.
fn unary_pointwise(
    a: &Tensor,
    forward: fn(f64) -> f64,
    dfdx: fn(f64) -> f64,
) -> Tensor {
    let data: Vec<f64> = a.borrow_data().iter().copied().map(forward).collect();
    let tape = joint_tape(&[a]);
    let out = Tensor::traced(a.shape().to_vec(), data, tape.as_ref());
    if let Some(tape) = tape {
        let (a, out_h) = (a.clone(), out.clone());
        tape.push(Box::new(move || {
            let Some(g) = out_h.grad_ref() else { return };
            let da = a.borrow_data();
            let contrib: Vec<f64> = da.iter().zip(&g).map(|(&x, &go)| go * dfdx(x)).collect();
            drop(da);
            accum_if_tracked(&a, &contrib);
        }));
    }
    out
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary_broadcast("add", self, other, |x, y| x + y, |g, _, _| (g, g))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary_broadcast("sub", self, other, |x, y| x - y, |g, _, _| (g, -g))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary_broadcast("mul", self, other, |x, y| x * y, |g, x, y| (g * y, g * x))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.borrow_data().iter().map(|x| x + c).collect();
        let tape = joint_tape(&[self]);
        let out = Tensor::traced(self.shape().to_vec(), data, tape.as_ref());
        if let Some(tape) = tape {
            let (a, out_h) = (self.clone(), out.clone());
            tape.push(Box::new(move || {
                if let Some(g) = out_h.grad_ref() {
                    accum_if_tracked(&a, &g);
                }
            }));
        }
        out
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.borrow_data().iter().map(|x| x * c).collect();
        let tape = joint_tape(&[self]);
        let out = Tensor::traced(self.shape().to_vec(), data, tape.as_ref());
        if let Some(tape) = tape {
            let (a, out_h) = (self.clone(), out.clone());
            tape.push(Box::new(move || {
                if let Some(g) = out_h.grad_ref() {
                    let contrib: Vec<f64> = g.iter().map(|go| go * c).collect();
                    accum_if_tracked(&a, &contrib);
                }
            }));
        }
        out
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                format!("incompatible shapes {:?} x {:?}", sa, sb),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        {
            let a = self.borrow_data();
            let b = other.borrow_data();
            for i in 0..m {
                for p in 0..k {
                    let aip = a[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        data[i * n + j] += aip * b[p * n + j];
                    }
                }
            }
        }
        let tape = joint_tape(&[self, other]);
        let out = Tensor::traced(vec![m, n], data, tape.as_ref());
        if let Some(tape) = tape {
            let (a, b, out_h) = (self.clone(), other.clone(), out.clone());
            tape.push(Box::new(move || {
                let Some(g) = out_h.grad_ref() else { return };
                let da = a.borrow_data();
                let db = b.borrow_data();
                // dA = G . B^T
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * db[p * n + j];
                        }
                        ga[i * k + p] = acc;
                    }
                }
                // dB = A^T . G
                let mut gb = vec![0.0; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let aip = da[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
                drop(da);
                drop(db);
                accum_if_tracked(&a, &ga);
                accum_if_tracked(&b, &gb);
            }));
        }
        Ok(out)
    }

    /// Swap the two axes of a 2-D tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("expected rank 2, got {:?}", s)));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.borrow_data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        drop(src);
        let tape = joint_tape(&[self]);
        let out = Tensor::traced(vec![c, r], data, tape.as_ref());
        if let Some(tape) = tape {
            let (a, out_h) = (self.clone(), out.clone());
            tape.push(Box::new(move || {
                let Some(g) = out_h.grad_ref() else { return };
                let mut contrib = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        contrib[i * c + j] = g[j * r + i];
                    }
                }
                accum_if_tracked(&a, &contrib);
            }));
        }
        Ok(out)
    }

    /// Softmax over the last axis, with max-subtraction for stability.
    /// Rows of the result sum to 1.
    pub fn softmax_lastdim(&self) -> Result<Tensor> {
        let s = self.shape();
        let d = *s.last().ok_or_else(|| Error::shape("softmax", "rank-0 tensor"))?;
        let src = self.borrow_data();
        let mut data = vec![0.0; src.len()];
        for (row_in, row_out) in src.chunks(d).zip(data.chunks_mut(d)) {
            let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in row_out.iter_mut().zip(row_in) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        drop(src);
        let tape = joint_tape(&[self]);
        let out = Tensor::traced(s.to_vec(), data, tape.as_ref());
        if let Some(tape) = tape {
            let (a, out_h) = (self.clone(), out.clone());
            tape.push(Box::new(move || {
                let Some(g) = out_h.grad_ref() else { return };
                let y = out_h.borrow_data();
                let mut contrib = vec![0.0; y.len()];
                for ((yr, gr), cr) in y.chunks(d).zip(g.chunks(d)).zip(contrib.chunks_mut(d)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                    for ((ci, yi), gi) in cr.iter_mut().zip(yr).zip(gr) {
                        *ci = yi * (gi - dot);
                    }
                }
                drop(y);
                accum_if_tracked(&a, &contrib);
            }));
        }
        Ok(out)
    }

    /// RMS normalization over the last axis: `gamma * x / sqrt(mean(x^2) + eps)`.
    /// The epsilon sits inside the root so an all-zero row stays finite.
    pub fn rms_norm(&self, gamma: &Tensor, eps: f64) -> Result<Tensor> {
        let s = self.shape();
        let d = *s.last().ok_or_else(|| Error::shape("rms_norm", "rank-0 tensor"))?;
        if gamma.shape() != [d] {
            return Err(Error::shape(
                "rms_norm",
                format!("gamma shape {:?}, expected [{}]", gamma.shape(), d),
            ));
        }
        let src = self.borrow_data();
        let gam = gamma.borrow_data();
        let mut data = vec![0.0; src.len()];
        let mut inv_rms = Vec::with_capacity(src.len() / d.max(1));
        for (row_in, row_out) in src.chunks(d).zip(data.chunks_mut(d)) {
            let ms: f64 = row_in.iter().map(|x| x * x).sum::<f64>() / d as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            inv_rms.push(inv);
            for ((o, &x), &gm) in row_out.iter_mut().zip(row_in).zip(gam.iter()) {
                *o = gm * x * inv;
            }
        }
        drop(src);
        drop(gam);
        let tape = joint_tape(&[self, gamma]);
        let out = Tensor::traced(s.to_vec(), data, tape.as_ref());
        if let Some(tape) = tape {
            let (a, gm_h, out_h) = (self.clone(), gamma.clone(), out.clone());
            tape.push(Box::new(move || {
                let Some(g) = out_h.grad_ref() else { return };
                let x = a.borrow_data();
                let gam = gm_h.borrow_data();
                let mut gx = vec![0.0; x.len()];
                let mut gg = vec![0.0; d];
                for (row, ((xr, gr), cr)) in
                    x.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)).enumerate()
                {
                    let inv = inv_rms[row];
                    // s = sum_i g_i * gamma_i * x_i
                    let s: f64 = gr
                        .iter()
                        .zip(gam.iter())
                        .zip(xr)
                        .map(|((gi, gmi), xi)| gi * gmi * xi)
                        .sum();
                    let inv3 = inv * inv * inv / d as f64;
                    for j in 0..d {
                        cr[j] = gam[j] * gr[j] * inv - xr[j] * s * inv3;
                        gg[j] += gr[j] * xr[j] * inv;
                    }
                }
                drop(x);
                drop(gam);
                accum_if_tracked(&a, &gx);
                accum_if_tracked(&gm_h, &gg);
            }));
        }
        Ok(out)
    }

    /// GELU with the usual tanh approximation.
    pub fn gelu(&self) -> Tensor {
        unary_pointwise(self, gelu_fwd, gelu_deriv)
    }

    /// Columns `[start, start+len)` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || start + len > s[1] {
            return Err(Error::shape(
                "slice_cols",
                format!("slice [{start}, {}) of shape {:?}", start + len, s),
            ));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.borrow_data();
        let mut data = Vec::with_capacity(rows * len);
        for i in 0..rows {
            data.extend_from_slice(&src[i * cols + start..i * cols + start + len]);
        }
        drop(src);
        let tape = joint_tape(&[self]);
        let out = Tensor::traced(vec![rows, len], data, tape.as_ref());
        if let Some(tape) = tape {
            let (a, out_h) = (self.clone(), out.clone());
            tape.push(Box::new(move || {
                let Some(g) = out_h.grad_ref() else { return };
                let mut contrib = vec![0.0; rows * cols];
                for i in 0..rows {
                    contrib[i * cols + start..i * cols + start + len]
                        .copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                accum_if_tracked(&a, &contrib);
            }));
        }
        Ok(out)
    }

    /// Concatenate 2-D tensors along the column axis.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no tensors to concatenate"));
        }
        let rows = parts[0].shape()[0];
        if parts.iter().any(|p| p.shape().len() != 2 || p.shape()[0] != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                let src = p.borrow_data();
                data.extend_from_slice(&src[i * w..(i + 1) * w]);
            }
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let tape = joint_tape(&refs);
        let out = Tensor::traced(vec![rows, total], data, tape.as_ref());
        if let Some(tape) = tape {
            let parts: Vec<Tensor> = parts.to_vec();
            let widths = widths.clone();
            let out_h = out.clone();
            tape.push(Box::new(move || {
                let Some(g) = out_h.grad_ref() else { return };
                let mut offset = 0;
                for (p, &w) in parts.iter().zip(&widths) {
                    let mut contrib = vec![0.0; rows * w];
                    for i in 0..rows {
                        contrib[i * w..(i + 1) * w]
                            .copy_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    accum_if_tracked(p, &contrib);
                    offset += w;
                }
            }));
        }
        Ok(out)
    }

    /// Stack 2-D tensors (or 1-D row vectors) along the row axis.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no tensors to concatenate"));
        }
        let as_2d = |t: &Tensor| -> Result<(usize, usize)> {
            match t.shape() {
                [n] => Ok((1, *n)),
                [r, c] => Ok((*r, *c)),
                other => Err(Error::shape("concat_rows", format!("rank {:?}", other))),
            }
        };
        let (_, cols) = as_2d(&parts[0])?;
        let mut total_rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (r, c) = as_2d(p)?;
            if c != cols {
                return Err(Error::shape("concat_rows", "column counts differ"));
            }
            total_rows += r;
            data.extend_from_slice(&p.borrow_data());
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let tape = joint_tape(&refs);
        let out = Tensor::traced(vec![total_rows, cols], data, tape.as_ref());
        if let Some(tape) = tape {
            let parts: Vec<Tensor> = parts.to_vec();
            let out_h = out.clone();
            tape.push(Box::new(move || {
                let Some(g) = out_h.grad_ref() else { return };
                let mut offset = 0;
                for p in &parts {
                    let n = p.numel();
                    accum_if_tracked(p, &g[offset..offset + n]);
                    offset += n;
                }
            }));
        }
        Ok(out)
    }

    /// Same data, new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?} changes element count", self.shape(), shape),
            ));
        }
        let tape = joint_tape(&[self]);
        let out = Tensor::traced(shape.to_vec(), self.to_vec(), tape.as_ref());
        if let Some(tape) = tape {
            let (a, out_h) = (self.clone(), out.clone());
            tape.push(Box::new(move || {
                if let Some(g) = out_h.grad_ref() {
                    accum_if_tracked(&a, &g);
                }
            }));
        }
        Ok(out)
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean_all(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        let sum: f64 = self.borrow_data().iter().sum();
        let tape = joint_tape(&[self]);
        let out = Tensor::traced(vec![1], vec![sum / n], tape.as_ref());
        if let Some(tape) = tape {
            let (a, out_h) = (self.clone(), out.clone());
            tape.push(Box::new(move || {
                let Some(g) = out_h.grad_ref() else { return };
                let contrib = vec![g[0] / n; a.numel()];
                accum_if_tracked(&a, &contrib);
            }));
        }
        out
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&self) -> Tensor {
        let sum: f64 = self.borrow_data().iter().sum();
        let tape = joint_tape(&[self]);
        let out = Tensor::traced(vec![1], vec![sum], tape.as_ref());
        if let Some(tape) = tape {
            let (a, out_h) = (self.clone(), out.clone());
            tape.push(Box::new(move || {
                let Some(g) = out_h.grad_ref() else { return };
                let contrib = vec![g[0]; a.numel()];
                accum_if_tracked(&a, &contrib);
            }));
        }
        out
    }

    /// Column means of a 2-D tensor: `[n, d] -> [d]`.
    pub fn mean_rows(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::shape("mean_rows", format!("expected rank 2, got {:?}", s)));
        }
        let (n, d) = (s[0], s[1]);
        let src = self.borrow_data();
        let mut data = vec![0.0; d];
        for row in src.chunks(d) {
            for (o, &x) in data.iter_mut().zip(row) {
                *o += x;
            }
        }
        let nf = n.max(1) as f64;
        for o in data.iter_mut() {
            *o /= nf;
        }
        drop(src);
        let tape = joint_tape(&[self]);
        let out = Tensor::traced(vec![d], data, tape.as_ref());
        if let Some(tape) = tape {
            let (a, out_h) = (self.clone(), out.clone());
            tape.push(Box::new(move || {
                let Some(g) = out_h.grad_ref() else { return };
                let mut contrib = vec![0.0; n * d];
                for row in contrib.chunks_mut(d) {
                    for (c, &gi) in row.iter_mut().zip(&g) {
                        *c = gi / nf;
                    }
                }
                accum_if_tracked(&a, &contrib);
            }));
        }
        Ok(out)
    }

    /// Mean squared error against a target of the same shape.
    pub fn mse_loss(&self, target: &Tensor) -> Result<Tensor> {
        if self.shape() != target.shape() {
            return Err(Error::shape(
                "mse_loss",
                format!("{:?} vs {:?}", self.shape(), target.shape()),
            ));
        }
        let n = self.numel().max(1) as f64;
        let sum: f64 = {
            let p = self.borrow_data();
            let t = target.borrow_data();
            p.iter().zip(t.iter()).map(|(pi, ti)| (pi - ti) * (pi - ti)).sum()
        };
        let tape = joint_tape(&[self, target]);
        let out = Tensor::traced(vec![1], vec![sum / n], tape.as_ref());
        if let Some(tape) = tape {
            let (p_h, t_h, out_h) = (self.clone(), target.clone(), out.clone());
            tape.push(Box::new(move || {
                let Some(g) = out_h.grad_ref() else { return };
                let p = p_h.borrow_data();
                let t = t_h.borrow_data();
                let gp: Vec<f64> = p
                    .iter()
                    .zip(t.iter())
                    .map(|(pi, ti)| 2.0 * (pi - ti) / n * g[0])
                    .collect();
                let gt: Vec<f64> = gp.iter().map(|v| -v).collect();
                drop(p);
                drop(t);
                accum_if_tracked(&p_h, &gp);
                accum_if_tracked(&t_h, &gt);
            }));
        }
        Ok(out)
    }

    /// Cross-entropy of a 1-D logits vector against a class index, with
    /// log-sum-exp stabilization.
    pub fn cross_entropy(&self, label: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 1 || label >= s[0] {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?}, label {}", s, label),
            ));
        }
        let z = self.borrow_data();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - z[label];
        drop(z);
        let tape = joint_tape(&[self]);
        let out = Tensor::traced(vec![1], vec![loss], tape.as_ref());
        if let Some(tape) = tape {
            let (a, out_h) = (self.clone(), out.clone());
            tape.push(Box::new(move || {
                let Some(g) = out_h.grad_ref() else { return };
                let z = a.borrow_data();
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|x| (x - max).exp()).sum();
                let mut contrib: Vec<f64> =
                    z.iter().map(|x| (x - max).exp() / sum * g[0]).collect();
                contrib[label] -= g[0];
                drop(z);
                accum_if_tracked(&a, &contrib);
            }));
        }
        Ok(out)
    }
}

/// Affine map `x . w + b`, the workhorse behind every projection here.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let y = x.matmul(w)?;
    match b {
        Some(b) => y.add(b),
        None => Ok(y),
    }
}

fn gelu_fwd(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEF * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_COEF * x * x)
}
