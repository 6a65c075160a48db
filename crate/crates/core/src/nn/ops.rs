//! Forward construction and backward rules for every graph op.
//!
//! Masked attention skips excluded key positions outright: their scores are
//! never computed and their values never accumulated, so the output is
//! bit-identical no matter what the padded slots contain.

use crate::error::{Error, Result};
use crate::nn::graph::{accumulate, Graph, Node, NodeId, Op, PadMask};
use crate::nn::linalg::{axpy, dot, matmul_nn, matmul_nt, matmul_tn};
use crate::nn::scalar::{real, Real};
use crate::nn::tensor::{strides_of, Tensor};

const GELU_CUBIC: f64 = 0.044715;
const GELU_SCALE: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Parameter handles for one multi-head attention block.
#[derive(Debug, Clone, Copy)]
pub struct MhaIds {
    pub wq: NodeId,
    pub bq: NodeId,
    pub wk: NodeId,
    pub bk: NodeId,
    pub wv: NodeId,
    pub bv: NodeId,
    pub wo: NodeId,
    pub bo: NodeId,
    pub heads: usize,
}

/// Parameter handles for one pre-norm transformer encoder layer.
#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerIds {
    pub ln1_gain: NodeId,
    pub ln1_shift: NodeId,
    pub attn: MhaIds,
    pub ln2_gain: NodeId,
    pub ln2_shift: NodeId,
    pub ff1_w: NodeId,
    pub ff1_b: NodeId,
    pub ff2_w: NodeId,
    pub ff2_b: NodeId,
}

impl<F: Real> Graph<F> {
    /// `y = x @ w + b` over the last axis. `x: [..., d_in]`, `w: [d_in, d_out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.nodes[x.0].value.shape().to_vec(),
            self.nodes[w.0].value.shape().to_vec(),
            self.nodes[b.0].value.shape().to_vec(),
        );
        if ws.len() != 2 || xs.is_empty() || xs[xs.len() - 1] != ws[0] {
            return Err(Error::shape("linear input/weight", &xs, &ws));
        }
        let (d_in, d_out) = (ws[0], ws[1]);
        if bs != [d_out] {
            return Err(Error::shape("linear bias", &bs, &[d_out]));
        }
        let rows = self.nodes[x.0].value.numel() / d_in;
        let mut out = vec![F::ZERO; rows * d_out];
        for row in out.chunks_exact_mut(d_out) {
            row.copy_from_slice(self.nodes[b.0].value.data());
        }
        matmul_nn(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            &mut out,
            rows,
            d_in,
            d_out,
        );
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = d_out;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Linear { x, w, b }, needs))
    }

    /// Numerically stable softmax along `axis` (max subtraction per lane).
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.nodes[x.0].value.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax axis", &shape, &[axis]));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let src = self.nodes[x.0].value.data();
        let mut out = vec![F::ZERO; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = src[base];
                for t in 1..len {
                    max = max.maximum(src[base + t * inner]);
                }
                let mut sum = F::ZERO;
                for t in 0..len {
                    let e = (src[base + t * inner] - max).exp();
                    out[base + t * inner] = e;
                    sum += e;
                }
                let inv = F::ONE / sum;
                for t in 0..len {
                    out[base + t * inner] *= inv;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, needs))
    }

    /// Layer normalization over the last axis with learned gain and shift.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, shift: NodeId, eps: f64) -> Result<NodeId> {
        let shape = self.nodes[x.0].value.shape().to_vec();
        let d = *shape.last().ok_or_else(|| Error::shape("layer_norm input", &shape, &[1]))?;
        if self.nodes[gain.0].value.shape() != [d] || self.nodes[shift.0].value.shape() != [d] {
            return Err(Error::shape(
                "layer_norm gain/shift",
                self.nodes[gain.0].value.shape(),
                &[d],
            ));
        }
        let rows = self.nodes[x.0].value.numel() / d;
        let eps = real::<F>(eps);
        let inv_d = F::ONE / real::<F>(d as f64);
        let src = self.nodes[x.0].value.data();
        let g = self.nodes[gain.0].value.data();
        let s = self.nodes[shift.0].value.data();
        let mut xhat = vec![F::ZERO; src.len()];
        let mut inv_std = vec![F::ZERO; rows];
        let mut out = vec![F::ZERO; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mut mean = F::ZERO;
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = F::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let istd = F::ONE / (var + eps).sqrt();
            inv_std[r] = istd;
            for i in 0..d {
                let xh = (row[i] - mean) * istd;
                xhat[r * d + i] = xh;
                out[r * d + i] = g[i] * xh + s[i];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(shift);
        Ok(self.push(
            Tensor::new(shape.clone(), out)?,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat: Tensor::new(shape, xhat)?,
                inv_std,
            },
            needs,
        ))
    }

    /// Scaled dot-product attention batched over axis 0.
    ///
    /// `q: [R, Tq, d]`, `k: [R, Tk, d]`, `v: [R, Tk, dv]` -> `[R, Tq, dv]`.
    /// Masked key positions are skipped, never read into the reduction; a
    /// query row whose keys are all masked yields an all-zero output row.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        mask: Option<&PadMask>,
    ) -> Result<NodeId> {
        let qs = self.nodes[q.0].value.shape().to_vec();
        let ks = self.nodes[k.0].value.shape().to_vec();
        let vs = self.nodes[v.0].value.shape().to_vec();
        if qs.len() != 3 || ks.len() != 3 || vs.len() != 3 {
            return Err(Error::shape("attention rank", &qs, &ks));
        }
        let (r, tq, d) = (qs[0], qs[1], qs[2]);
        let (tk, dv) = (ks[1], vs[2]);
        if ks[0] != r || vs[0] != r || ks[2] != d || vs[1] != tk {
            return Err(Error::shape("attention q/k/v", &qs, &ks));
        }
        if let Some(m) = mask {
            if m.rows != r || m.len != tk {
                return Err(Error::shape("attention mask", &[m.rows, m.len], &[r, tk]));
            }
        }
        let scale = real::<F>(1.0 / (d as f64).sqrt());
        let qd = self.nodes[q.0].value.data();
        let kd = self.nodes[k.0].value.data();
        let vd = self.nodes[v.0].value.data();
        let mut probs = vec![F::ZERO; r * tq * tk];
        let mut out = vec![F::ZERO; r * tq * dv];
        let mut scores = vec![F::ZERO; tk];
        for ri in 0..r {
            let qr = &qd[ri * tq * d..(ri + 1) * tq * d];
            let kr = &kd[ri * tk * d..(ri + 1) * tk * d];
            let vr = &vd[ri * tk * dv..(ri + 1) * tk * dv];
            let padded = mask.map(|m| m.row(ri));
            let skip = |s: usize| padded.is_some_and(|p| p[s]);
            for t in 0..tq {
                let q_row = &qr[t * d..(t + 1) * d];
                let mut max: Option<F> = None;
                for s in 0..tk {
                    if skip(s) {
                        continue;
                    }
                    let sc = dot(q_row, &kr[s * d..(s + 1) * d]) * scale;
                    scores[s] = sc;
                    max = Some(match max {
                        Some(m) => m.maximum(sc),
                        None => sc,
                    });
                }
                // Every key masked: the row is defined as zero.
                let Some(max) = max else { continue };
                let p_row = &mut probs[(ri * tq + t) * tk..(ri * tq + t + 1) * tk];
                let mut sum = F::ZERO;
                for s in 0..tk {
                    if skip(s) {
                        continue;
                    }
                    let e = (scores[s] - max).exp();
                    p_row[s] = e;
                    sum += e;
                }
                let inv = F::ONE / sum;
                let out_row = &mut out[(ri * tq + t) * dv..(ri * tq + t + 1) * dv];
                for s in 0..tk {
                    if skip(s) {
                        continue;
                    }
                    p_row[s] *= inv;
                    axpy(p_row[s], &vr[s * dv..(s + 1) * dv], out_row);
                }
            }
        }
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            Tensor::new([r, tq, dv], out)?,
            Op::Attention {
                q,
                k,
                v,
                mask: mask.cloned(),
                probs: Tensor::new([r, tq, tk], probs)?,
            },
            needs,
        ))
    }

    /// `[B, T, d] -> [B*heads, T, d/heads]`, head-major within each clip.
    pub fn split_heads(&mut self, x: NodeId, heads: usize) -> Result<NodeId> {
        let shape = self.nodes[x.0].value.shape().to_vec();
        if shape.len() != 3 || heads == 0 || !shape[2].is_multiple_of(heads) {
            return Err(Error::shape("split_heads", &shape, &[heads]));
        }
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let dh = d / heads;
        let src = self.nodes[x.0].value.data();
        let mut out = vec![F::ZERO; src.len()];
        for bi in 0..b {
            for ti in 0..t {
                let row = &src[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for h in 0..heads {
                    let dst = ((bi * heads + h) * t + ti) * dh;
                    out[dst..dst + dh].copy_from_slice(&row[h * dh..(h + 1) * dh]);
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new([b * heads, t, dh], out)?,
            Op::SplitHeads { x, heads },
            needs,
        ))
    }

    /// Inverse of [`Graph::split_heads`].
    pub fn merge_heads(&mut self, x: NodeId, heads: usize) -> Result<NodeId> {
        let shape = self.nodes[x.0].value.shape().to_vec();
        if shape.len() != 3 || heads == 0 || !shape[0].is_multiple_of(heads) {
            return Err(Error::shape("merge_heads", &shape, &[heads]));
        }
        let (bh, t, dh) = (shape[0], shape[1], shape[2]);
        let b = bh / heads;
        let src = self.nodes[x.0].value.data();
        let mut out = vec![F::ZERO; src.len()];
        for bi in 0..b {
            for h in 0..heads {
                for ti in 0..t {
                    let s = ((bi * heads + h) * t + ti) * dh;
                    let dst = (bi * t + ti) * (dh * heads) + h * dh;
                    out[dst..dst + dh].copy_from_slice(&src[s..s + dh]);
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new([b, t, dh * heads], out)?,
            Op::MergeHeads { x, heads },
            needs,
        ))
    }

    /// 1-D convolution over the last axis with zero same-padding.
    /// `x: [N, c_in, L]`, `w: [c_out, c_in, K]` (K odd), `b: [c_out]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.nodes[x.0].value.shape().to_vec();
        let ws = self.nodes[w.0].value.shape().to_vec();
        let bs = self.nodes[b.0].value.shape().to_vec();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
            return Err(Error::shape("conv1d input/kernel", &xs, &ws));
        }
        let (n, c_in, len) = (xs[0], xs[1], xs[2]);
        let (c_out, k) = (ws[0], ws[2]);
        if k % 2 == 0 || k == 0 {
            return Err(Error::Config(format!(
                "conv1d kernel size must be odd for same-padding, got {k}"
            )));
        }
        if bs != [c_out] {
            return Err(Error::shape("conv1d bias", &bs, &[c_out]));
        }
        let pad = (k - 1) / 2;
        let xd = self.nodes[x.0].value.data();
        let wd = self.nodes[w.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let mut out = vec![F::ZERO; n * c_out * len];
        for ni in 0..n {
            for o in 0..c_out {
                let out_row = &mut out[(ni * c_out + o) * len..(ni * c_out + o + 1) * len];
                for v in out_row.iter_mut() {
                    *v = bd[o];
                }
                for i in 0..c_in {
                    let x_row = &xd[(ni * c_in + i) * len..(ni * c_in + i + 1) * len];
                    for t in 0..k {
                        let (j_lo, j_hi) = conv_range(len, pad, t);
                        if j_lo >= j_hi {
                            continue;
                        }
                        let u_lo = j_lo + t - pad;
                        axpy(
                            wd[(o * c_in + i) * k + t],
                            &x_row[u_lo..u_lo + (j_hi - j_lo)],
                            &mut out_row[j_lo..j_hi],
                        );
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::new([n, c_out, len], out)?, Op::Conv1d { x, w, b }, needs))
    }

    /// GELU activation, tanh form.
    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.nodes[x.0].value.map(|t| gelu_fwd(t));
        let needs = self.needs(x);
        Ok(self.push(v, Op::Gelu { x }, needs))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.nodes[x.0].value.map(|t| t.maximum(F::ZERO));
        let needs = self.needs(x);
        Ok(self.push(v, Op::Relu { x }, needs))
    }

    /// Elementwise sum of two same-shape nodes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a.0].value.shape() != self.nodes[b.0].value.shape() {
            return Err(Error::shape(
                "add",
                self.nodes[a.0].value.shape(),
                self.nodes[b.0].value.shape(),
            ));
        }
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a, b }, needs))
    }

    /// Adds a constant table to every slice along axis 0 (positional terms).
    pub fn add_rows(&mut self, x: NodeId, table: Tensor<F>) -> Result<NodeId> {
        let xs = self.nodes[x.0].value.shape().to_vec();
        if xs.is_empty() || table.shape() != &xs[1..] {
            return Err(Error::shape("add_rows", &xs, table.shape()));
        }
        let block = table.numel();
        let mut data = self.nodes[x.0].value.data().to_vec();
        for chunk in data.chunks_exact_mut(block) {
            for (d, &t) in chunk.iter_mut().zip(table.data()) {
                *d += t;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(xs, data)?, Op::AddRows { x }, needs))
    }

    /// Axis permutation (generalized transpose).
    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let shape = self.nodes[x.0].value.shape().to_vec();
        if !is_permutation(perm, shape.len()) {
            return Err(Error::shape("permute", &shape, perm));
        }
        let (new_shape, data) = permute_data(&shape, self.nodes[x.0].value.data(), perm);
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(new_shape, data)?,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            needs,
        ))
    }

    /// Shape change preserving row-major element order.
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.nodes[x.0].value.reshaped(shape.to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(v, Op::Reshape { x }, needs))
    }

    /// Mean squared error between `pred` and a constant target over the
    /// selected `(b, t, j)` positions, averaged across all channels.
    /// `pred: [B, C, T, J]`, `selected: [B, T, J]` flattened.
    pub fn masked_mse(
        &mut self,
        pred: NodeId,
        target: Tensor<F>,
        selected: Vec<bool>,
    ) -> Result<NodeId> {
        let shape = self.nodes[pred.0].value.shape().to_vec();
        if shape.len() != 4 || target.shape() != shape.as_slice() {
            return Err(Error::shape("masked_mse", &shape, target.shape()));
        }
        let (b, c, t, j) = (shape[0], shape[1], shape[2], shape[3]);
        if selected.len() != b * t * j {
            return Err(Error::shape("masked_mse selection", &[b, t, j], &[selected.len()]));
        }
        let count = selected.iter().filter(|&&s| s).count();
        if count == 0 {
            return Err(Error::Config(
                "masked_mse: selection is empty, no positions to reconstruct".into(),
            ));
        }
        let inv_denom = F::ONE / real::<F>((count * c) as f64);
        let pd = self.nodes[pred.0].value.data();
        let td = target.data();
        let mut loss = F::ZERO;
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    for ji in 0..j {
                        if selected[(bi * t + ti) * j + ji] {
                            let idx = ((bi * c + ci) * t + ti) * j + ji;
                            let diff = pd[idx] - td[idx];
                            loss += diff * diff;
                        }
                    }
                }
            }
        }
        loss *= inv_denom;
        let needs = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedMse {
                pred,
                target,
                selected,
                inv_denom,
            },
            needs,
        ))
    }

    /// Mean cross-entropy over the batch. `logits: [B, K]`.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let shape = self.nodes[logits.0].value.shape().to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::shape("cross_entropy logits", &shape, &[labels.len()]));
        }
        let (b, k) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Data(format!(
                "cross_entropy: label {bad} out of range for {k} classes"
            )));
        }
        let src = self.nodes[logits.0].value.data();
        let mut probs = vec![F::ZERO; b * k];
        let mut loss = F::ZERO;
        for bi in 0..b {
            let row = &src[bi * k..(bi + 1) * k];
            let mut max = row[0];
            for &v in &row[1..] {
                max = max.maximum(v);
            }
            let mut sum = F::ZERO;
            for (p, &v) in probs[bi * k..(bi + 1) * k].iter_mut().zip(row) {
                *p = (v - max).exp();
                sum += *p;
            }
            let inv = F::ONE / sum;
            for p in &mut probs[bi * k..(bi + 1) * k] {
                *p *= inv;
            }
            loss -= probs[bi * k + labels[bi]].ln();
        }
        loss *= F::ONE / real::<F>(b as f64);
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs: Tensor::new([b, k], probs)?,
            },
            needs,
        ))
    }

    /// Averages `[B, T, d]` over valid frames only -> `[B, d]`.
    pub fn mean_valid_frames(&mut self, x: NodeId, frame_valid: &[bool]) -> Result<NodeId> {
        let shape = self.nodes[x.0].value.shape().to_vec();
        if shape.len() != 3 || frame_valid.len() != shape[0] * shape[1] {
            return Err(Error::shape("mean_valid_frames", &shape, &[frame_valid.len()]));
        }
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let mut inv_counts = vec![F::ZERO; b];
        for bi in 0..b {
            let count = frame_valid[bi * t..(bi + 1) * t].iter().filter(|&&v| v).count();
            if count == 0 {
                return Err(Error::Data(format!(
                    "mean_valid_frames: clip {bi} has no valid frames"
                )));
            }
            inv_counts[bi] = F::ONE / real::<F>(count as f64);
        }
        let src = self.nodes[x.0].value.data();
        let mut out = vec![F::ZERO; b * d];
        for bi in 0..b {
            let out_row = &mut out[bi * d..(bi + 1) * d];
            for ti in 0..t {
                if frame_valid[bi * t + ti] {
                    axpy(inv_counts[bi], &src[(bi * t + ti) * d..(bi * t + ti + 1) * d], out_row);
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new([b, d], out)?,
            Op::MeanValidFrames {
                x,
                valid: frame_valid.to_vec(),
                inv_counts,
            },
            needs,
        ))
    }

    /// Multi-head attention: project, split into heads, attend, merge, project.
    pub fn multi_head_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        ids: &MhaIds,
        mask: Option<&PadMask>,
    ) -> Result<NodeId> {
        let hq = self.linear(q, ids.wq, ids.bq)?;
        let hk = self.linear(k, ids.wk, ids.bk)?;
        let hv = self.linear(v, ids.wv, ids.bv)?;
        let sq = self.split_heads(hq, ids.heads)?;
        let sk = self.split_heads(hk, ids.heads)?;
        let sv = self.split_heads(hv, ids.heads)?;
        let expanded = mask.map(|m| m.repeat_rows(ids.heads));
        let att = self.attention(sq, sk, sv, expanded.as_ref())?;
        let merged = self.merge_heads(att, ids.heads)?;
        self.linear(merged, ids.wo, ids.bo)
    }

    /// Pre-norm transformer encoder layer:
    /// `x + MHA(LN(x))`, then `+ FFN(LN(.))` with a GELU between the two
    /// feed-forward linears.
    pub fn encoder_layer(
        &mut self,
        x: NodeId,
        ids: &EncoderLayerIds,
        mask: Option<&PadMask>,
        eps: f64,
    ) -> Result<NodeId> {
        let n1 = self.layer_norm(x, ids.ln1_gain, ids.ln1_shift, eps)?;
        let att = self.multi_head_attention(n1, n1, n1, &ids.attn, mask)?;
        let x1 = self.add(x, att)?;
        let n2 = self.layer_norm(x1, ids.ln2_gain, ids.ln2_shift, eps)?;
        let h = self.linear(n2, ids.ff1_w, ids.ff1_b)?;
        let h = self.gelu(h)?;
        let h = self.linear(h, ids.ff2_w, ids.ff2_b)?;
        self.add(x1, h)
    }
}

#[inline]
fn gelu_fwd<F: Real>(x: F) -> F {
    let half = real::<F>(0.5);
    let c = real::<F>(GELU_SCALE);
    let a = real::<F>(GELU_CUBIC);
    let u = c * (x + a * x * x * x);
    half * x * (F::ONE + u.tanh())
}

#[inline]
fn gelu_bwd<F: Real>(x: F) -> F {
    let half = real::<F>(0.5);
    let c = real::<F>(GELU_SCALE);
    let a = real::<F>(GELU_CUBIC);
    let three = real::<F>(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = F::ONE - t * t;
    half * (F::ONE + t) + half * x * sech2 * c * (F::ONE + three * a * x * x)
}

/// In-range output positions `j` for kernel tap `t`: `0 <= j + t - pad < len`.
#[inline]
fn conv_range(len: usize, pad: usize, t: usize) -> (usize, usize) {
    let j_lo = pad.saturating_sub(t);
    let j_hi = (len + pad).saturating_sub(t).min(len);
    (j_lo, j_hi)
}

fn is_permutation(perm: &[usize], rank: usize) -> bool {
    if perm.len() != rank {
        return false;
    }
    let mut seen = vec![false; rank];
    for &p in perm {
        if p >= rank || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

/// Copies `data` rearranged so that output axis `i` is input axis `perm[i]`.
pub(crate) fn permute_data<F: Real>(
    shape: &[usize],
    data: &[F],
    perm: &[usize],
) -> (Vec<usize>, Vec<F>) {
    let rank = shape.len();
    let new_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let out_strides = strides_of(&new_shape);
    // Stride in the output for a step along input axis `a`.
    let mut scatter = vec![0usize; rank];
    for (out_axis, &in_axis) in perm.iter().enumerate() {
        scatter[in_axis] = out_strides[out_axis];
    }
    let mut out = vec![F::ZERO; data.len()];
    let mut idx = vec![0usize; rank];
    let mut out_pos = 0usize;
    for &val in data {
        out[out_pos] = val;
        // Odometer increment over the input index, updating the output offset.
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            out_pos += scatter[axis];
            if idx[axis] < shape[axis] {
                break;
            }
            out_pos -= scatter[axis] * shape[axis];
            idx[axis] = 0;
        }
    }
    (new_shape, out)
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Pushes `gout` for node `idx` back to its inputs.
pub(crate) fn propagate<F: Real>(
    nodes: &[Node<F>],
    idx: usize,
    gout: &Tensor<F>,
    grads: &mut [Option<Tensor<F>>],
) -> Result<()> {
    let needs = |id: NodeId| nodes[id.0].needs_grad;
    let value = |id: NodeId| &nodes[id.0].value;
    match &nodes[idx].op {
        Op::Leaf => {}

        Op::Linear { x, w, b } => {
            let d_in = value(*w).shape()[0];
            let d_out = value(*w).shape()[1];
            let rows = value(*x).numel() / d_in;
            let g = gout.data();
            if needs(*x) {
                let mut dx = vec![F::ZERO; rows * d_in];
                matmul_nt(g, value(*w).data(), &mut dx, rows, d_out, d_in);
                accumulate(grads, *x, value(*x).shape(), dx);
            }
            if needs(*w) {
                let mut dw = vec![F::ZERO; d_in * d_out];
                matmul_tn(value(*x).data(), g, &mut dw, d_in, rows, d_out);
                accumulate(grads, *w, value(*w).shape(), dw);
            }
            if needs(*b) {
                let mut db = vec![F::ZERO; d_out];
                for row in g.chunks_exact(d_out) {
                    axpy(F::ONE, row, &mut db);
                }
                accumulate(grads, *b, value(*b).shape(), db);
            }
        }

        Op::Softmax { x, axis } => {
            if needs(*x) {
                let y = &nodes[idx].value;
                let shape = y.shape();
                let len = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                let yd = y.data();
                let gd = gout.data();
                let mut dx = vec![F::ZERO; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut acc = F::ZERO;
                        for t in 0..len {
                            acc += gd[base + t * inner] * yd[base + t * inner];
                        }
                        for t in 0..len {
                            let p = base + t * inner;
                            dx[p] = yd[p] * (gd[p] - acc);
                        }
                    }
                }
                accumulate(grads, *x, value(*x).shape(), dx);
            }
        }

        Op::LayerNorm {
            x,
            gain,
            shift,
            xhat,
            inv_std,
        } => {
            let d = *value(*x).shape().last().unwrap();
            let rows = value(*x).numel() / d;
            let gd = gout.data();
            let xh = xhat.data();
            let gn = value(*gain).data();
            let inv_d = F::ONE / real::<F>(d as f64);
            if needs(*shift) {
                let mut ds = vec![F::ZERO; d];
                for row in gd.chunks_exact(d) {
                    axpy(F::ONE, row, &mut ds);
                }
                accumulate(grads, *shift, &[d], ds);
            }
            if needs(*gain) {
                let mut dg = vec![F::ZERO; d];
                for (row, xrow) in gd.chunks_exact(d).zip(xh.chunks_exact(d)) {
                    for i in 0..d {
                        dg[i] += row[i] * xrow[i];
                    }
                }
                accumulate(grads, *gain, &[d], dg);
            }
            if needs(*x) {
                let mut dx = vec![F::ZERO; rows * d];
                for r in 0..rows {
                    let grow = &gd[r * d..(r + 1) * d];
                    let xrow = &xh[r * d..(r + 1) * d];
                    let mut mean_dxhat = F::ZERO;
                    let mut mean_dxhat_xhat = F::ZERO;
                    for i in 0..d {
                        let dxh = grow[i] * gn[i];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xrow[i];
                    }
                    mean_dxhat *= inv_d;
                    mean_dxhat_xhat *= inv_d;
                    let istd = inv_std[r];
                    for i in 0..d {
                        let dxh = grow[i] * gn[i];
                        dx[r * d + i] = istd * (dxh - mean_dxhat - xrow[i] * mean_dxhat_xhat);
                    }
                }
                accumulate(grads, *x, value(*x).shape(), dx);
            }
        }

        Op::Attention { q, k, v, mask, probs } => {
            let qs = value(*q).shape();
            let (r, tq, d) = (qs[0], qs[1], qs[2]);
            let tk = value(*k).shape()[1];
            let dv = value(*v).shape()[2];
            let scale = real::<F>(1.0 / (d as f64).sqrt());
            let qd = value(*q).data();
            let kd = value(*k).data();
            let vd = value(*v).data();
            let pd = probs.data();
            let gd = gout.data();
            let mut dq = if needs(*q) { vec![F::ZERO; qd.len()] } else { Vec::new() };
            let mut dk = if needs(*k) { vec![F::ZERO; kd.len()] } else { Vec::new() };
            let mut dvv = if needs(*v) { vec![F::ZERO; vd.len()] } else { Vec::new() };
            let mut dp = vec![F::ZERO; tq * tk];
            for ri in 0..r {
                let p_r = &pd[ri * tq * tk..(ri + 1) * tq * tk];
                let g_r = &gd[ri * tq * dv..(ri + 1) * tq * dv];
                let v_r = &vd[ri * tk * dv..(ri + 1) * tk * dv];
                if needs(*v) {
                    matmul_tn(
                        p_r,
                        g_r,
                        &mut dvv[ri * tk * dv..(ri + 1) * tk * dv],
                        tk,
                        tq,
                        dv,
                    );
                }
                if !needs(*q) && !needs(*k) {
                    continue;
                }
                dp.iter_mut().for_each(|x| *x = F::ZERO);
                matmul_nt(g_r, v_r, &mut dp, tq, dv, tk);
                // dS = P * (dP - rowsum(dP * P)); scaled once for both dQ and dK.
                for t in 0..tq {
                    let p_row = &p_r[t * tk..(t + 1) * tk];
                    let dp_row = &mut dp[t * tk..(t + 1) * tk];
                    let mut acc = F::ZERO;
                    for (dpv, &pv) in dp_row.iter().zip(p_row) {
                        acc += *dpv * pv;
                    }
                    for (dpv, &pv) in dp_row.iter_mut().zip(p_row) {
                        *dpv = pv * (*dpv - acc) * scale;
                    }
                }
                if needs(*q) {
                    matmul_nn(
                        &dp,
                        &kd[ri * tk * d..(ri + 1) * tk * d],
                        &mut dq[ri * tq * d..(ri + 1) * tq * d],
                        tq,
                        tk,
                        d,
                    );
                }
                if needs(*k) {
                    matmul_tn(
                        &dp,
                        &qd[ri * tq * d..(ri + 1) * tq * d],
                        &mut dk[ri * tk * d..(ri + 1) * tk * d],
                        tk,
                        tq,
                        d,
                    );
                }
            }
            let _ = mask; // masked positions have zero probability rows already
            if needs(*q) {
                accumulate(grads, *q, value(*q).shape(), dq);
            }
            if needs(*k) {
                accumulate(grads, *k, value(*k).shape(), dk);
            }
            if needs(*v) {
                accumulate(grads, *v, value(*v).shape(), dvv);
            }
        }

        Op::SplitHeads { x, heads } => {
            if needs(*x) {
                let xs = value(*x).shape();
                let (b, t, d) = (xs[0], xs[1], xs[2]);
                let dh = d / heads;
                let gd = gout.data();
                let mut dx = vec![F::ZERO; gd.len()];
                for bi in 0..b {
                    for ti in 0..t {
                        for h in 0..*heads {
                            let src = ((bi * heads + h) * t + ti) * dh;
                            let dst = (bi * t + ti) * d + h * dh;
                            dx[dst..dst + dh].copy_from_slice(&gd[src..src + dh]);
                        }
                    }
                }
                accumulate(grads, *x, xs, dx);
            }
        }

        Op::MergeHeads { x, heads } => {
            if needs(*x) {
                let xs = value(*x).shape();
                let (bh, t, dh) = (xs[0], xs[1], xs[2]);
                let b = bh / heads;
                let gd = gout.data();
                let mut dx = vec![F::ZERO; gd.len()];
                for bi in 0..b {
                    for h in 0..*heads {
                        for ti in 0..t {
                            let dst = ((bi * heads + h) * t + ti) * dh;
                            let src = (bi * t + ti) * (dh * heads) + h * dh;
                            dx[dst..dst + dh].copy_from_slice(&gd[src..src + dh]);
                        }
                    }
                }
                accumulate(grads, *x, xs, dx);
            }
        }

        Op::Conv1d { x, w, b } => {
            let xs = value(*x).shape();
            let ws = value(*w).shape();
            let (n, c_in, len) = (xs[0], xs[1], xs[2]);
            let (c_out, k) = (ws[0], ws[2]);
            let pad = (k - 1) / 2;
            let gd = gout.data();
            if needs(*b) {
                let mut db = vec![F::ZERO; c_out];
                for ni in 0..n {
                    for o in 0..c_out {
                        let row = &gd[(ni * c_out + o) * len..(ni * c_out + o + 1) * len];
                        let mut s = F::ZERO;
                        for &g in row {
                            s += g;
                        }
                        db[o] += s;
                    }
                }
                accumulate(grads, *b, &[c_out], db);
            }
            if needs(*w) {
                let xd = value(*x).data();
                let mut dw = vec![F::ZERO; c_out * c_in * k];
                for ni in 0..n {
                    for o in 0..c_out {
                        let g_row = &gd[(ni * c_out + o) * len..(ni * c_out + o + 1) * len];
                        for i in 0..c_in {
                            let x_row = &xd[(ni * c_in + i) * len..(ni * c_in + i + 1) * len];
                            for t in 0..k {
                                let (j_lo, j_hi) = conv_range(len, pad, t);
                                if j_lo >= j_hi {
                                    continue;
                                }
                                let u_lo = j_lo + t - pad;
                                dw[(o * c_in + i) * k + t] +=
                                    dot(&g_row[j_lo..j_hi], &x_row[u_lo..u_lo + (j_hi - j_lo)]);
                            }
                        }
                    }
                }
                accumulate(grads, *w, ws, dw);
            }
            if needs(*x) {
                let wd = value(*w).data();
                let mut dx = vec![F::ZERO; n * c_in * len];
                for ni in 0..n {
                    for o in 0..c_out {
                        let g_row = &gd[(ni * c_out + o) * len..(ni * c_out + o + 1) * len];
                        for i in 0..c_in {
                            let dx_row = &mut dx[(ni * c_in + i) * len..(ni * c_in + i + 1) * len];
                            for t in 0..k {
                                let (j_lo, j_hi) = conv_range(len, pad, t);
                                if j_lo >= j_hi {
                                    continue;
                                }
                                let u_lo = j_lo + t - pad;
                                axpy(
                                    wd[(o * c_in + i) * k + t],
                                    &g_row[j_lo..j_hi],
                                    &mut dx_row[u_lo..u_lo + (j_hi - j_lo)],
                                );
                            }
                        }
                    }
                }
                accumulate(grads, *x, xs, dx);
            }
        }

        Op::Gelu { x } => {
            if needs(*x) {
                let dx: Vec<F> = value(*x)
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(&xv, &g)| g * gelu_bwd(xv))
                    .collect();
                accumulate(grads, *x, value(*x).shape(), dx);
            }
        }

        Op::Relu { x } => {
            if needs(*x) {
                let dx: Vec<F> = value(*x)
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(&xv, &g)| if xv > F::ZERO { g } else { F::ZERO })
                    .collect();
                accumulate(grads, *x, value(*x).shape(), dx);
            }
        }

        Op::Add { a, b } => {
            for id in [a, b] {
                if needs(*id) {
                    accumulate(grads, *id, value(*id).shape(), gout.data().to_vec());
                }
            }
        }

        Op::AddRows { x } => {
            if needs(*x) {
                accumulate(grads, *x, value(*x).shape(), gout.data().to_vec());
            }
        }

        Op::Permute { x, perm } => {
            if needs(*x) {
                let inv = inverse_perm(perm);
                let (_, dx) = permute_data(gout.shape(), gout.data(), &inv);
                accumulate(grads, *x, value(*x).shape(), dx);
            }
        }

        Op::Reshape { x } => {
            if needs(*x) {
                accumulate(grads, *x, value(*x).shape(), gout.data().to_vec());
            }
        }

        Op::MaskedMse {
            pred,
            target,
            selected,
            inv_denom,
        } => {
            if needs(*pred) {
                let shape = value(*pred).shape();
                let (b, c, t, j) = (shape[0], shape[1], shape[2], shape[3]);
                let pd = value(*pred).data();
                let td = target.data();
                let g = gout.item() * real::<F>(2.0) * *inv_denom;
                let mut dx = vec![F::ZERO; pd.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        for ti in 0..t {
                            for ji in 0..j {
                                if selected[(bi * t + ti) * j + ji] {
                                    let idx = ((bi * c + ci) * t + ti) * j + ji;
                                    dx[idx] = g * (pd[idx] - td[idx]);
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *pred, shape, dx);
            }
        }

        Op::CrossEntropy { logits, labels, probs } => {
            if needs(*logits) {
                let shape = value(*logits).shape();
                let (b, k) = (shape[0], shape[1]);
                let g = gout.item() / real::<F>(b as f64);
                let mut dx = probs.data().to_vec();
                for (bi, &label) in labels.iter().enumerate() {
                    dx[bi * k + label] -= F::ONE;
                }
                for v in &mut dx {
                    *v *= g;
                }
                accumulate(grads, *logits, shape, dx);
            }
        }

        Op::MeanValidFrames { x, valid, inv_counts } => {
            if needs(*x) {
                let shape = value(*x).shape();
                let (b, t, d) = (shape[0], shape[1], shape[2]);
                let gd = gout.data();
                let mut dx = vec![F::ZERO; b * t * d];
                for bi in 0..b {
                    let g_row = &gd[bi * d..(bi + 1) * d];
                    for ti in 0..t {
                        if valid[bi * t + ti] {
                            axpy(inv_counts[bi], g_row, &mut dx[(bi * t + ti) * d..(bi * t + ti + 1) * d]);
                        }
                    }
                }
                accumulate(grads, *x, shape, dx);
            }
        }
    }
    Ok(())
}
