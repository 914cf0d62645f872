//! Single-head self-attention over `seq_len` tokens, mean-pooled.

use crate::params::Partition;

use super::dense::dot;
use super::ModelSpec;

pub(super) struct AttentionLayout {
    seq_len: usize,
    token_dim: usize,
    head_dim: usize,
    query: std::ops::Range<usize>,
    key: std::ops::Range<usize>,
    value: std::ops::Range<usize>,
}

impl AttentionLayout {
    pub(super) fn new(spec: &ModelSpec, seq_len: usize, partition: &Partition) -> Self {
        let g = partition.groups();
        Self {
            seq_len,
            token_dim: spec.input_dim / seq_len,
            head_dim: spec.widths[0],
            query: g[0].range(),
            key: g[1].range(),
            value: g[2].range(),
        }
    }
}

#[derive(Debug, Clone)]
pub(super) struct AttentionCache {
    inputs: Vec<f64>,
    /// Per row: `seq_len × head_dim` blocks.
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per row: `seq_len × seq_len` attention weights.
    attn: Vec<f64>,
}

/// Projects `x` (`seq_len × token_dim`) with `w` (`head_dim × token_dim`).
fn project(w: &[f64], x: &[f64], t_len: usize, c: usize, dk: usize, out: &mut [f64]) {
    for t in 0..t_len {
        let xt = &x[t * c..(t + 1) * c];
        for k in 0..dk {
            out[t * dk + k] = dot(&w[k * c..(k + 1) * c], xt);
        }
    }
}

pub(super) fn forward(
    layout: &AttentionLayout,
    params: &[f64],
    inputs: &[f64],
    rows: usize,
) -> (Vec<f64>, AttentionCache) {
    let (t_len, c, dk) = (layout.seq_len, layout.token_dim, layout.head_dim);
    let scale = 1.0 / (dk as f64).sqrt();
    let wq = &params[layout.query.clone()];
    let wk = &params[layout.key.clone()];
    let wv = &params[layout.value.clone()];
    let block = t_len * dk;
    let mut q = vec![0.0; rows * block];
    let mut k = vec![0.0; rows * block];
    let mut v = vec![0.0; rows * block];
    let mut attn = vec![0.0; rows * t_len * t_len];
    let mut pooled = vec![0.0; rows * dk];
    for r in 0..rows {
        let x = &inputs[r * t_len * c..(r + 1) * t_len * c];
        let qr = &mut q[r * block..(r + 1) * block];
        project(wq, x, t_len, c, dk, qr);
        let kr = &mut k[r * block..(r + 1) * block];
        project(wk, x, t_len, c, dk, kr);
        let vr = &mut v[r * block..(r + 1) * block];
        project(wv, x, t_len, c, dk, vr);
        let (qr, kr, vr) = (
            &q[r * block..(r + 1) * block],
            &k[r * block..(r + 1) * block],
            &v[r * block..(r + 1) * block],
        );
        let ar = &mut attn[r * t_len * t_len..(r + 1) * t_len * t_len];
        for t in 0..t_len {
            let row = &mut ar[t * t_len..(t + 1) * t_len];
            for (u, s) in row.iter_mut().enumerate() {
                *s = scale * dot(&qr[t * dk..(t + 1) * dk], &kr[u * dk..(u + 1) * dk]);
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            for s in row.iter_mut() {
                *s /= sum;
            }
        }
        let pr = &mut pooled[r * dk..(r + 1) * dk];
        for t in 0..t_len {
            for u in 0..t_len {
                let a = ar[t * t_len + u] / t_len as f64;
                for (p, &vu) in pr.iter_mut().zip(&vr[u * dk..(u + 1) * dk]) {
                    *p += a * vu;
                }
            }
        }
    }
    (
        pooled,
        AttentionCache {
            inputs: inputs.to_vec(),
            q,
            k,
            v,
            attn,
        },
    )
}

/// `pooled_grad` is dL/d(pooled), `rows × head_dim`.
pub(super) fn backward(
    layout: &AttentionLayout,
    cache: &AttentionCache,
    pooled_grad: &[f64],
    rows: usize,
    grad: &mut [f64],
) {
    let (t_len, c, dk) = (layout.seq_len, layout.token_dim, layout.head_dim);
    let scale = 1.0 / (dk as f64).sqrt();
    let block = t_len * dk;
    let mut dq = vec![0.0; block];
    let mut dk_buf = vec![0.0; block];
    let mut dv = vec![0.0; block];
    let mut da = vec![0.0; t_len];
    for r in 0..rows {
        let x = &cache.inputs[r * t_len * c..(r + 1) * t_len * c];
        let qr = &cache.q[r * block..(r + 1) * block];
        let kr = &cache.k[r * block..(r + 1) * block];
        let vr = &cache.v[r * block..(r + 1) * block];
        let ar = &cache.attn[r * t_len * t_len..(r + 1) * t_len * t_len];
        // Every token's output receives the same pooled gradient / seq_len.
        let d_out: Vec<f64> = pooled_grad[r * dk..(r + 1) * dk]
            .iter()
            .map(|g| g / t_len as f64)
            .collect();
        dq.fill(0.0);
        dk_buf.fill(0.0);
        dv.fill(0.0);
        for t in 0..t_len {
            let arow = &ar[t * t_len..(t + 1) * t_len];
            for u in 0..t_len {
                da[u] = dot(&d_out, &vr[u * dk..(u + 1) * dk]);
                for (g, &d) in dv[u * dk..(u + 1) * dk].iter_mut().zip(&d_out) {
                    *g += arow[u] * d;
                }
            }
            let weighted: f64 = arow.iter().zip(&da).map(|(a, d)| a * d).sum();
            for u in 0..t_len {
                let ds = arow[u] * (da[u] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                for kk in 0..dk {
                    dq[t * dk + kk] += ds * kr[u * dk + kk];
                    dk_buf[u * dk + kk] += ds * qr[t * dk + kk];
                }
            }
        }
        for (range, d) in [
            (layout.query.clone(), &dq),
            (layout.key.clone(), &dk_buf),
            (layout.value.clone(), &dv),
        ] {
            let gw = &mut grad[range];
            for t in 0..t_len {
                let xt = &x[t * c..(t + 1) * c];
                for kk in 0..dk {
                    let g = d[t * dk + kk];
                    if g == 0.0 {
                        continue;
                    }
                    for (w, &xi) in gw[kk * c..(kk + 1) * c].iter_mut().zip(xt) {
                        *w += g * xi;
                    }
                }
            }
        }
    }
}
