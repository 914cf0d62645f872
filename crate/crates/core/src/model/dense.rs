use crate::params::Group;

use super::Activation;

#[derive(Debug, Clone)]
pub(super) struct DenseCache {
    /// Input to each dense layer, row-major `rows × in`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each dense layer, row-major `rows × out`.
    pre: Vec<Vec<f64>>,
}

/// `groups` holds `weight, bias` pairs for each layer, in order.
pub(super) fn forward(
    dims: &[(usize, usize)],
    act: Activation,
    groups: &[Group],
    params: &[f64],
    input: Vec<f64>,
    rows: usize,
) -> (Vec<f64>, DenseCache) {
    let last = dims.len() - 1;
    let mut inputs = Vec::with_capacity(dims.len());
    let mut pre = Vec::with_capacity(dims.len());
    let mut h = input;
    for (l, &(n_in, n_out)) in dims.iter().enumerate() {
        let w = &params[groups[2 * l].range()];
        let b = &params[groups[2 * l + 1].range()];
        let mut z = vec![0.0; rows * n_out];
        for r in 0..rows {
            let x = &h[r * n_in..(r + 1) * n_in];
            let zr = &mut z[r * n_out..(r + 1) * n_out];
            for (o, zo) in zr.iter_mut().enumerate() {
                let wrow = &w[o * n_in..(o + 1) * n_in];
                *zo = b[o] + dot(wrow, x);
            }
        }
        let next = if l == last {
            z.clone()
        } else {
            z.iter().map(|&v| act.apply(v)).collect()
        };
        inputs.push(h);
        pre.push(z);
        h = next;
    }
    (h, DenseCache { inputs, pre })
}

/// Accumulates weight/bias gradients into `grad` and returns dL/d(input) when
/// `need_input_grad` is set (otherwise an empty vector).
#[allow(clippy::too_many_arguments)]
pub(super) fn backward(
    dims: &[(usize, usize)],
    act: Activation,
    groups: &[Group],
    params: &[f64],
    cache: &DenseCache,
    output_grad: &[f64],
    rows: usize,
    grad: &mut [f64],
    need_input_grad: bool,
) -> Vec<f64> {
    let mut dz = output_grad.to_vec();
    for l in (0..dims.len()).rev() {
        let (n_in, n_out) = dims[l];
        let wg = groups[2 * l].range();
        let bg = groups[2 * l + 1].range();
        let h = &cache.inputs[l];
        {
            let (gw, rest) = grad.split_at_mut(bg.start);
            let gw = &mut gw[wg.clone()];
            let gb = &mut rest[..n_out];
            for r in 0..rows {
                let x = &h[r * n_in..(r + 1) * n_in];
                for o in 0..n_out {
                    let d = dz[r * n_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, &xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
        }
        if l == 0 && !need_input_grad {
            return Vec::new();
        }
        let w = &params[wg];
        let mut dh = vec![0.0; rows * n_in];
        for r in 0..rows {
            let dhr = &mut dh[r * n_in..(r + 1) * n_in];
            for o in 0..n_out {
                let d = dz[r * n_out + o];
                if d == 0.0 {
                    continue;
                }
                for (g, &wi) in dhr.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *g += d * wi;
                }
            }
        }
        if l == 0 {
            return dh;
        }
        let z_prev = &cache.pre[l - 1];
        for (g, &z) in dh.iter_mut().zip(z_prev) {
            *g *= act.derivative(z);
        }
        dz = dh;
    }
    unreachable!("dense stack has at least one layer")
}

pub(super) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
