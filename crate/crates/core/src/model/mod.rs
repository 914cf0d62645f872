//! Small differentiable models with hand-written backward passes.
//!
//! Two architectures are supported: a plain MLP and a single-head
//! self-attention block followed by an MLP head. Parameters live in a flat
//! [`ParamStore`]; each weight matrix (row-major, `out × in`) and each bias
//! vector is its own partition group.

mod attention;
mod dense;

use serde::{Deserialize, Serialize};

use crate::error::{EpiError, Result};
use crate::params::{ParamStore, Partition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    MeanSquaredError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Architecture {
    Mlp,
    /// The input row is read as `seq_len` tokens of `input_dim / seq_len`
    /// features. `widths[0]` is the attention head dimension; the remaining
    /// widths are hidden layers of the MLP head applied to the mean-pooled
    /// attention output.
    ToyAttention { seq_len: usize },
}

/// Architecture description; fixes the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub input_dim: usize,
    pub output_dim: usize,
    pub loss: LossKind,
}

impl ModelSpec {
    pub fn mlp(
        input_dim: usize,
        widths: Vec<usize>,
        output_dim: usize,
        activation: Activation,
        loss: LossKind,
    ) -> Self {
        Self {
            architecture: Architecture::Mlp,
            widths,
            activation,
            input_dim,
            output_dim,
            loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(EpiError::InvalidArgument("model dims must be >= 1".into()));
        }
        if self.widths.contains(&0) {
            return Err(EpiError::InvalidArgument("layer widths must be >= 1".into()));
        }
        if let Architecture::ToyAttention { seq_len } = self.architecture {
            if seq_len == 0 || !self.input_dim.is_multiple_of(seq_len) {
                return Err(EpiError::InvalidArgument(format!(
                    "input dim {} is not divisible into {seq_len} tokens",
                    self.input_dim
                )));
            }
            if self.widths.is_empty() {
                return Err(EpiError::InvalidArgument(
                    "toy-attention needs widths[0] as the head dimension".into(),
                ));
            }
        }
        if self.loss == LossKind::SoftmaxCrossEntropy && self.output_dim < 2 {
            return Err(EpiError::InvalidArgument(
                "cross-entropy needs at least two classes".into(),
            ));
        }
        Ok(())
    }

    /// `(in, out)` of each dense layer, in order.
    fn dense_dims(&self) -> Vec<(usize, usize)> {
        let (first, hidden) = match self.architecture {
            Architecture::Mlp => (self.input_dim, &self.widths[..]),
            Architecture::ToyAttention { .. } => (self.widths[0], &self.widths[1..]),
        };
        let mut sizes = vec![first];
        sizes.extend_from_slice(hidden);
        sizes.push(self.output_dim);
        sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn dense_prefix(&self) -> &'static str {
        match self.architecture {
            Architecture::Mlp => "fc",
            Architecture::ToyAttention { .. } => "head",
        }
    }

    /// Group layout matching this architecture.
    pub fn partition(&self) -> Result<Partition> {
        self.validate()?;
        let mut groups: Vec<(String, usize)> = Vec::new();
        if let Architecture::ToyAttention { seq_len } = self.architecture {
            let token = self.input_dim / seq_len;
            let head = self.widths[0];
            for name in ["attn.query", "attn.key", "attn.value"] {
                groups.push((name.to_string(), head * token));
            }
        }
        let prefix = self.dense_prefix();
        for (l, (i, o)) in self.dense_dims().into_iter().enumerate() {
            groups.push((format!("{prefix}{}.weight", l + 1), i * o));
            groups.push((format!("{prefix}{}.bias", l + 1), o));
        }
        Partition::build(&groups)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.partition()?.dim())
    }

    fn check_store(&self, store: &ParamStore) -> Result<()> {
        let expected = self.partition()?;
        if store.partition() != &expected {
            return Err(EpiError::ShapeMismatch(
                "store partition does not match the model layout".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    /// Row-major `rows × output_dim`.
    Values(Vec<f64>),
}

/// A minibatch from one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Row-major `rows × input_dim`.
    pub inputs: Vec<f64>,
    pub targets: Targets,
    pub rows: usize,
    pub task_id: usize,
}

impl Batch {
    pub fn validate(&self, input_dim: usize, output_dim: usize) -> Result<()> {
        if self.rows == 0 {
            return Err(EpiError::Empty("batch has no rows".into()));
        }
        EpiError::check_len(self.rows * input_dim, self.inputs.len())?;
        match &self.targets {
            Targets::Labels(l) => {
                EpiError::check_len(self.rows, l.len())?;
                if l.iter().any(|&c| c >= output_dim) {
                    return Err(EpiError::ShapeMismatch("label out of range".into()));
                }
            }
            Targets::Values(v) => {
                EpiError::check_len(self.rows * output_dim, v.len())?;
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(EpiError::NonFinite("batch targets".into()));
                }
            }
        }
        if self.inputs.iter().any(|x| !x.is_finite()) {
            return Err(EpiError::NonFinite("batch inputs".into()));
        }
        Ok(())
    }

    /// Rows concatenated with `other`'s; task id is taken from `self`.
    pub fn concat(&self, other: &Batch) -> Result<Batch> {
        let targets = match (&self.targets, &other.targets) {
            (Targets::Labels(a), Targets::Labels(b)) => {
                Targets::Labels(a.iter().chain(b).copied().collect())
            }
            (Targets::Values(a), Targets::Values(b)) => {
                Targets::Values(a.iter().chain(b).copied().collect())
            }
            _ => return Err(EpiError::ShapeMismatch("mixed target kinds".into())),
        };
        Ok(Batch {
            inputs: self.inputs.iter().chain(&other.inputs).copied().collect(),
            targets,
            rows: self.rows + other.rows,
            task_id: self.task_id,
        })
    }

    /// Rows `range` of this batch.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Result<Batch> {
        if range.start >= range.end || range.end > self.rows {
            return Err(EpiError::InvalidArgument(format!("rows {range:?} of a {}-row batch", self.rows)));
        }
        let width = self.inputs.len() / self.rows;
        let targets = match &self.targets {
            Targets::Labels(l) => Targets::Labels(l[range.clone()].to_vec()),
            Targets::Values(v) => {
                let o = v.len() / self.rows;
                Targets::Values(v[range.start * o..range.end * o].to_vec())
            }
        };
        Ok(Batch {
            inputs: self.inputs[range.start * width..range.end * width].to_vec(),
            targets,
            rows: range.len(),
            task_id: self.task_id,
        })
    }
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    dim: usize,
    rows: usize,
    attention: Option<attention::AttentionCache>,
    dense: dense::DenseCache,
    /// dL/d(output), row-major `rows × output_dim`.
    output_grad: Vec<f64>,
}

/// Mean-reduced loss over the batch plus the cache for [`backward`].
pub fn forward_loss(spec: &ModelSpec, store: &ParamStore, batch: &Batch) -> Result<(f64, ForwardCache)> {
    spec.check_store(store)?;
    batch.validate(spec.input_dim, spec.output_dim)?;
    let params = store.values();
    let partition = store.partition();
    let dims = spec.dense_dims();

    let (head_input, attention) = match spec.architecture {
        Architecture::Mlp => (batch.inputs.clone(), None),
        Architecture::ToyAttention { seq_len } => {
            let layout = attention::AttentionLayout::new(spec, seq_len, partition);
            let (pooled, cache) = attention::forward(&layout, params, &batch.inputs, batch.rows);
            (pooled, Some(cache))
        }
    };
    let first_dense = if attention.is_some() { 3 } else { 0 };
    let (output, dense) = dense::forward(
        &dims,
        spec.activation,
        &partition.groups()[first_dense..],
        params,
        head_input,
        batch.rows,
    );
    if output.iter().any(|v| !v.is_finite()) {
        return Err(EpiError::NonFinite("model outputs".into()));
    }
    let (loss, output_grad) = loss_and_grad(spec, &output, &batch.targets, batch.rows)?;
    if !loss.is_finite() {
        return Err(EpiError::NonFinite("loss".into()));
    }
    Ok((
        loss,
        ForwardCache {
            version: store.version(),
            dim: store.dim(),
            rows: batch.rows,
            attention,
            dense,
            output_grad,
        },
    ))
}

/// Gradient of the mean loss, aligned with the store layout.
pub fn backward(spec: &ModelSpec, store: &ParamStore, cache: &ForwardCache) -> Result<Vec<f64>> {
    spec.check_store(store)?;
    if cache.version != store.version() || cache.dim != store.dim() {
        return Err(EpiError::StaleCache);
    }
    let params = store.values();
    let partition = store.partition();
    let mut grad = vec![0.0; store.dim()];
    let first_dense = if cache.attention.is_some() { 3 } else { 0 };
    let head_input_grad = dense::backward(
        &spec.dense_dims(),
        spec.activation,
        &partition.groups()[first_dense..],
        params,
        &cache.dense,
        &cache.output_grad,
        cache.rows,
        &mut grad,
        cache.attention.is_some(),
    );
    if let (Architecture::ToyAttention { seq_len }, Some(att)) = (spec.architecture, &cache.attention) {
        let layout = attention::AttentionLayout::new(spec, seq_len, partition);
        attention::backward(&layout, att, &head_input_grad, cache.rows, &mut grad);
    }
    Ok(grad)
}

/// Forward plus backward in one call.
pub fn loss_and_gradient(spec: &ModelSpec, store: &ParamStore, batch: &Batch) -> Result<(f64, Vec<f64>)> {
    let (loss, cache) = forward_loss(spec, store, batch)?;
    let grad = backward(spec, store, &cache)?;
    Ok((loss, grad))
}

/// Loss only; evaluates against raw parameter values without a store.
pub fn loss_at(spec: &ModelSpec, partition: &Partition, params: &[f64], batch: &Batch) -> Result<f64> {
    let store = ParamStore::from_values(partition.clone(), params.to_vec())?;
    forward_loss(spec, &store, batch).map(|(l, _)| l)
}

/// Raw model outputs (logits or regression values), row-major.
pub fn predict(spec: &ModelSpec, store: &ParamStore, batch: &Batch) -> Result<Vec<f64>> {
    spec.check_store(store)?;
    batch.validate(spec.input_dim, spec.output_dim)?;
    let params = store.values();
    let partition = store.partition();
    let head_input = match spec.architecture {
        Architecture::Mlp => batch.inputs.clone(),
        Architecture::ToyAttention { seq_len } => {
            let layout = attention::AttentionLayout::new(spec, seq_len, partition);
            attention::forward(&layout, params, &batch.inputs, batch.rows).0
        }
    };
    let first_dense = if matches!(spec.architecture, Architecture::Mlp) { 0 } else { 3 };
    let (out, _) = dense::forward(
        &spec.dense_dims(),
        spec.activation,
        &partition.groups()[first_dense..],
        params,
        head_input,
        batch.rows,
    );
    Ok(out)
}

/// Task performance: accuracy for classification, `1 / (1 + MSE)` for
/// regression. Both lie in `[0, 1]` and are positive for regression.
pub fn evaluate(spec: &ModelSpec, store: &ParamStore, eval_set: &Batch) -> Result<f64> {
    if eval_set.rows == 0 {
        return Err(EpiError::Empty("eval set".into()));
    }
    let out = predict(spec, store, eval_set)?;
    let o = spec.output_dim;
    match &eval_set.targets {
        Targets::Labels(labels) => {
            let correct = labels
                .iter()
                .enumerate()
                .filter(|(r, &y)| argmax(&out[r * o..(r + 1) * o]) == y)
                .count();
            Ok(correct as f64 / eval_set.rows as f64)
        }
        Targets::Values(y) => {
            let mse = out.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / out.len() as f64;
            if !mse.is_finite() {
                return Err(EpiError::NonFinite("eval mse".into()));
            }
            Ok(1.0 / (1.0 + mse))
        }
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn loss_and_grad(spec: &ModelSpec, output: &[f64], targets: &Targets, rows: usize) -> Result<(f64, Vec<f64>)> {
    let o = spec.output_dim;
    match (spec.loss, targets) {
        (LossKind::MeanSquaredError, Targets::Values(y)) => {
            let n = (rows * o) as f64;
            let mut loss = 0.0;
            let mut grad = vec![0.0; output.len()];
            for ((g, &p), &t) in grad.iter_mut().zip(output).zip(y) {
                let r = p - t;
                loss += r * r;
                *g = 2.0 * r / n;
            }
            Ok((loss / n, grad))
        }
        (LossKind::SoftmaxCrossEntropy, Targets::Labels(labels)) => {
            let mut loss = 0.0;
            let mut grad = vec![0.0; output.len()];
            let inv_rows = 1.0 / rows as f64;
            for (r, &label) in labels.iter().enumerate() {
                let z = &output[r * o..(r + 1) * o];
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
                let log_norm = max + sum.ln();
                loss += log_norm - z[label];
                for (c, g) in grad[r * o..(r + 1) * o].iter_mut().enumerate() {
                    let p = (z[c] - log_norm).exp();
                    *g = (p - if c == label { 1.0 } else { 0.0 }) * inv_rows;
                }
            }
            Ok(((loss * inv_rows).max(0.0), grad))
        }
        _ => Err(EpiError::ShapeMismatch("targets do not match the loss kind".into())),
    }
}

#[cfg(test)]
mod tests;
