//! Local loss functions: a softmax linear classifier (MCLR) and a two-layer
//! leaky-ReLU network (DNN), both with hand-written backprop.
//!
//! Parameter layout (row-major, flattened in this order):
//!
//! * MCLR: `W [C x d]`, `b [C]`
//! * DNN: `W1 [h x d]`, `b1 [h]`, `W2 [C x h]`, `b2 [C]`

use serde::{Deserialize, Serialize};

use crate::bregman::Objective;
use crate::error::{Error, Result};
use crate::param_space::ParamVector;

pub const DEFAULT_HIDDEN_DIM: usize = 100;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mclr,
    Dnn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Ignored for MCLR.
    pub hidden_dim: usize,
    /// Ignored for MCLR.
    pub leaky_slope: f64,
}

impl ModelSpec {
    pub fn mclr(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mclr,
            input_dim,
            num_classes,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn dnn(input_dim: usize, num_classes: usize, hidden_dim: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Dnn,
            input_dim,
            num_classes,
            hidden_dim,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("model.input_dim", "must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("model.num_classes", "must be >= 2"));
        }
        if self.kind == ModelKind::Dnn {
            if self.hidden_dim == 0 {
                return Err(Error::invalid("model.hidden_dim", "must be >= 1"));
            }
            if !(self.leaky_slope.is_finite() && (0.0..1.0).contains(&self.leaky_slope)) {
                return Err(Error::invalid(
                    "model.leaky_slope",
                    format!("must lie in [0, 1), got {}", self.leaky_slope),
                ));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let (d, c, h) = (self.input_dim, self.num_classes, self.hidden_dim);
        match self.kind {
            ModelKind::Mclr => (d + 1) * c,
            ModelKind::Dnn => (d + 1) * h + (h + 1) * c,
        }
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.dim() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                left: params.dim(),
                right: self.parameter_count(),
            });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.dim != self.input_dim {
            return Err(Error::DimensionMismatch {
                left: batch.dim,
                right: self.input_dim,
            });
        }
        if let Some((row, &label)) = batch
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= self.num_classes)
        {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// Offsets of the last-layer bias block within the flat parameters.
    pub fn output_bias_range(&self) -> std::ops::Range<usize> {
        let end = self.parameter_count();
        end - self.num_classes..end
    }
}

/// Row-major features with one integer label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("batch.dim", "must be >= 1"));
        }
        if inputs.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                left: inputs.len(),
                right: labels.len() * dim,
            });
        }
        if let Some(i) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!(
                "batch feature at row {} column {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Batch {
            inputs,
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }
}

fn affine(weights: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (k, o) in out.iter_mut().enumerate() {
        let row = &weights[k * n_in..(k + 1) * n_in];
        *o = bias[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
}

/// Replaces `logits` by softmax probabilities and returns `logsumexp`.
fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
    max + sum.ln()
}

struct Scratch {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Self {
        let h = if spec.kind == ModelKind::Dnn {
            spec.hidden_dim
        } else {
            0
        };
        Scratch {
            hidden_pre: vec![0.0; h],
            hidden: vec![0.0; h],
            logits: vec![0.0; spec.num_classes],
        }
    }
}

fn forward_row(spec: &ModelSpec, p: &[f64], x: &[f64], s: &mut Scratch) {
    let (d, c, h) = (spec.input_dim, spec.num_classes, spec.hidden_dim);
    match spec.kind {
        ModelKind::Mclr => affine(&p[..c * d], &p[c * d..], x, &mut s.logits),
        ModelKind::Dnn => {
            let (w1, rest) = p.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            affine(w1, b1, x, &mut s.hidden_pre);
            for (a, &z) in s.hidden.iter_mut().zip(&s.hidden_pre) {
                *a = if z > 0.0 { z } else { spec.leaky_slope * z };
            }
            affine(w2, b2, &s.hidden, &mut s.logits);
        }
    }
}

/// Logits for every row, `n x C` row-major.
pub fn logits(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    if batch.dim != spec.input_dim {
        return Err(Error::DimensionMismatch {
            left: batch.dim,
            right: spec.input_dim,
        });
    }
    let mut s = Scratch::new(spec);
    let mut out = Vec::with_capacity(batch.len() * spec.num_classes);
    for i in 0..batch.len() {
        forward_row(spec, params, batch.row(i), &mut s);
        out.extend_from_slice(&s.logits);
    }
    Ok(out)
}

/// Mean negative log-likelihood of the batch.
pub fn forward_loss(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    Ok(per_example_losses(spec, params, batch)?.iter().sum::<f64>() / batch.len().max(1) as f64)
}

/// Negative log-likelihood of each row.
pub fn per_example_losses(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    spec.check_batch(batch)?;
    let mut s = Scratch::new(spec);
    let mut out = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        forward_row(spec, params, batch.row(i), &mut s);
        let y = batch.labels[i];
        let z_y = s.logits[y];
        let lse = softmax_in_place(&mut s.logits);
        out.push(lse - z_y);
    }
    Ok(out)
}

/// Exact gradient of [`forward_loss`].
pub fn gradient(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    value_and_gradient(spec, params, batch).map(|(_, g)| g)
}

pub fn value_and_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    spec.check_params(params)?;
    spec.check_batch(batch)?;
    let (d, c, h) = (spec.input_dim, spec.num_classes, spec.hidden_dim);
    let p = params.as_slice();
    let mut grad = vec![0.0; p.len()];
    let mut s = Scratch::new(spec);
    let mut loss = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut d_hidden = vec![0.0; if spec.kind == ModelKind::Dnn { h } else { 0 }];

    for i in 0..batch.len() {
        let x = batch.row(i);
        let y = batch.labels[i];
        forward_row(spec, p, x, &mut s);
        let z_y = s.logits[y];
        let lse = softmax_in_place(&mut s.logits);
        loss += lse - z_y;
        // s.logits now holds probabilities; turn it into dL/dz for this row
        s.logits[y] -= 1.0;
        for v in s.logits.iter_mut() {
            *v *= scale;
        }
        let dz = &s.logits;

        match spec.kind {
            ModelKind::Mclr => {
                let (gw, gb) = grad.split_at_mut(c * d);
                for k in 0..c {
                    let row = &mut gw[k * d..(k + 1) * d];
                    for (g, v) in row.iter_mut().zip(x) {
                        *g += dz[k] * v;
                    }
                    gb[k] += dz[k];
                }
            }
            ModelKind::Dnn => {
                let w2 = &p[h * d + h..h * d + h + c * h];
                let (gw1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                d_hidden.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..c {
                    let grow = &mut gw2[k * h..(k + 1) * h];
                    let wrow = &w2[k * h..(k + 1) * h];
                    for j in 0..h {
                        grow[j] += dz[k] * s.hidden[j];
                        d_hidden[j] += wrow[j] * dz[k];
                    }
                    gb2[k] += dz[k];
                }
                for j in 0..h {
                    let slope = if s.hidden_pre[j] > 0.0 {
                        1.0
                    } else {
                        spec.leaky_slope
                    };
                    let dpre = d_hidden[j] * slope;
                    let grow = &mut gw1[j * d..(j + 1) * d];
                    for (g, v) in grow.iter_mut().zip(x) {
                        *g += dpre * v;
                    }
                    gb1[j] += dpre;
                }
            }
        }
    }
    let grad = ParamVector::from_raw(grad);
    grad.ensure_finite(|| "model gradient".into())?;
    Ok((loss * scale, grad))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &z) in v.iter().enumerate().skip(1) {
        if z > v[best] {
            best = k;
        }
    }
    best
}

/// Argmax class per row; ties go to the lowest class index.
pub fn predict(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<Vec<usize>> {
    let z = logits(spec, params, batch)?;
    Ok(z.chunks(spec.num_classes).map(argmax).collect())
}

/// Per-row loss and prediction in one forward pass.
pub fn evaluate_rows(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<Vec<(f64, usize)>> {
    spec.check_params(params)?;
    spec.check_batch(batch)?;
    let mut s = Scratch::new(spec);
    let mut out = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        forward_row(spec, params, batch.row(i), &mut s);
        let pred = argmax(&s.logits);
        let z_y = s.logits[batch.labels[i]];
        let lse = softmax_in_place(&mut s.logits);
        out.push((lse - z_y, pred));
    }
    Ok(out)
}

/// A model's mean batch loss viewed as an [`Objective`].
pub struct BatchObjective<'a> {
    pub spec: &'a ModelSpec,
    pub batch: &'a Batch,
}

impl Objective for BatchObjective<'_> {
    fn value(&self, params: &ParamVector) -> Result<f64> {
        forward_loss(self.spec, params, self.batch)
    }

    fn gradient(&self, params: &ParamVector) -> Result<ParamVector> {
        gradient(self.spec, params, self.batch)
    }
}
