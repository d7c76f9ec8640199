//! Layer specifications and their forward / backward kernels.
//!
//! Sequence tensors are `[batch, time, channels]`; feature tensors are
//! `[batch, features]`. Kernels take and return whole batches.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// Causal dilated convolution; output length equals input length.
    Conv1d {
        filters: usize,
        kernel_size: usize,
        dilation: usize,
        activation: Activation,
        causal: bool,
    },
    BatchNorm {
        momentum: f64,
        epsilon: f64,
    },
    Lstm {
        units: usize,
        return_sequences: bool,
    },
    /// Applied along the last axis.
    Dense {
        units: usize,
        activation: Activation,
    },
    /// Concatenates all node inputs along the last axis.
    Concat,
    /// `[batch, time, channels] -> [batch, channels]` at the final time step.
    LastStep,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Concat => "concat",
            LayerSpec::LastStep => "last_step",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Graph(m.to_string()));
        match *self {
            LayerSpec::Conv1d { filters, kernel_size, dilation, causal, .. } => {
                if filters == 0 || kernel_size == 0 || dilation == 0 {
                    return bad("conv1d needs filters, kernel_size and dilation >= 1");
                }
                if !causal {
                    return bad("only causal conv1d is supported");
                }
            }
            LayerSpec::BatchNorm { momentum, epsilon } => {
                if !(0.0..1.0).contains(&momentum) || !(epsilon > 0.0) {
                    return bad("batch_norm needs 0 <= momentum < 1 and epsilon > 0");
                }
            }
            LayerSpec::Lstm { units, .. } | LayerSpec::Dense { units, .. } => {
                if units == 0 {
                    return bad("units must be >= 1");
                }
            }
            LayerSpec::Concat | LayerSpec::LastStep => {}
        }
        Ok(())
    }

    /// Per-sample output shape for the given per-sample input shapes.
    pub fn output_shape(&self, inputs: &[Vec<usize>]) -> Result<Vec<usize>> {
        let one = || -> Result<&Vec<usize>> {
            if inputs.len() != 1 {
                return Err(Error::Graph(format!("{} takes exactly one input, got {}", self.kind(), inputs.len())));
            }
            Ok(&inputs[0])
        };
        let seq = |s: &Vec<usize>| -> Result<(usize, usize)> {
            match s.as_slice() {
                [t, c] => Ok((*t, *c)),
                _ => Err(Error::Graph(format!("{} expects a [time, channels] input, got {s:?}", self.kind()))),
            }
        };
        match self {
            LayerSpec::Conv1d { filters, .. } => {
                let (t, _) = seq(one()?)?;
                Ok(vec![t, *filters])
            }
            LayerSpec::BatchNorm { .. } => Ok(one()?.clone()),
            LayerSpec::Lstm { units, return_sequences } => {
                let (t, _) = seq(one()?)?;
                Ok(if *return_sequences { vec![t, *units] } else { vec![*units] })
            }
            LayerSpec::Dense { units, .. } => {
                let mut s = one()?.clone();
                if s.is_empty() {
                    return Err(Error::Graph("dense input has no feature axis".into()));
                }
                *s.last_mut().expect("non-empty") = *units;
                Ok(s)
            }
            LayerSpec::Concat => {
                if inputs.is_empty() {
                    return Err(Error::Graph("concat needs at least one input".into()));
                }
                let lead = &inputs[0][..inputs[0].len() - 1];
                let mut total = 0;
                for s in inputs {
                    if s.is_empty() || &s[..s.len() - 1] != lead {
                        return Err(Error::Graph(format!("concat inputs disagree on leading axes: {inputs:?}")));
                    }
                    total += s[s.len() - 1];
                }
                let mut out = lead.to_vec();
                out.push(total);
                Ok(out)
            }
            LayerSpec::LastStep => {
                let (_, c) = seq(one()?)?;
                Ok(vec![c])
            }
        }
    }

    /// Parameter names and shapes given the per-sample input shapes.
    pub fn param_shapes(&self, inputs: &[Vec<usize>]) -> Vec<(&'static str, Vec<usize>)> {
        let last = |s: &Vec<usize>| *s.last().unwrap_or(&0);
        match self {
            LayerSpec::Conv1d { filters, kernel_size, .. } => {
                vec![("kernel", vec![*kernel_size, last(&inputs[0]), *filters]), ("bias", vec![*filters])]
            }
            LayerSpec::BatchNorm { .. } => {
                let c = last(&inputs[0]);
                vec![("gamma", vec![c]), ("beta", vec![c]), ("moving_mean", vec![c]), ("moving_var", vec![c])]
            }
            LayerSpec::Lstm { units, .. } => vec![
                ("kernel", vec![last(&inputs[0]), 4 * units]),
                ("recurrent_kernel", vec![*units, 4 * units]),
                ("bias", vec![4 * units]),
            ],
            LayerSpec::Dense { units, .. } => vec![("kernel", vec![last(&inputs[0]), *units]), ("bias", vec![*units])],
            LayerSpec::Concat | LayerSpec::LastStep => Vec::new(),
        }
    }
}

/// Parameters updated by the optimizer (batch-norm moving statistics are not).
pub fn is_trainable(param: &str) -> bool {
    !matches!(param, "moving_mean" | "moving_var")
}

fn seq_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [b, t, c] => Ok((*b, *t, *c)),
        s => Err(Error::shape(format!("expected [batch, time, channels], got {s:?}"))),
    }
}

// ---------------------------------------------------------------- conv1d

/// Causal dilated convolution: `out[b,t,f] = act(bias[f] + Σ_k Σ_c kernel[k,c,f] · x[b, t - (K-1-k)·d, c])`,
/// with zeros for negative time indices.
pub fn conv1d_forward(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    dilation: usize,
    activation: Activation,
) -> Result<Tensor> {
    conv1d_forward_tail(x, kernel, bias, dilation, activation, usize::MAX)
}

/// Like [`conv1d_forward`] but only the last `steps` time steps are
/// computed; earlier outputs are left at zero.
pub fn conv1d_forward_tail(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    dilation: usize,
    activation: Activation,
    steps: usize,
) -> Result<Tensor> {
    let (batch, time, cin) = seq_dims(x)?;
    let (k_size, k_in, filters) = match kernel.shape() {
        [k, c, f] => (*k, *c, *f),
        s => return Err(Error::shape(format!("conv kernel must be 3-d, got {s:?}"))),
    };
    if k_in != cin || bias.len() != filters {
        return Err(Error::shape(format!(
            "conv kernel {:?} / bias {:?} do not fit input channels {cin}",
            kernel.shape(),
            bias.shape()
        )));
    }
    let xd = x.data();
    let kd = kernel.data();
    let mut out = vec![0.0; batch * time * filters];
    let first = time.saturating_sub(steps);
    for b in 0..batch {
        for t in first..time {
            let o = &mut out[(b * time + t) * filters..(b * time + t + 1) * filters];
            o.copy_from_slice(bias.data());
            for k in 0..k_size {
                let back = (k_size - 1 - k) * dilation;
                if back > t {
                    continue;
                }
                let src = &xd[(b * time + t - back) * cin..(b * time + t - back + 1) * cin];
                for (c, &xv) in src.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let w = &kd[(k * cin + c) * filters..(k * cin + c + 1) * filters];
                    for (ov, wv) in o.iter_mut().zip(w) {
                        *ov += xv * wv;
                    }
                }
            }
            for v in o.iter_mut() {
                *v = activation.apply(*v);
            }
        }
    }
    Tensor::new(vec![batch, time, filters], out)
}

/// Returns `(d_input, d_kernel, d_bias)`.
pub fn conv1d_backward(
    x: &Tensor,
    out: &Tensor,
    kernel: &Tensor,
    dilation: usize,
    activation: Activation,
    d_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, time, cin) = seq_dims(x)?;
    let (k_size, _, filters) = match kernel.shape() {
        [k, c, f] => (*k, *c, *f),
        s => return Err(Error::shape(format!("conv kernel must be 3-d, got {s:?}"))),
    };
    if d_out.shape() != out.shape() {
        return Err(Error::shape("conv gradient shape differs from its output"));
    }
    let xd = x.data();
    let kd = kernel.data();
    let mut d_pre = d_out.data().to_vec();
    for (g, y) in d_pre.iter_mut().zip(out.data()) {
        *g *= activation.derivative_from_output(*y);
    }
    let mut dx = vec![0.0; xd.len()];
    let mut dk = vec![0.0; kd.len()];
    let mut db = vec![0.0; filters];
    for b in 0..batch {
        for t in 0..time {
            let g = &d_pre[(b * time + t) * filters..(b * time + t + 1) * filters];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            for (acc, gv) in db.iter_mut().zip(g) {
                *acc += gv;
            }
            for k in 0..k_size {
                let back = (k_size - 1 - k) * dilation;
                if back > t {
                    continue;
                }
                let row = (b * time + t - back) * cin;
                for c in 0..cin {
                    let xv = xd[row + c];
                    let w_off = (k * cin + c) * filters;
                    let w = &kd[w_off..w_off + filters];
                    let dw = &mut dk[w_off..w_off + filters];
                    let mut acc = 0.0;
                    for f in 0..filters {
                        dw[f] += xv * g[f];
                        acc += w[f] * g[f];
                    }
                    dx[row + c] += acc;
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
        Tensor::new(vec![filters], db)?,
    ))
}

// ----------------------------------------------------------------- dense

pub fn dense_forward(x: &Tensor, kernel: &Tensor, bias: &Tensor, activation: Activation) -> Result<Tensor> {
    let cin = x.last_dim();
    let (k_in, units) = match kernel.shape() {
        [i, u] => (*i, *u),
        s => return Err(Error::shape(format!("dense kernel must be 2-d, got {s:?}"))),
    };
    if k_in != cin || bias.len() != units {
        return Err(Error::shape(format!("dense kernel {:?} does not fit input features {cin}", kernel.shape())));
    }
    let rows = x.len() / cin;
    let kd = kernel.data();
    let mut out = vec![0.0; rows * units];
    for r in 0..rows {
        let o = &mut out[r * units..(r + 1) * units];
        o.copy_from_slice(bias.data());
        for (c, &xv) in x.data()[r * cin..(r + 1) * cin].iter().enumerate() {
            for (ov, wv) in o.iter_mut().zip(&kd[c * units..(c + 1) * units]) {
                *ov += xv * wv;
            }
        }
        for v in o.iter_mut() {
            *v = activation.apply(*v);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("non-empty shape") = units;
    Tensor::new(shape, out)
}

pub fn dense_backward(
    x: &Tensor,
    out: &Tensor,
    kernel: &Tensor,
    activation: Activation,
    d_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let cin = x.last_dim();
    let units = kernel.shape()[1];
    let rows = x.len() / cin;
    let kd = kernel.data();
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; kd.len()];
    let mut db = vec![0.0; units];
    let mut g = vec![0.0; units];
    for r in 0..rows {
        for u in 0..units {
            g[u] = d_out.data()[r * units + u] * activation.derivative_from_output(out.data()[r * units + u]);
            db[u] += g[u];
        }
        for c in 0..cin {
            let xv = x.data()[r * cin + c];
            let w = &kd[c * units..(c + 1) * units];
            let dw = &mut dk[c * units..(c + 1) * units];
            let mut acc = 0.0;
            for u in 0..units {
                dw[u] += xv * g[u];
                acc += w[u] * g[u];
            }
            dx[r * cin + c] = acc;
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), dx)?, Tensor::new(kernel.shape().to_vec(), dk)?, Tensor::new(vec![units], db)?))
}

// ------------------------------------------------------------------ lstm

/// Gate activations saved for backpropagation through time.
#[derive(Clone, Debug)]
pub struct LstmCache {
    /// `[batch, time, 4·units]`, gate order input, forget, candidate, output (post-activation).
    gates: Vec<f64>,
    /// `[batch, time, units]` cell state after each step.
    cells: Vec<f64>,
    /// `[batch, time, units]` hidden state after each step.
    hidden: Vec<f64>,
}

/// Standard LSTM with zero initial state. Gate order in the fused weights is
/// input, forget, candidate, output.
pub fn lstm_forward(
    x: &Tensor,
    kernel: &Tensor,
    recurrent: &Tensor,
    bias: &Tensor,
    return_sequences: bool,
) -> Result<(Tensor, LstmCache)> {
    let (batch, time, cin) = seq_dims(x)?;
    let units = recurrent.shape()[0];
    if kernel.shape() != [cin, 4 * units] || recurrent.shape() != [units, 4 * units] || bias.len() != 4 * units {
        return Err(Error::shape(format!(
            "lstm weights {:?}/{:?}/{:?} do not fit input channels {cin}",
            kernel.shape(),
            recurrent.shape(),
            bias.shape()
        )));
    }
    let g4 = 4 * units;
    let xd = x.data();
    let kd = kernel.data();
    let rd = recurrent.data();
    let mut gates = vec![0.0; batch * time * g4];
    let mut cells = vec![0.0; batch * time * units];
    let mut hidden = vec![0.0; batch * time * units];
    let mut z = vec![0.0; g4];
    let zero = vec![0.0; units];
    for b in 0..batch {
        for t in 0..time {
            z.copy_from_slice(bias.data());
            for (c, &xv) in xd[(b * time + t) * cin..(b * time + t + 1) * cin].iter().enumerate() {
                for (zv, wv) in z.iter_mut().zip(&kd[c * g4..(c + 1) * g4]) {
                    *zv += xv * wv;
                }
            }
            let (h_prev, c_prev) = if t == 0 {
                (&zero[..], &zero[..])
            } else {
                let off = (b * time + t - 1) * units;
                (&hidden[off..off + units], &cells[off..off + units])
            };
            for (u, &hv) in h_prev.iter().enumerate() {
                for (zv, wv) in z.iter_mut().zip(&rd[u * g4..(u + 1) * g4]) {
                    *zv += hv * wv;
                }
            }
            let mut c_new = vec![0.0; units];
            let mut h_new = vec![0.0; units];
            let goff = (b * time + t) * g4;
            for u in 0..units {
                let i = sigmoid(z[u]);
                let f = sigmoid(z[units + u]);
                let g = z[2 * units + u].tanh();
                let o = sigmoid(z[3 * units + u]);
                gates[goff + u] = i;
                gates[goff + units + u] = f;
                gates[goff + 2 * units + u] = g;
                gates[goff + 3 * units + u] = o;
                c_new[u] = f * c_prev[u] + i * g;
                h_new[u] = o * c_new[u].tanh();
            }
            let off = (b * time + t) * units;
            cells[off..off + units].copy_from_slice(&c_new);
            hidden[off..off + units].copy_from_slice(&h_new);
        }
    }
    let out = if return_sequences {
        Tensor::new(vec![batch, time, units], hidden.clone())?
    } else {
        let mut last = Vec::with_capacity(batch * units);
        for b in 0..batch {
            let off = (b * time + time - 1) * units;
            last.extend_from_slice(&hidden[off..off + units]);
        }
        Tensor::new(vec![batch, units], last)?
    };
    Ok((out, LstmCache { gates, cells, hidden }))
}

/// Backpropagation through time. Returns `(d_input, d_kernel, d_recurrent, d_bias)`.
pub fn lstm_backward(
    x: &Tensor,
    cache: &LstmCache,
    kernel: &Tensor,
    recurrent: &Tensor,
    return_sequences: bool,
    d_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let (batch, time, cin) = seq_dims(x)?;
    let units = recurrent.shape()[0];
    let g4 = 4 * units;
    let xd = x.data();
    let kd = kernel.data();
    let rd = recurrent.data();
    let mut dx = vec![0.0; xd.len()];
    let mut dk = vec![0.0; kd.len()];
    let mut dr = vec![0.0; rd.len()];
    let mut db = vec![0.0; g4];
    let mut dz = vec![0.0; g4];
    for b in 0..batch {
        let mut dh_next = vec![0.0; units];
        let mut dc_next = vec![0.0; units];
        for t in (0..time).rev() {
            let off = (b * time + t) * units;
            let goff = (b * time + t) * g4;
            let mut dh = dh_next.clone();
            if return_sequences {
                for u in 0..units {
                    dh[u] += d_out.data()[off + u];
                }
            } else if t == time - 1 {
                for u in 0..units {
                    dh[u] += d_out.data()[b * units + u];
                }
            }
            for u in 0..units {
                let i = cache.gates[goff + u];
                let f = cache.gates[goff + units + u];
                let g = cache.gates[goff + 2 * units + u];
                let o = cache.gates[goff + 3 * units + u];
                let c = cache.cells[off + u];
                let c_prev = if t == 0 { 0.0 } else { cache.cells[off - units + u] };
                let tc = c.tanh();
                let d_o = dh[u] * tc;
                let dc = dh[u] * o * (1.0 - tc * tc) + dc_next[u];
                dz[u] = dc * g * i * (1.0 - i);
                dz[units + u] = dc * c_prev * f * (1.0 - f);
                dz[2 * units + u] = dc * i * (1.0 - g * g);
                dz[3 * units + u] = d_o * o * (1.0 - o);
                dc_next[u] = dc * f;
            }
            for (acc, v) in db.iter_mut().zip(&dz) {
                *acc += v;
            }
            let xrow = (b * time + t) * cin;
            for c in 0..cin {
                let xv = xd[xrow + c];
                let w = &kd[c * g4..(c + 1) * g4];
                let dw = &mut dk[c * g4..(c + 1) * g4];
                let mut acc = 0.0;
                for j in 0..g4 {
                    dw[j] += xv * dz[j];
                    acc += w[j] * dz[j];
                }
                dx[xrow + c] = acc;
            }
            for u in 0..units {
                let hv = if t == 0 { 0.0 } else { cache.hidden[off - units + u] };
                let w = &rd[u * g4..(u + 1) * g4];
                let dw = &mut dr[u * g4..(u + 1) * g4];
                let mut acc = 0.0;
                for j in 0..g4 {
                    dw[j] += hv * dz[j];
                    acc += w[j] * dz[j];
                }
                dh_next[u] = acc;
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
        Tensor::new(recurrent.shape().to_vec(), dr)?,
        Tensor::new(vec![g4], db)?,
    ))
}

// ------------------------------------------------------------ batch norm

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    /// Batch statistics, used to update the moving averages.
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Training-mode batch norm over all positions of the last axis.
pub fn batch_norm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor, epsilon: f64) -> Result<(Tensor, BatchNormCache)> {
    let c = x.last_dim();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape("batch norm parameters do not fit channels"));
    }
    let rows = x.len() / c;
    let xd = x.data();
    let mut mean = vec![0.0; c];
    for r in 0..rows {
        for (m, v) in mean.iter_mut().zip(&xd[r * c..(r + 1) * c]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; c];
    for r in 0..rows {
        for j in 0..c {
            let d = xd[r * c + j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= rows as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
    let mut normalized = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    for r in 0..rows {
        for j in 0..c {
            let n = (xd[r * c + j] - mean[j]) * inv_std[j];
            normalized[r * c + j] = n;
            out[r * c + j] = gamma.data()[j] * n + beta.data()[j];
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, BatchNormCache { normalized, inv_std, mean, var }))
}

pub fn batch_norm_train_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    d_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let c = gamma.len();
    let rows = d_out.len() / c;
    let dy = d_out.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for r in 0..rows {
        for j in 0..c {
            dgamma[j] += dy[r * c + j] * cache.normalized[r * c + j];
            dbeta[j] += dy[r * c + j];
        }
    }
    let n = rows as f64;
    let mut dx = vec![0.0; dy.len()];
    for r in 0..rows {
        for j in 0..c {
            let dn = dy[r * c + j] * gamma.data()[j];
            // Σ dn = γ·dβ and Σ dn·x̂ = γ·dγ
            dx[r * c + j] = cache.inv_std[j] / n
                * (n * dn - gamma.data()[j] * dbeta[j] - cache.normalized[r * c + j] * gamma.data()[j] * dgamma[j]);
        }
    }
    Ok((Tensor::new(d_out.shape().to_vec(), dx)?, Tensor::new(vec![c], dgamma)?, Tensor::new(vec![c], dbeta)?))
}

/// Inference-mode batch norm: a fixed per-channel affine map.
pub fn batch_norm_infer(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    moving_mean: &Tensor,
    moving_var: &Tensor,
    epsilon: f64,
) -> Result<Tensor> {
    let c = x.last_dim();
    if gamma.len() != c || moving_mean.len() != c || moving_var.len() != c {
        return Err(Error::shape("batch norm parameters do not fit channels"));
    }
    let mut out = x.data().to_vec();
    for (k, v) in out.iter_mut().enumerate() {
        let j = k % c;
        let inv = 1.0 / (moving_var.data()[j] + epsilon).sqrt();
        *v = gamma.data()[j] * (*v - moving_mean.data()[j]) * inv + beta.data()[j];
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn batch_norm_infer_backward(
    x: &Tensor,
    gamma: &Tensor,
    moving_mean: &Tensor,
    moving_var: &Tensor,
    epsilon: f64,
    d_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let c = gamma.len();
    let mut dx = vec![0.0; x.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (k, (&dy, &xv)) in d_out.data().iter().zip(x.data()).enumerate() {
        let j = k % c;
        let inv = 1.0 / (moving_var.data()[j] + epsilon).sqrt();
        dx[k] = dy * gamma.data()[j] * inv;
        dgamma[j] += dy * (xv - moving_mean.data()[j]) * inv;
        dbeta[j] += dy;
    }
    Ok((Tensor::new(x.shape().to_vec(), dx)?, Tensor::new(vec![c], dgamma)?, Tensor::new(vec![c], dbeta)?))
}

// --------------------------------------------------- concat / last step

pub fn concat_forward(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
    let lead = &first.shape()[..first.shape().len() - 1];
    let rows: usize = lead.iter().product();
    let widths: Vec<usize> = inputs.iter().map(|t| t.last_dim()).collect();
    for t in inputs {
        if &t.shape()[..t.shape().len() - 1] != lead {
            return Err(Error::shape("concat inputs disagree on leading axes"));
        }
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (t, &w) in inputs.iter().zip(&widths) {
            out.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(shape, out)
}

/// Splits the concatenated gradient back into pieces of the original extents.
pub fn concat_backward(input_shapes: &[&[usize]], d_out: &Tensor) -> Result<Vec<Tensor>> {
    let total = d_out.last_dim();
    let rows = d_out.len() / total;
    let widths: Vec<usize> = input_shapes.iter().map(|s| *s.last().unwrap_or(&0)).collect();
    if widths.iter().sum::<usize>() != total {
        return Err(Error::shape("concat gradient width mismatch"));
    }
    let mut pieces: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
    for r in 0..rows {
        let mut off = r * total;
        for (p, &w) in pieces.iter_mut().zip(&widths) {
            p.extend_from_slice(&d_out.data()[off..off + w]);
            off += w;
        }
    }
    pieces.into_iter().zip(input_shapes).map(|(p, s)| Tensor::new(s.to_vec(), p)).collect()
}

pub fn last_step_forward(x: &Tensor) -> Result<Tensor> {
    let (batch, time, c) = seq_dims(x)?;
    let mut out = Vec::with_capacity(batch * c);
    for b in 0..batch {
        let off = (b * time + time - 1) * c;
        out.extend_from_slice(&x.data()[off..off + c]);
    }
    Tensor::new(vec![batch, c], out)
}

pub fn last_step_backward(input_shape: &[usize], d_out: &Tensor) -> Result<Tensor> {
    let (batch, time, c) = match input_shape {
        [b, t, c] => (*b, *t, *c),
        s => return Err(Error::shape(format!("last step input must be 3-d, got {s:?}"))),
    };
    let mut dx = vec![0.0; batch * time * c];
    for b in 0..batch {
        let off = (b * time + time - 1) * c;
        dx[off..off + c].copy_from_slice(&d_out.data()[b * c..(b + 1) * c]);
    }
    Tensor::new(input_shape.to_vec(), dx)
}
