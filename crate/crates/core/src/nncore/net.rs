use std::borrow::Cow;

use super::layer::{LayerKind, LayerSpec, NetSpec};
use super::ops;
use super::params::{LayerParams, Params};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-run customization of forward passes and training steps.
///
/// Weight transforms and activation transforms are treated as identity by
/// [`backward`] (straight-through); `after_step` runs after every optimizer
/// update.
pub trait TrainHook {
    /// Parameters actually used by the forward pass.
    fn effective_params<'a>(&self, params: &'a Params) -> Cow<'a, Params> {
        Cow::Borrowed(params)
    }

    /// Applied in place to the input of layer `layer` (parametric layers
    /// only), one sample row at a time.
    fn activation(&self, _layer: usize, _row: &mut [f64]) {}

    fn has_activation_hook(&self) -> bool {
        false
    }

    fn after_step(&self, _params: &mut Params) {}
}

/// Hook that changes nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHook;

impl TrainHook for NoHook {}

/// Activations recorded by a forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    kinds: Vec<LayerKind>,
    /// Input of every layer (after any activation hook).
    inputs: Vec<Tensor>,
    input_shape: Vec<usize>,
    out_shape: Vec<usize>,
}

impl Trace {
    pub fn layer_input(&self, i: usize) -> &Tensor {
        &self.inputs[i]
    }

    pub fn batch(&self) -> usize {
        self.input_shape[0]
    }
}

/// Gradients of a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Params,
    pub input: Tensor,
}

fn as_4d(layers: &[LayerSpec], x: &Tensor) -> Result<Tensor> {
    let first = &layers[0];
    let (c, (h, w)) = (first.in_channels, first.spatial_in);
    if x.shape().len() < 2 || x.row_len() != c * h * w {
        return Err(Error::Input(format!(
            "input shape {:?} does not match expected [batch, {c}, {h}, {w}]",
            x.shape()
        )));
    }
    if x.shape().len() == 4 && x.shape()[1..] != [c, h, w] {
        return Err(Error::Input(format!(
            "input shape {:?} does not match expected [batch, {c}, {h}, {w}]",
            x.shape()
        )));
    }
    x.clone().reshape(vec![x.batch(), c, h, w])
}

/// Runs a layer chain on a `[batch, C, H, W]` (or flattened) input.
pub fn forward_layers(
    layers: &[LayerSpec],
    params: &Params,
    x: &Tensor,
    hook: &dyn TrainHook,
) -> Result<(Tensor, Trace)> {
    if layers.is_empty() || params.layers.len() != layers.len() {
        return Err(Error::Input("parameter set does not match layers".into()));
    }
    let mut cur = as_4d(layers, x)?;
    let mut inputs = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        if layer.is_parametric() && hook.has_activation_hook() {
            let r = cur.row_len();
            for row in cur.data_mut().chunks_mut(r) {
                hook.activation(i, row);
            }
        }
        let next = ops::forward(layer, params.layers[i].as_ref(), &cur);
        inputs.push(cur);
        cur = next;
    }
    let trace = Trace {
        kinds: layers.iter().map(|l| l.kind).collect(),
        input_shape: inputs[0].shape().to_vec(),
        out_shape: cur.shape().to_vec(),
        inputs,
    };
    Ok((cur, trace))
}

/// Backpropagates `dy` (shaped like the chain output) through a recorded trace.
pub fn backward_layers(
    layers: &[LayerSpec],
    params: &Params,
    trace: &Trace,
    dy: &Tensor,
) -> Result<Gradients> {
    if trace.kinds.len() != layers.len()
        || trace.kinds.iter().zip(layers).any(|(k, l)| *k != l.kind)
        || trace.inputs.iter().zip(layers).any(|(t, l)| {
            t.shape()[1] != l.in_channels || (t.shape()[2], t.shape()[3]) != l.spatial_in
        })
    {
        return Err(Error::Usage("trace was recorded for a different network".into()));
    }
    if dy.len() != trace.out_shape.iter().product::<usize>() || dy.batch() != trace.batch() {
        return Err(Error::Usage(format!(
            "gradient shape {:?} does not match traced output {:?}",
            dy.shape(),
            trace.out_shape
        )));
    }
    let mut g = dy.clone().reshape(trace.out_shape.clone())?;
    let mut grads: Vec<Option<LayerParams>> = vec![None; layers.len()];
    for i in (0..layers.len()).rev() {
        let (dx, pg) = ops::backward(&layers[i], params.layers[i].as_ref(), &trace.inputs[i], &g);
        grads[i] = pg;
        g = dx;
    }
    Ok(Gradients {
        params: Params { layers: grads },
        input: g,
    })
}

/// Forward pass of a full network; logits have shape `[batch, num_classes]`.
pub fn forward(net: &NetSpec, params: &Params, x: &Tensor) -> Result<(Tensor, Trace)> {
    forward_with(net, params, x, &NoHook)
}

pub fn forward_with(
    net: &NetSpec,
    params: &Params,
    x: &Tensor,
    hook: &dyn TrainHook,
) -> Result<(Tensor, Trace)> {
    let (y, trace) = forward_layers(&net.layers, params, x, hook)?;
    let b = y.batch();
    Ok((y.reshape(vec![b, net.num_classes])?, trace))
}

/// Backward pass of a full network given `dL/dlogits`.
pub fn backward(net: &NetSpec, params: &Params, trace: &Trace, dlogits: &Tensor) -> Result<Gradients> {
    backward_layers(&net.layers, params, trace, dlogits)
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let b = logits.batch();
    let k = logits.row_len();
    if labels.len() != b {
        return Err(Error::Input(format!("{} labels for batch of {b}", labels.len())));
    }
    let mut grad = vec![0.0; b * k];
    let mut loss = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Input(format!("label {y} out of range for {k} classes")));
        }
        let row = logits.row(s);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + z.ln();
        loss += lse - row[y];
        for j in 0..k {
            let p = (row[j] - lse).exp();
            grad[s * k + j] = (p - if j == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, Tensor::from_parts(logits.shape().to_vec(), grad)))
}

/// Index of the largest logit per row (lowest index on ties).
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.batch())
        .map(|s| {
            let row = logits.row(s);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
