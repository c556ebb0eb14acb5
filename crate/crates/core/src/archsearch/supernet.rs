use rand::seq::SliceRandom;

use super::gates::active_index;
use super::space::SearchSpace;
use crate::error::{Error, Result};
use crate::nncore::{
    argmax_rows, backward_layers, forward_layers, softmax_cross_entropy, LabeledSet, LayerSpec,
    NoHook, Params, Tensor, Trace,
};
use crate::rng;

#[derive(Debug, Clone)]
struct Candidate {
    /// Empty for the skip op.
    layers: Vec<LayerSpec>,
    params: Params,
}

/// Over-parameterized network holding the weights of every candidate op.
#[derive(Debug, Clone)]
pub struct Supernet {
    space: SearchSpace,
    stem: Vec<LayerSpec>,
    stem_params: Params,
    blocks: Vec<Vec<Candidate>>,
    head: Vec<LayerSpec>,
    head_params: Params,
}

/// Activations of one single-path forward pass.
#[derive(Debug, Clone)]
pub struct PathTrace {
    path: Vec<usize>,
    stem: Trace,
    block_inputs: Vec<Tensor>,
    op_traces: Vec<Option<Trace>>,
    head: Trace,
}

/// Gradients of one single-path backward pass. Only the active op of each
/// block has an entry.
#[derive(Debug, Clone)]
pub struct PathGrads {
    stem: Params,
    ops: Vec<Option<Params>>,
    head: Params,
    /// `dL/dx_l` at the output of every block.
    block_out: Vec<Tensor>,
}

impl Supernet {
    /// Initializes stem, every candidate (block-major, op order) and the head
    /// from the init stream of `seed`.
    pub fn new(space: &SearchSpace, seed: u64) -> Result<Self> {
        space.validate()?;
        let mut r = rng::stream(seed, rng::STREAM_INIT);
        let stem = space.stem();
        let stem_params = Params::init(&stem, &mut r);
        let blocks = (0..space.num_blocks())
            .map(|b| {
                (0..space.choices[b].len())
                    .map(|j| {
                        let layers = space.op_layers(b, j);
                        let params = Params::init(&layers, &mut r);
                        Candidate { layers, params }
                    })
                    .collect()
            })
            .collect();
        let head = space.head();
        let head_params = Params::init(&head, &mut r);
        Ok(Self {
            space: space.clone(),
            stem,
            stem_params,
            blocks,
            head,
            head_params,
        })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn check_path(&self, path: &[usize]) -> Result<()> {
        if path.len() != self.blocks.len()
            || path.iter().zip(&self.blocks).any(|(&j, ops)| j >= ops.len())
        {
            return Err(Error::Usage(format!("path {path:?} does not fit the search space")));
        }
        Ok(())
    }

    /// Output of candidate `op` of `block` alone (zeros for the skip op).
    pub fn op_output(&self, block: usize, op: usize, x: &Tensor) -> Result<Tensor> {
        let c = &self.blocks[block][op];
        if c.layers.is_empty() {
            return Ok(Tensor::zeros(x.shape().to_vec()));
        }
        Ok(forward_layers(&c.layers, &c.params, x, &NoHook)?.0)
    }

    /// Residual mixed op with a one-hot gate row: only the active path runs.
    pub fn mixed_op_forward(&self, block: usize, gates: &[u8], x: &Tensor) -> Result<Tensor> {
        if gates.len() != self.blocks[block].len() {
            return Err(Error::Usage("gate row length differs from the block's choices".into()));
        }
        let j = active_index(gates)?;
        let mut y = self.op_output(block, j, x)?;
        y.add_assign(x);
        Ok(y)
    }

    /// Residual mixed op evaluating every path and weighting by `gates`.
    pub fn mixed_op_forward_all(&self, block: usize, gates: &[f64], x: &Tensor) -> Result<Tensor> {
        if gates.len() != self.blocks[block].len() {
            return Err(Error::Usage("gate row length differs from the block's choices".into()));
        }
        let mut y = x.clone();
        for (j, &g) in gates.iter().enumerate() {
            let mut o = self.op_output(block, j, x)?;
            o.scale(g);
            y.add_assign(&o);
        }
        Ok(y)
    }

    pub fn forward(&self, path: &[usize], x: &Tensor) -> Result<(Tensor, PathTrace)> {
        self.check_path(path)?;
        let (mut h, stem) = forward_layers(&self.stem, &self.stem_params, x, &NoHook)?;
        let mut block_inputs = Vec::with_capacity(path.len());
        let mut op_traces = Vec::with_capacity(path.len());
        for (b, &j) in path.iter().enumerate() {
            let c = &self.blocks[b][j];
            let next = if c.layers.is_empty() {
                op_traces.push(None);
                h.clone()
            } else {
                let (mut o, t) = forward_layers(&c.layers, &c.params, &h, &NoHook)?;
                op_traces.push(Some(t));
                o.add_assign(&h);
                o
            };
            block_inputs.push(std::mem::replace(&mut h, next));
        }
        let (logits, head) = forward_layers(&self.head, &self.head_params, &h, &NoHook)?;
        let b = logits.batch();
        let logits = logits.reshape(vec![b, self.space.num_classes])?;
        Ok((
            logits,
            PathTrace {
                path: path.to_vec(),
                stem,
                block_inputs,
                op_traces,
                head,
            },
        ))
    }

    pub fn backward(&self, trace: &PathTrace, dlogits: &Tensor) -> Result<PathGrads> {
        self.check_path(&trace.path)?;
        let hg = backward_layers(&self.head, &self.head_params, &trace.head, dlogits)?;
        let mut g = hg.input;
        let nb = self.blocks.len();
        let mut block_out = vec![Tensor::zeros(vec![1]); nb];
        let mut ops = vec![None; nb];
        for b in (0..nb).rev() {
            block_out[b] = g.clone();
            let j = trace.path[b];
            if let Some(t) = &trace.op_traces[b] {
                let c = &self.blocks[b][j];
                let og = backward_layers(&c.layers, &c.params, t, &g)?;
                g.add_assign(&og.input);
                ops[b] = Some(og.params);
            }
        }
        let sg = backward_layers(&self.stem, &self.stem_params, &trace.stem, &g)?;
        Ok(PathGrads {
            stem: sg.params,
            ops,
            head: hg.params,
            block_out,
        })
    }

    /// `dL/dg_j = <dL/dx_l, o_j(x_{l-1})>` for every candidate of every block.
    pub fn gate_gradients(&self, trace: &PathTrace, grads: &PathGrads) -> Result<Vec<Vec<f64>>> {
        (0..self.blocks.len())
            .map(|b| {
                (0..self.blocks[b].len())
                    .map(|j| {
                        if self.blocks[b][j].layers.is_empty() {
                            return Ok(0.0);
                        }
                        let o = self.op_output(b, j, &trace.block_inputs[b])?;
                        Ok(o.dot(&grads.block_out[b]))
                    })
                    .collect()
            })
            .collect()
    }

    /// Plain gradient step on the stem, the head and the active ops.
    pub fn sgd_step(&mut self, trace: &PathTrace, grads: &PathGrads, lr: f64) {
        self.stem_params.add_scaled(&grads.stem, -lr);
        self.head_params.add_scaled(&grads.head, -lr);
        for (b, g) in grads.ops.iter().enumerate() {
            if let Some(g) = g {
                self.blocks[b][trace.path[b]].params.add_scaled(g, -lr);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.stem_params.all_finite()
            && self.head_params.all_finite()
            && self.blocks.iter().flatten().all(|c| c.params.all_finite())
    }

    /// Mean cross-entropy and gradients of one batch on a fixed path.
    pub fn loss_and_grads(
        &self,
        path: &[usize],
        x: &Tensor,
        y: &[usize],
    ) -> Result<(f64, PathTrace, PathGrads)> {
        let (logits, trace) = self.forward(path, x)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, y)?;
        let grads = self.backward(&trace, &dlogits)?;
        Ok((loss, trace, grads))
    }

    pub fn evaluate(&self, path: &[usize], set: &LabeledSet) -> Result<f64> {
        if set.is_empty() {
            return Err(Error::Input("empty evaluation set".into()));
        }
        let idx: Vec<usize> = (0..set.len()).collect();
        let mut correct = 0;
        for chunk in idx.chunks(256) {
            let (x, y) = set.batch(chunk);
            let (logits, _) = self.forward(path, &x)?;
            correct += argmax_rows(&logits).iter().zip(&y).filter(|(p, t)| p == t).count();
        }
        Ok(correct as f64 / set.len() as f64)
    }

    /// Trains the weights of one fixed path with mini-batch SGD.
    pub fn train_path(
        &mut self,
        path: &[usize],
        set: &LabeledSet,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
    ) -> Result<f64> {
        if batch_size == 0 || !(lr > 0.0) {
            return Err(Error::Input("batch size and learning rate must be positive".into()));
        }
        let mut shuffle = rng::stream(seed, rng::STREAM_SHUFFLE);
        let mut order: Vec<usize> = (0..set.len()).collect();
        let mut last = f64::NAN;
        for epoch in 0..epochs {
            order.shuffle(&mut shuffle);
            let mut total = 0.0;
            for chunk in order.chunks(batch_size) {
                let (x, y) = set.batch(chunk);
                let (loss, trace, grads) = self.loss_and_grads(path, &x, &y)?;
                if !loss.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        reason: format!("loss became {loss}"),
                    });
                }
                self.sgd_step(&trace, &grads, lr);
                total += loss * chunk.len() as f64;
            }
            last = total / set.len() as f64;
        }
        Ok(last)
    }
}
