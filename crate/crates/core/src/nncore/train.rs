use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, LabeledSet};
use super::layer::NetSpec;
use super::net::{argmax_rows, backward, forward_with, softmax_cross_entropy, NoHook, TrainHook};
use super::params::Params;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl SgdConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Input(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Input("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Params,
    pub val_accuracy: f64,
    /// Mean training loss of the last epoch (NaN when no epoch ran).
    pub final_loss: f64,
}

/// Initializes parameters from `cfg.seed` and trains with plain mini-batch SGD.
pub fn train_sgd(net: &NetSpec, data: &Dataset, cfg: &SgdConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    net.validate()?;
    if data.train.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let mut init = rng::stream(cfg.seed, rng::STREAM_INIT);
    let mut params = Params::init(&net.layers, &mut init);
    let final_loss = fit(net, &mut params, &data.train, cfg, &NoHook)?;
    let val_accuracy = evaluate(net, &params, &data.val, &NoHook)?;
    Ok(TrainOutcome {
        params,
        val_accuracy,
        final_loss,
    })
}

/// Continues training `params` in place. Shuffling uses its own stream
/// derived from `cfg.seed`.
pub fn fit(
    net: &NetSpec,
    params: &mut Params,
    set: &LabeledSet,
    cfg: &SgdConfig,
    hook: &dyn TrainHook,
) -> Result<f64> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let mut shuffle = rng::stream(cfg.seed, rng::STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut last = f64::NAN;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = set.batch(chunk);
            let eff = hook.effective_params(params);
            let (logits, trace) = forward_with(net, &eff, &x, hook)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("loss became {loss}"),
                });
            }
            let grads = backward(net, &eff, &trace, &dlogits)?;
            drop(eff);
            params.add_scaled(&grads.params, -cfg.lr);
            hook.after_step(params);
            if !params.all_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "non-finite parameters".into(),
                });
            }
            total += loss * chunk.len() as f64;
            count += chunk.len();
        }
        last = total / count as f64;
    }
    Ok(last)
}

/// Classification accuracy in `[0, 1]`.
pub fn evaluate(net: &NetSpec, params: &Params, set: &LabeledSet, hook: &dyn TrainHook) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Input("empty evaluation set".into()));
    }
    let eff = hook.effective_params(params);
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(256) {
        let (x, y) = set.batch(chunk);
        let (logits, _) = forward_with(net, &eff, &x, hook)?;
        correct += argmax_rows(&logits)
            .iter()
            .zip(&y)
            .filter(|(p, t)| p == t)
            .count();
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Mean cross-entropy over a set.
pub fn mean_loss(net: &NetSpec, params: &Params, set: &LabeledSet, hook: &dyn TrainHook) -> Result<f64> {
    let eff = hook.effective_params(params);
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(256) {
        let (x, y) = set.batch(chunk);
        let (logits, _) = forward_with(net, &eff, &x, hook)?;
        total += softmax_cross_entropy(&logits, &y)?.0 * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}
