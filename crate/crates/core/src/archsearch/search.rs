use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::gates::{arch_gradient, derive_final_arch, latency_factor, ArchParams};
use super::space::{SearchSpace, SpecializedArch};
use super::supernet::Supernet;
use crate::error::{Error, Result};
use crate::hwmodel::{expected_network_latency, HardwareSpec, LatencyTable};
use crate::nncore::{Adam, Dataset};
use crate::rng;

fn default_a() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Penalty scale.
    #[serde(default = "default_a")]
    pub a: f64,
    /// Penalty exponent.
    pub b: f64,
    /// Target latency in seconds; `inf` disables the penalty.
    pub lat_ref: f64,
    pub epochs: usize,
    /// Leading epochs that only train weights under uniform gates.
    #[serde(default)]
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub weight_lr: f64,
    /// Adam step size for the architecture logits.
    pub arch_lr: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lat_ref > 0.0) {
            return Err(Error::Input(format!("lat_ref must be positive, got {}", self.lat_ref)));
        }
        if !(self.weight_lr > 0.0 && self.weight_lr.is_finite())
            || !(self.arch_lr > 0.0 && self.arch_lr.is_finite())
        {
            return Err(Error::Input("learning rates must be positive and finite".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Input("batch size must be positive".into()));
        }
        if !self.a.is_finite() || !self.b.is_finite() || self.a <= 0.0 || self.b < 0.0 {
            return Err(Error::Input("penalty needs a > 0 and b >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's batches.
    pub mean_ce: f64,
    /// Expected latency under the end-of-epoch path distribution.
    pub expected_latency_s: f64,
    pub probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub arch: SpecializedArch,
    pub path: Vec<usize>,
    pub alpha: Vec<Vec<f64>>,
    pub log: Vec<EpochLog>,
    pub supernet: Supernet,
}

/// Alternating single-path weight steps and architecture steps on a
/// supernet; returns the highest-probability path.
pub fn search(
    space: &SearchSpace,
    data: &Dataset,
    hw: &HardwareSpec,
    table: &LatencyTable,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    space.validate()?;
    let table = table.aligned_to(&space.choices)?;
    let row = space.in_channels * space.spatial.0 * space.spatial.1;
    if data.train.inputs.row_len() != row {
        return Err(Error::Input(format!(
            "dataset rows have {} values, search space expects {row}",
            data.train.inputs.row_len()
        )));
    }
    if data.num_classes != space.num_classes {
        return Err(Error::Input("dataset and search space disagree on class count".into()));
    }

    let mut net = Supernet::new(space, cfg.seed)?;
    let ks: Vec<usize> = space.choices.iter().map(|c| c.len()).collect();
    let mut arch = ArchParams::zeros(&ks);
    let n_alpha: usize = ks.iter().sum();
    let mut adam = Adam::new(cfg.arch_lr, n_alpha);
    let mut shuffle = rng::stream(cfg.seed, rng::STREAM_SHUFFLE);
    let mut gate_rng = rng::stream(cfg.seed, rng::STREAM_GATES);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut ce_total = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = data.train.batch(chunk);
            let path = arch.resample(&mut gate_rng);
            let (ce, trace, grads) = net.loss_and_grads(&path, &x, &y)?;
            if !ce.is_finite() {
                return Err(Error::Search {
                    epoch,
                    reason: format!("cross-entropy became {ce}"),
                });
            }
            ce_total += ce;
            batches += 1;
            if epoch < cfg.warmup_epochs || bi % 2 == 0 {
                net.sgd_step(&trace, &grads, cfg.weight_lr);
                if !net.all_finite() {
                    return Err(Error::Search {
                        epoch,
                        reason: "non-finite supernet weights".into(),
                    });
                }
                continue;
            }
            let probs = arch.probs();
            let elat = expected_network_latency(&probs, &table)?;
            let (factor, slope) = latency_factor(elat, cfg.lat_ref, cfg.a, cfg.b)?;
            let loss = ce * factor;
            if !loss.is_finite() || !slope.is_finite() {
                return Err(Error::Search {
                    epoch,
                    reason: format!("hardware-aware loss became {loss}"),
                });
            }
            let dce = net.gate_gradients(&trace, &grads)?;
            let mut dalpha = Vec::with_capacity(n_alpha);
            for (b, row) in dce.iter().enumerate() {
                let dl_dg: Vec<f64> = row
                    .iter()
                    .enumerate()
                    .map(|(j, d)| factor * d + ce * slope * table.block(b)[j].1)
                    .collect();
                dalpha.extend(arch_gradient(&dl_dg, &probs[b]));
            }
            if dalpha.iter().any(|v| !v.is_finite()) {
                return Err(Error::Search {
                    epoch,
                    reason: "non-finite architecture gradient".into(),
                });
            }
            let mut flat: Vec<f64> = arch.alpha.concat();
            adam.step(&mut flat, &dalpha);
            let mut it = flat.into_iter();
            for row in &mut arch.alpha {
                for v in row.iter_mut() {
                    *v = it.next().expect("alpha length");
                }
            }
        }
        let probs = arch.probs();
        log.push(EpochLog {
            epoch,
            mean_ce: ce_total / batches.max(1) as f64,
            expected_latency_s: expected_network_latency(&probs, &table)?,
            probs,
        });
    }

    let path = derive_final_arch(&arch.alpha);
    Ok(SearchOutcome {
        arch: SpecializedArch {
            ops: space.op_names(&path),
            hardware: hw.name.clone(),
            lat_ref: cfg.lat_ref,
            seed: cfg.seed,
        },
        path,
        alpha: arch.alpha,
        log,
        supernet: net,
    })
}
