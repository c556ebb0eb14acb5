use std::borrow::Cow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwmodel::{simulate_cost, BitwidthPolicy, HardwareSpec};
use crate::nncore::{LayerKind, LayerParams, LayerSpec, NetSpec, Params, Tensor, TrainHook};

/// `(kept, actual_sparsity)` with `kept = clamp(round((1 - s) * channels), 1, channels)`.
pub fn round_feasible(sparsity: f64, channels: usize) -> (usize, f64) {
    assert!(channels >= 1, "a layer has at least one channel");
    let s = sparsity.clamp(0.0, 1.0);
    let kept = (((1.0 - s) * channels as f64).round() as usize).clamp(1, channels);
    (kept, 1.0 - kept as f64 / channels as f64)
}

/// Keeps the `kept` output channels (rows of `weight`) with the largest L2
/// norm; ties go to the lower index.
pub fn prune_channels(weight: &Tensor, kept: usize) -> Vec<bool> {
    let rows = weight.shape()[0];
    assert!((1..=rows).contains(&kept), "kept must lie in 1..={rows}");
    let per = weight.len() / rows;
    let norms: Vec<f64> = weight
        .data()
        .chunks(per)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .collect();
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let mut mask = vec![false; rows];
    for &i in &order[..kept] {
        mask[i] = true;
    }
    mask
}

/// Layers whose output channels may be pruned: every parametric layer except
/// depthwise layers (which follow their producer) and the classifier.
pub fn prunable_layers(net: &NetSpec) -> Vec<usize> {
    let param = net.parametric_indices();
    let last = *param.last().expect("validated net has a parametric layer");
    param
        .into_iter()
        .filter(|&i| i != last && net.layers[i].kind != LayerKind::DepthwiseConv2d)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrunedLayer {
    pub layer: usize,
    pub kept: usize,
    pub sparsity: f64,
}

/// Output channels kept per prunable layer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparsityPolicy {
    pub layers: Vec<PrunedLayer>,
}

impl SparsityPolicy {
    /// Policy keeping every channel.
    pub fn dense(net: &NetSpec) -> Self {
        Self::from_kept(net, &prunable_layers(net).iter().map(|&i| net.layers[i].out_channels).collect::<Vec<_>>())
    }

    /// Policy from kept counts in [`prunable_layers`] order.
    pub fn from_kept(net: &NetSpec, kept: &[usize]) -> Self {
        Self {
            layers: prunable_layers(net)
                .into_iter()
                .zip(kept)
                .map(|(layer, &k)| PrunedLayer {
                    layer,
                    kept: k,
                    sparsity: 1.0 - k as f64 / net.layers[layer].out_channels as f64,
                })
                .collect(),
        }
    }

    pub fn kept_map(&self) -> BTreeMap<usize, usize> {
        self.layers.iter().map(|p| (p.layer, p.kept)).collect()
    }

    pub fn validate_for(&self, net: &NetSpec) -> Result<()> {
        let expect = prunable_layers(net);
        if self.layers.iter().map(|p| p.layer).collect::<Vec<_>>() != expect {
            return Err(Error::Policy(format!(
                "sparsity policy must list prunable layers {expect:?} in order"
            )));
        }
        for p in &self.layers {
            let c = net.layers[p.layer].out_channels;
            if !(1..=c).contains(&p.kept) {
                return Err(Error::Policy(format!(
                    "layer {} keeps {} of {c} channels",
                    p.layer, p.kept
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Channel count flowing out of every layer after pruning.
fn channel_flow(net: &NetSpec, kept: &BTreeMap<usize, usize>) -> Vec<usize> {
    let mut cur = net.layers[0].in_channels;
    net.layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            cur = match l.kind {
                LayerKind::Relu | LayerKind::Identity | LayerKind::Zero | LayerKind::DepthwiseConv2d => cur,
                _ => kept.get(&i).copied().unwrap_or(l.out_channels),
            };
            cur
        })
        .collect()
}

/// Architecture of the physically narrowed network.
pub fn pruned_spec(net: &NetSpec, policy: &SparsityPolicy) -> Result<NetSpec> {
    policy.validate_for(net)?;
    let flow = channel_flow(net, &policy.kept_map());
    let mut layers = Vec::with_capacity(net.layers.len());
    let mut cin = net.layers[0].in_channels;
    for (l, &cout) in net.layers.iter().zip(&flow) {
        layers.push(LayerSpec {
            in_channels: cin,
            out_channels: cout,
            ..l.clone()
        });
        cin = cout;
    }
    NetSpec::new(layers, net.num_classes)
}

/// Output-channel masks per layer (`None` where nothing flows out pruned).
fn layer_masks(net: &NetSpec, params: &Params, policy: &SparsityPolicy) -> Vec<Option<Vec<bool>>> {
    let kept = policy.kept_map();
    let mut cur: Option<Vec<bool>> = None;
    net.layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            match l.kind {
                LayerKind::Relu | LayerKind::Identity | LayerKind::Zero | LayerKind::DepthwiseConv2d => {}
                _ => {
                    cur = kept.get(&i).map(|&k| {
                        let w = &params.layers[i].as_ref().expect("parametric layer params").weight;
                        prune_channels(w, k)
                    });
                }
            }
            cur.clone()
        })
        .collect()
}

/// Input channel index of every weight column group, for the layer kinds
/// that mix channels: `(rows, cols_per_row, positions_per_input_channel)`.
fn in_layout(l: &LayerSpec) -> (usize, usize, usize) {
    let k2 = l.kernel_size * l.kernel_size;
    match l.kind {
        LayerKind::Conv2d => (l.out_channels, l.in_channels * k2, k2),
        LayerKind::PointwiseConv2d => (l.out_channels, l.in_channels, 1),
        LayerKind::Dense => (l.out_channels, l.in_channels * l.spatial_positions(), l.spatial_positions()),
        _ => unreachable!("channel-mixing layer"),
    }
}

/// Zeroes every weight and bias attached to a pruned channel, so the masked
/// network computes what [`shrink`] computes.
pub fn apply_masks(net: &NetSpec, params: &mut Params, masks: &[Option<Vec<bool>>]) {
    let mut incoming: Option<&Vec<bool>> = None;
    for (i, l) in net.layers.iter().enumerate() {
        if let Some(p) = params.layers[i].as_mut() {
            if l.kind != LayerKind::DepthwiseConv2d {
                if let Some(m) = incoming {
                    let (rows, cols, per) = in_layout(l);
                    let w = p.weight.data_mut();
                    for r in 0..rows {
                        for c in 0..cols {
                            if !m[c / per] {
                                w[r * cols + c] = 0.0;
                            }
                        }
                    }
                }
            }
            if let Some(m) = &masks[i] {
                let per = p.weight.len() / l.out_channels;
                for (o, &keep) in m.iter().enumerate() {
                    if !keep {
                        p.weight.data_mut()[o * per..(o + 1) * per].fill(0.0);
                        p.bias.data_mut()[o] = 0.0;
                    }
                }
            }
        }
        incoming = masks[i].as_ref();
    }
}

/// Masks chosen by L2 ranking of `params` for `policy`.
pub fn channel_masks(net: &NetSpec, params: &Params, policy: &SparsityPolicy) -> Result<Vec<Option<Vec<bool>>>> {
    policy.validate_for(net)?;
    Ok(layer_masks(net, params, policy))
}

/// Physically removes pruned channels.
pub fn shrink(net: &NetSpec, params: &Params, policy: &SparsityPolicy) -> Result<(NetSpec, Params)> {
    let spec = pruned_spec(net, policy)?;
    let masks = layer_masks(net, params, policy);
    let select = |m: &Option<Vec<bool>>, n: usize| -> Vec<usize> {
        match m {
            Some(m) => (0..n).filter(|&c| m[c]).collect(),
            None => (0..n).collect(),
        }
    };
    let mut out = Vec::with_capacity(net.layers.len());
    let mut incoming: Option<Vec<bool>> = None;
    for (i, l) in net.layers.iter().enumerate() {
        out.push(params.layers[i].as_ref().map(|p| {
            let rows = select(&masks[i], l.out_channels);
            let per_row = p.weight.len() / l.out_channels;
            let mut w = Vec::new();
            if l.kind == LayerKind::DepthwiseConv2d {
                for &r in &rows {
                    w.extend_from_slice(&p.weight.data()[r * per_row..(r + 1) * per_row]);
                }
            } else {
                let (_, cols, per) = in_layout(l);
                let ins = select(&incoming, l.in_channels);
                for &r in &rows {
                    for &c in &ins {
                        let base = r * cols + c * per;
                        w.extend_from_slice(&p.weight.data()[base..base + per]);
                    }
                }
            }
            let s = &spec.layers[i];
            LayerParams {
                weight: Tensor::new(s.weight_shape().expect("parametric"), w).expect("shrunk weight shape"),
                bias: Tensor::new(vec![rows.len()], rows.iter().map(|&r| p.bias.data()[r]).collect())
                    .expect("shrunk bias shape"),
            }
        }));
        incoming = masks[i].clone();
    }
    Ok((spec, Params { layers: out }))
}

/// Keeps pruned weights at zero during fine-tuning.
pub struct MaskHook<'a> {
    pub net: &'a NetSpec,
    pub masks: Vec<Option<Vec<bool>>>,
}

impl TrainHook for MaskHook<'_> {
    fn effective_params<'p>(&self, params: &'p Params) -> Cow<'p, Params> {
        Cow::Borrowed(params)
    }

    fn after_step(&self, params: &mut Params) {
        apply_masks(self.net, params, &self.masks);
    }
}

/// Resource limit for pruning.
#[derive(Debug, Clone, PartialEq)]
pub enum PruneBudget {
    /// Total multiply-accumulates of the pruned network.
    Macs(u64),
    /// Simulated latency in seconds at 8-bit weights and activations.
    Latency { seconds: f64, hw: HardwareSpec },
}

impl PruneBudget {
    pub fn limit(&self) -> f64 {
        match self {
            PruneBudget::Macs(m) => *m as f64,
            PruneBudget::Latency { seconds, .. } => *seconds,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PruneBudget::Macs(_) => "macs",
            PruneBudget::Latency { .. } => "latency",
        }
    }

    /// Cost of a (pruned) architecture in the budget's unit.
    pub fn cost(&self, net: &NetSpec) -> Result<f64> {
        match self {
            PruneBudget::Macs(_) => Ok(net.total_macs() as f64),
            PruneBudget::Latency { hw, .. } => {
                Ok(simulate_cost(net, &BitwidthPolicy::uniform(net, 8), hw)?.latency_s)
            }
        }
    }

    pub fn policy_cost(&self, net: &NetSpec, policy: &SparsityPolicy) -> Result<f64> {
        self.cost(&pruned_spec(net, policy)?)
    }

    pub fn satisfied_by(&self, net: &NetSpec, policy: &SparsityPolicy) -> Result<bool> {
        Ok(self.policy_cost(net, policy)? <= self.limit())
    }
}

/// Raises sparsity action `a` for prunable position `t` to the least value
/// that still lets the budget be met when every later prunable layer keeps a
/// single channel. `done` holds kept counts of positions `< t`.
pub fn clip_action_for_budget(
    a: f64,
    t: usize,
    net: &NetSpec,
    done: &[usize],
    budget: &PruneBudget,
) -> Result<f64> {
    let prunable = prunable_layers(net);
    if t >= prunable.len() || done.len() != t {
        return Err(Error::Input(format!(
            "position {t} with {} decisions for {} prunable layers",
            done.len(),
            prunable.len()
        )));
    }
    let channels = net.layers[prunable[t]].out_channels;
    let mut kept: Vec<usize> = done.to_vec();
    kept.push(channels);
    kept.resize(prunable.len(), 1);
    for k in (1..=channels).rev() {
        kept[t] = k;
        let cost = budget.policy_cost(net, &SparsityPolicy::from_kept(net, &kept))?;
        if cost <= budget.limit() {
            return Ok(a.max(1.0 - k as f64 / channels as f64));
        }
    }
    Err(Error::Infeasible(format!(
        "{} budget {} unreachable even when layer {} and all later prunable layers keep one channel",
        budget.kind(),
        budget.limit(),
        prunable[t]
    )))
}

/// Width-multiplier baseline: every prunable layer keeps
/// `clamp(round(ratio * channels), 1, channels)`.
pub fn uniform_shrink(net: &NetSpec, ratio: f64) -> Result<SparsityPolicy> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Input(format!("shrink ratio must lie in (0, 1], got {ratio}")));
    }
    let kept: Vec<usize> = prunable_layers(net)
        .iter()
        .map(|&i| round_feasible(1.0 - ratio, net.layers[i].out_channels).0)
        .collect();
    Ok(SparsityPolicy::from_kept(net, &kept))
}

/// Widest uniform shrink meeting the budget (bisection on the ratio).
pub fn uniform_shrink_for_budget(net: &NetSpec, budget: &PruneBudget) -> Result<(f64, SparsityPolicy)> {
    let floor = uniform_shrink(net, f64::MIN_POSITIVE)?;
    if !budget.satisfied_by(net, &floor)? {
        return Err(Error::Infeasible(format!(
            "{} budget {} is below the one-channel floor",
            budget.kind(),
            budget.limit()
        )));
    }
    let full = uniform_shrink(net, 1.0)?;
    if budget.satisfied_by(net, &full)? {
        return Ok((1.0, full));
    }
    let (mut lo, mut hi): (f64, f64) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if budget.satisfied_by(net, &uniform_shrink(net, mid.max(f64::MIN_POSITIVE))?)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let ratio = lo.max(f64::MIN_POSITIVE);
    Ok((ratio, uniform_shrink(net, ratio)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::forward;
    use rand::Rng;

    fn net() -> NetSpec {
        NetSpec::new(
            vec![
                LayerSpec::conv2d(2, 6, 3, (4, 4)),
                LayerSpec::relu(6, (4, 4)),
                LayerSpec::depthwise(6, 3, (4, 4)),
                LayerSpec::relu(6, (4, 4)),
                LayerSpec::pointwise(6, 5, (4, 4)),
                LayerSpec::relu(5, (4, 4)),
                LayerSpec::dense_flat(5, (4, 4), 3),
            ],
            3,
        )
        .unwrap()
    }

    #[test]
    fn feasible_rounding() {
        assert_eq!(round_feasible(0.0, 8), (8, 0.0));
        assert_eq!(round_feasible(0.5, 8), (4, 0.5));
        let (k, s) = round_feasible(0.99, 3);
        assert_eq!(k, 1);
        assert!((s - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn magnitude_ranking() {
        let w = Tensor::new(vec![3, 1], vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(prune_channels(&w, 2), vec![true, false, true]);
        assert_eq!(prune_channels(&w, 3), vec![true; 3]);
        let tie = Tensor::new(vec![3, 1], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(prune_channels(&tie, 1), vec![true, false, false]);
    }

    #[test]
    fn masked_forward_equals_shrunk_forward() {
        let net = net();
        let mut r = crate::rng::stream(3, 0);
        let params = Params::init(&net.layers, &mut r);
        let x = Tensor::new(vec![5, 32], (0..160).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        for kept in [[1, 1], [3, 2], [6, 5], [2, 4]] {
            let policy = SparsityPolicy::from_kept(&net, &kept);
            let mut masked = params.clone();
            apply_masks(&net, &mut masked, &channel_masks(&net, &params, &policy).unwrap());
            let (small, sp) = shrink(&net, &params, &policy).unwrap();
            assert_eq!(small.layers[0].out_channels, kept[0]);
            let (a, _) = forward(&net, &masked, &x).unwrap();
            let (b, _) = forward(&small, &sp, &x).unwrap();
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn clip_respects_budget() {
        let net = net();
        let full = net.total_macs();
        let budget = PruneBudget::Macs(full);
        assert_eq!(clip_action_for_budget(0.1, 0, &net, &[], &budget).unwrap(), 0.1);
        // last prunable layer: budget met exactly at 3 of 5 kept (sparsity 0.4)
        let done = [6];
        let at = |k: usize| pruned_spec(&net, &SparsityPolicy::from_kept(&net, &[6, k])).unwrap().total_macs();
        let b = PruneBudget::Macs(at(3));
        for a in [0.0, 0.2, 0.39] {
            assert!((clip_action_for_budget(a, 1, &net, &done, &b).unwrap() - 0.4).abs() < 1e-12);
        }
        assert_eq!(clip_action_for_budget(0.7, 1, &net, &done, &b).unwrap(), 0.7);
        let floor = pruned_spec(&net, &SparsityPolicy::from_kept(&net, &[1, 1])).unwrap().total_macs();
        assert!(matches!(
            clip_action_for_budget(0.0, 0, &net, &[], &PruneBudget::Macs(floor - 1)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn uniform_shrink_arithmetic() {
        let chain = NetSpec::new(
            vec![
                LayerSpec::conv2d(8, 8, 3, (4, 4)),
                LayerSpec::conv2d(8, 8, 3, (4, 4)),
                LayerSpec::dense_flat(8, (4, 4), 2),
            ],
            2,
        )
        .unwrap();
        assert_eq!(uniform_shrink(&chain, 1.0).unwrap(), SparsityPolicy::dense(&chain));
        let p = uniform_shrink(&chain, 0.75).unwrap();
        assert!(p.layers.iter().all(|l| l.kept == 6));
        assert!(uniform_shrink(&chain, 0.0).is_err());
        // interior layer: both fan-in and fan-out shrink
        let shrunk = pruned_spec(&chain, &p).unwrap();
        let m = |n: &NetSpec| crate::nncore::count_macs(&n.layers[1]) as f64;
        assert!(m(&shrunk) <= 0.75 * 0.75 * m(&chain));
    }

    #[test]
    fn policy_toml_round_trip() {
        let p = SparsityPolicy::from_kept(&net(), &[3, 2]);
        assert_eq!(SparsityPolicy::from_toml(&p.to_toml().unwrap()).unwrap(), p);
    }
}
