use crate::nncore::{count_macs, LayerKind, NetSpec};

/// Length of [`layer_state`] vectors.
pub const STATE_DIM: usize = 11;

/// Per-decision context. All fractions are relative to the unpruned net.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateContext {
    /// Decision position and number of decisions in the episode.
    pub step: usize,
    pub steps: usize,
    /// Fraction of total MACs removed by the decisions taken so far.
    pub reduced: f64,
    pub prev_action: f64,
}

/// Features of parametric layer `layer`, each scaled to `[0, 1]`:
/// position, kind one-hot (dense, conv2d, depthwise, pointwise), input and
/// output channels over the widest layer, this layer's MACs share, MACs
/// already removed, MACs share of later layers, previous action.
pub fn layer_state(net: &NetSpec, layer: usize, ctx: StateContext) -> Vec<f64> {
    let total = net.total_macs().max(1) as f64;
    let widest = net
        .layers
        .iter()
        .map(|l| l.in_channels.max(l.out_channels))
        .max()
        .unwrap_or(1) as f64;
    let l = &net.layers[layer];
    let onehot = |k: LayerKind| if l.kind == k { 1.0 } else { 0.0 };
    let later: u64 = net.layers[layer + 1..].iter().map(count_macs).sum();
    vec![
        ctx.step as f64 / ctx.steps.max(1) as f64,
        onehot(LayerKind::Dense),
        onehot(LayerKind::Conv2d),
        onehot(LayerKind::DepthwiseConv2d),
        onehot(LayerKind::PointwiseConv2d),
        l.in_channels as f64 / widest,
        l.out_channels as f64 / widest,
        count_macs(l) as f64 / total,
        ctx.reduced.clamp(0.0, 1.0),
        later as f64 / total,
        ctx.prev_action.clamp(0.0, 1.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::LayerSpec;

    #[test]
    fn features_are_unit_scaled() {
        let net = NetSpec::new(
            vec![
                LayerSpec::conv2d(1, 8, 3, (4, 4)),
                LayerSpec::relu(8, (4, 4)),
                LayerSpec::depthwise(8, 3, (4, 4)),
                LayerSpec::pointwise(8, 4, (4, 4)),
                LayerSpec::dense_flat(4, (4, 4), 3),
            ],
            3,
        )
        .unwrap();
        for (step, &i) in net.parametric_indices().iter().enumerate() {
            let s = layer_state(&net, i, StateContext { step, steps: 4, reduced: 0.2, prev_action: 0.7 });
            assert_eq!(s.len(), STATE_DIM);
            assert!(s.iter().all(|v| (0.0..=1.0).contains(v)), "{s:?}");
            assert_eq!(s[1..5].iter().sum::<f64>(), 1.0);
        }
    }
}
