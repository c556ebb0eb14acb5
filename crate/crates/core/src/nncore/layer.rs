use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv2d,
    DepthwiseConv2d,
    PointwiseConv2d,
    Relu,
    Identity,
    Zero,
}

impl LayerKind {
    pub fn is_parametric(self) -> bool {
        matches!(
            self,
            LayerKind::Dense
                | LayerKind::Conv2d
                | LayerKind::DepthwiseConv2d
                | LayerKind::PointwiseConv2d
        )
    }

    pub fn is_conv(self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d | LayerKind::DepthwiseConv2d | LayerKind::PointwiseConv2d
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv2d => "conv2d",
            LayerKind::DepthwiseConv2d => "depthwise_conv2d",
            LayerKind::PointwiseConv2d => "pointwise_conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Identity => "identity",
            LayerKind::Zero => "zero",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn one() -> usize {
    1
}

fn unit_spatial() -> (usize, usize) {
    (1, 1)
}

/// One layer of a network. Convolutions are stride 1 with same padding, so
/// the output spatial size equals `spatial_in`. A dense layer flattens its
/// `in_channels x H x W` input and produces `out_channels` at spatial 1x1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default = "one")]
    pub kernel_size: usize,
    #[serde(default = "unit_spatial")]
    pub spatial_in: (usize, usize),
    /// Expansion ratio of the inverted-bottleneck block this layer belongs to
    /// (1 outside blocks). Informational only.
    #[serde(default = "one")]
    pub expansion_ratio: usize,
}

impl LayerSpec {
    fn base(kind: LayerKind, cin: usize, cout: usize, k: usize, hw: (usize, usize)) -> Self {
        Self {
            kind,
            in_channels: cin,
            out_channels: cout,
            kernel_size: k,
            spatial_in: hw,
            expansion_ratio: 1,
        }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Self::base(LayerKind::Dense, inputs, outputs, 1, (1, 1))
    }

    /// Dense layer over a flattened `channels x H x W` feature map.
    pub fn dense_flat(channels: usize, hw: (usize, usize), outputs: usize) -> Self {
        Self::base(LayerKind::Dense, channels, outputs, 1, hw)
    }

    pub fn conv2d(cin: usize, cout: usize, k: usize, hw: (usize, usize)) -> Self {
        Self::base(LayerKind::Conv2d, cin, cout, k, hw)
    }

    pub fn depthwise(channels: usize, k: usize, hw: (usize, usize)) -> Self {
        Self::base(LayerKind::DepthwiseConv2d, channels, channels, k, hw)
    }

    pub fn pointwise(cin: usize, cout: usize, hw: (usize, usize)) -> Self {
        Self::base(LayerKind::PointwiseConv2d, cin, cout, 1, hw)
    }

    pub fn relu(channels: usize, hw: (usize, usize)) -> Self {
        Self::base(LayerKind::Relu, channels, channels, 1, hw)
    }

    pub fn identity(channels: usize, hw: (usize, usize)) -> Self {
        Self::base(LayerKind::Identity, channels, channels, 1, hw)
    }

    pub fn zero(channels: usize, hw: (usize, usize)) -> Self {
        Self::base(LayerKind::Zero, channels, channels, 1, hw)
    }

    pub fn with_expansion(mut self, ratio: usize) -> Self {
        self.expansion_ratio = ratio;
        self
    }

    pub fn is_parametric(&self) -> bool {
        self.kind.is_parametric()
    }

    pub fn spatial_positions(&self) -> usize {
        self.spatial_in.0 * self.spatial_in.1
    }

    pub fn out_spatial(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Dense => (1, 1),
            _ => self.spatial_in,
        }
    }

    /// Shape of the weight tensor, `None` for non-parametric kinds.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        let k = self.kernel_size;
        match self.kind {
            LayerKind::Dense => Some(vec![
                self.out_channels,
                self.in_channels * self.spatial_positions(),
            ]),
            LayerKind::Conv2d => Some(vec![self.out_channels, self.in_channels, k, k]),
            LayerKind::DepthwiseConv2d => Some(vec![self.out_channels, 1, k, k]),
            LayerKind::PointwiseConv2d => Some(vec![self.out_channels, self.in_channels]),
            _ => None,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape()
            .map(|s| s.iter().product())
            .unwrap_or(0)
    }

    /// Activation values read by the layer (batch 1).
    pub fn in_acts(&self) -> usize {
        self.in_channels * self.spatial_positions()
    }

    /// Activation values written by the layer (batch 1).
    pub fn out_acts(&self) -> usize {
        let (h, w) = self.out_spatial();
        self.out_channels * h * w
    }

    /// Glorot fan-in / fan-out used for initialization.
    pub fn fans(&self) -> (usize, usize) {
        let k2 = self.kernel_size * self.kernel_size;
        match self.kind {
            LayerKind::Dense => (self.in_channels * self.spatial_positions(), self.out_channels),
            LayerKind::Conv2d => (self.in_channels * k2, self.out_channels * k2),
            LayerKind::DepthwiseConv2d => (k2, k2),
            LayerKind::PointwiseConv2d => (self.in_channels, self.out_channels),
            _ => (0, 0),
        }
    }

    fn check(&self, index: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Input(format!("layer {index} ({}): {msg}", self.kind)));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.spatial_in.0 == 0 || self.spatial_in.1 == 0 {
            return bad("spatial size must be positive".into());
        }
        if self.expansion_ratio == 0 {
            return bad("expansion ratio must be positive".into());
        }
        match self.kind {
            LayerKind::Conv2d | LayerKind::DepthwiseConv2d => {
                if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
                    return bad(format!("kernel size {} must be odd", self.kernel_size));
                }
            }
            LayerKind::PointwiseConv2d | LayerKind::Dense => {
                if self.kernel_size != 1 {
                    return bad("kernel size must be 1".into());
                }
            }
            _ => {}
        }
        let same_channels = matches!(
            self.kind,
            LayerKind::DepthwiseConv2d | LayerKind::Relu | LayerKind::Identity | LayerKind::Zero
        );
        if same_channels && self.in_channels != self.out_channels {
            return bad("input and output channels must match".into());
        }
        Ok(())
    }
}

/// Number of multiply-accumulates of one layer at batch 1; zero for
/// non-parametric kinds.
pub fn count_macs(layer: &LayerSpec) -> u64 {
    let (h, w) = layer.out_spatial();
    let out_pos = (h * w) as u64;
    let k2 = (layer.kernel_size * layer.kernel_size) as u64;
    let cin = layer.in_channels as u64;
    let cout = layer.out_channels as u64;
    match layer.kind {
        LayerKind::Conv2d => k2 * cin * cout * out_pos,
        LayerKind::DepthwiseConv2d => k2 * cout * out_pos,
        LayerKind::PointwiseConv2d => cin * cout * out_pos,
        LayerKind::Dense => cin * layer.spatial_positions() as u64 * cout,
        _ => 0,
    }
}

/// An ordered chain of layers ending in `num_classes` logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    pub fn new(layers: Vec<LayerSpec>, num_classes: usize) -> Result<Self> {
        let net = Self {
            num_classes,
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    /// Checks per-layer constraints and that adjacent shapes chain.
    pub fn validate(&self) -> Result<()> {
        validate_chain(&self.layers)?;
        if !self.layers.iter().any(LayerSpec::is_parametric) {
            return Err(Error::Input("network has no parametric layer".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Input("num_classes must be positive".into()));
        }
        let last = self.layers.last().expect("non-empty");
        if last.out_acts() != self.num_classes {
            return Err(Error::Input(format!(
                "final layer produces {} values, expected {} classes",
                last.out_acts(),
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Input shape `(channels, H, W)` of one sample.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        let l = &self.layers[0];
        (l.in_channels, l.spatial_in.0, l.spatial_in.1)
    }

    pub fn input_len(&self) -> usize {
        let (c, h, w) = self.input_shape();
        c * h * w
    }

    pub fn parametric_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_parametric())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(count_macs).sum()
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let net: NetSpec = toml::from_str(text)?;
        net.validate()?;
        Ok(net)
    }
}

/// Validates a layer chain without requiring a classifier at its end.
pub fn validate_chain(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Input("empty layer list".into()));
    }
    for (i, l) in layers.iter().enumerate() {
        l.check(i)?;
        if i > 0 {
            let prev = &layers[i - 1];
            if prev.out_channels != l.in_channels || prev.out_spatial() != l.spatial_in {
                return Err(Error::Input(format!(
                    "layer {i} ({}) expects {}x{:?}, previous layer produces {}x{:?}",
                    l.kind,
                    l.in_channels,
                    l.spatial_in,
                    prev.out_channels,
                    prev.out_spatial()
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_counts() {
        assert_eq!(count_macs(&LayerSpec::dense(10, 5)), 50);
        assert_eq!(count_macs(&LayerSpec::conv2d(4, 8, 3, (8, 8))), 18_432);
        assert_eq!(count_macs(&LayerSpec::depthwise(8, 3, (4, 4))), 9 * 8 * 16);
        assert_eq!(count_macs(&LayerSpec::pointwise(4, 6, (2, 2))), 4 * 6 * 4);
        assert_eq!(count_macs(&LayerSpec::relu(4, (2, 2))), 0);
        assert_eq!(count_macs(&LayerSpec::zero(4, (2, 2))), 0);
    }

    #[test]
    fn large_kernel_weight_count() {
        // one 7x7 layer vs. three stacked 3x3 layers, per position and channel pair
        let big = LayerSpec::conv2d(1, 1, 7, (7, 7)).weight_count();
        let small: usize = (0..3)
            .map(|_| LayerSpec::conv2d(1, 1, 3, (7, 7)).weight_count())
            .sum();
        assert_eq!((big, small), (49, 27));
    }

    #[test]
    fn chain_validation() {
        let ok = NetSpec::new(
            vec![
                LayerSpec::conv2d(1, 4, 3, (4, 4)),
                LayerSpec::relu(4, (4, 4)),
                LayerSpec::dense_flat(4, (4, 4), 3),
            ],
            3,
        );
        assert!(ok.is_ok());
        let bad = NetSpec::new(
            vec![LayerSpec::conv2d(1, 4, 3, (4, 4)), LayerSpec::relu(5, (4, 4))],
            3,
        );
        assert!(bad.is_err());
        let even_kernel = NetSpec::new(vec![LayerSpec::conv2d(1, 2, 2, (1, 1))], 2);
        assert!(even_kernel.is_err());
        let no_params = NetSpec::new(vec![LayerSpec::relu(2, (1, 1))], 2);
        assert!(no_params.is_err());
    }

    #[test]
    fn toml_round_trip() {
        let net = NetSpec::new(
            vec![
                LayerSpec::pointwise(2, 4, (3, 3)).with_expansion(2),
                LayerSpec::relu(4, (3, 3)),
                LayerSpec::dense_flat(4, (3, 3), 2),
            ],
            2,
        )
        .unwrap();
        let text = net.to_toml().unwrap();
        assert_eq!(NetSpec::from_toml(&text).unwrap(), net);
        assert!(NetSpec::from_toml(&format!("{text}\nbogus = 1\n")).is_err());
    }
}
