use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwmodel::{synthesize_latency_table, HardwareSpec, LatencyTable};
use crate::nncore::{LayerSpec, NetSpec};

/// Default candidate ops: six inverted-bottleneck convolutions and a skip.
pub const DEFAULT_OPS: [&str; 7] = [
    "mb3_3x3", "mb3_5x5", "mb3_7x7", "mb6_3x3", "mb6_5x5", "mb6_7x7", "zero",
];

pub const ZERO_OP: &str = "zero";

/// A candidate op parsed from its name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    /// Pointwise expand by `expansion`, depthwise `kernel`x`kernel`,
    /// pointwise project, with relu after the first two.
    MbConv { expansion: usize, kernel: usize },
    /// Skips the block.
    Zero,
}

impl OpKind {
    /// Parses `zero` or `mb{e}_{k}x{k}` with odd `k`.
    pub fn parse(name: &str) -> Result<Self> {
        if name == ZERO_OP {
            return Ok(OpKind::Zero);
        }
        let bad = || Error::Input(format!("unknown op `{name}` (expected `zero` or `mb<e>_<k>x<k>`)"));
        let rest = name.strip_prefix("mb").ok_or_else(bad)?;
        let (e, k) = rest.split_once('_').ok_or_else(bad)?;
        let (k1, k2) = k.split_once('x').ok_or_else(bad)?;
        let expansion: usize = e.parse().map_err(|_| bad())?;
        let kernel: usize = k1.parse().map_err(|_| bad())?;
        if k1 != k2 || expansion == 0 || kernel % 2 == 0 {
            return Err(bad());
        }
        Ok(OpKind::MbConv { expansion, kernel })
    }

    /// Layer stack of the op on `channels` feature maps; empty for `Zero`.
    pub fn layers(self, channels: usize, hw: (usize, usize)) -> Vec<LayerSpec> {
        match self {
            OpKind::Zero => Vec::new(),
            OpKind::MbConv { expansion, kernel } => {
                let wide = channels * expansion;
                vec![
                    LayerSpec::pointwise(channels, wide, hw).with_expansion(expansion),
                    LayerSpec::relu(wide, hw),
                    LayerSpec::depthwise(wide, kernel, hw).with_expansion(expansion),
                    LayerSpec::relu(wide, hw),
                    LayerSpec::pointwise(wide, channels, hw).with_expansion(expansion),
                ]
            }
        }
    }
}

/// Blocks of candidate ops on a fixed-width residual trunk.
///
/// The network is a linear pointwise stem (`in_channels -> channels`), one
/// residual mixed block per entry of `choices`, and a dense classifier over
/// the flattened feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub in_channels: usize,
    pub channels: usize,
    pub spatial: (usize, usize),
    pub num_classes: usize,
    pub choices: Vec<Vec<String>>,
}

impl SearchSpace {
    /// `num_blocks` blocks, each offering [`DEFAULT_OPS`].
    pub fn uniform(
        in_channels: usize,
        channels: usize,
        spatial: (usize, usize),
        num_classes: usize,
        num_blocks: usize,
        ops: &[&str],
    ) -> Result<Self> {
        let s = Self {
            in_channels,
            channels,
            spatial,
            num_classes,
            choices: vec![ops.iter().map(|s| s.to_string()).collect(); num_blocks],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.channels == 0 || self.num_classes < 2 {
            return Err(Error::Input("search space needs positive widths and >= 2 classes".into()));
        }
        if self.spatial.0 == 0 || self.spatial.1 == 0 {
            return Err(Error::Input("search space needs a positive spatial size".into()));
        }
        if self.choices.is_empty() {
            return Err(Error::Input("search space needs at least one block".into()));
        }
        for (b, ops) in self.choices.iter().enumerate() {
            if ops.is_empty() {
                return Err(Error::Input(format!("block {b} has no candidate ops")));
            }
            for (i, op) in ops.iter().enumerate() {
                OpKind::parse(op)?;
                if ops[..i].contains(op) {
                    return Err(Error::Input(format!("block {b} lists `{op}` twice")));
                }
            }
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.choices.len()
    }

    /// Number of distinct architectures, saturating at `u128::MAX`.
    pub fn cardinality(&self) -> u128 {
        self.choices
            .iter()
            .try_fold(1u128, |acc, c| acc.checked_mul(c.len() as u128))
            .unwrap_or(u128::MAX)
    }

    /// Mixed-radix decoding of an architecture index (block 0 varies slowest).
    pub fn decode(&self, mut index: u128) -> Vec<usize> {
        let mut out = vec![0; self.num_blocks()];
        for b in (0..self.num_blocks()).rev() {
            let k = self.choices[b].len() as u128;
            out[b] = (index % k) as usize;
            index /= k;
        }
        out
    }

    /// Inverse of [`SearchSpace::decode`].
    pub fn encode(&self, path: &[usize]) -> u128 {
        path.iter()
            .zip(&self.choices)
            .fold(0u128, |acc, (&j, c)| acc * c.len() as u128 + j as u128)
    }

    pub fn stem(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::pointwise(self.in_channels, self.channels, self.spatial)]
    }

    pub fn head(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::dense_flat(self.channels, self.spatial, self.num_classes)]
    }

    pub fn op_layers(&self, block: usize, op: usize) -> Vec<LayerSpec> {
        OpKind::parse(&self.choices[block][op])
            .expect("validated op name")
            .layers(self.channels, self.spatial)
    }

    /// Per-block `(op name, layer stack)` lists for cost synthesis.
    pub fn op_stacks(&self) -> Vec<Vec<(String, Vec<LayerSpec>)>> {
        (0..self.num_blocks())
            .map(|b| {
                self.choices[b]
                    .iter()
                    .enumerate()
                    .map(|(j, name)| (name.clone(), self.op_layers(b, j)))
                    .collect()
            })
            .collect()
    }

    pub fn latency_table(&self, hw: &HardwareSpec) -> LatencyTable {
        synthesize_latency_table(&self.op_stacks(), hw)
    }

    /// Space with only the given op in each block.
    pub fn restricted_to(&self, path: &[usize]) -> Self {
        Self {
            choices: path
                .iter()
                .enumerate()
                .map(|(b, &j)| vec![self.choices[b][j].clone()])
                .collect(),
            ..self.clone()
        }
    }

    pub fn op_names(&self, path: &[usize]) -> Vec<String> {
        path.iter()
            .enumerate()
            .map(|(b, &j)| self.choices[b][j].clone())
            .collect()
    }
}

/// Chosen op per block plus how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecializedArch {
    pub ops: Vec<String>,
    pub hardware: String,
    pub lat_ref: f64,
    pub seed: u64,
}

impl SpecializedArch {
    /// Op index per block; fails if an op is not among the block's choices.
    pub fn path(&self, space: &SearchSpace) -> Result<Vec<usize>> {
        if self.ops.len() != space.num_blocks() {
            return Err(Error::Input(format!(
                "architecture has {} blocks, space has {}",
                self.ops.len(),
                space.num_blocks()
            )));
        }
        self.ops
            .iter()
            .enumerate()
            .map(|(b, op)| {
                space.choices[b]
                    .iter()
                    .position(|c| c == op)
                    .ok_or_else(|| Error::Input(format!("block {b} does not offer `{op}`")))
            })
            .collect()
    }

    /// Plain layer chain of the architecture: skipped blocks vanish and the
    /// residual adds are dropped.
    pub fn to_netspec(&self, space: &SearchSpace) -> Result<NetSpec> {
        self.path(space)?;
        let mut layers = space.stem();
        for op in &self.ops {
            layers.extend(OpKind::parse(op)?.layers(space.channels, space.spatial));
        }
        layers.extend(space.head());
        NetSpec::new(layers, space.num_classes)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}
