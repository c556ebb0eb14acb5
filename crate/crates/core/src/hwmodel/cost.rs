use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hardware::HardwareSpec;
use crate::error::{Error, Result};
use crate::nncore::{count_macs, LayerKind, LayerSpec, NetSpec};

pub const MIN_BITS: u8 = 1;
pub const MAX_BITS: u8 = 8;

/// Weight and activation bitwidth of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerBits {
    pub w_bits: u8,
    pub a_bits: u8,
}

impl LayerBits {
    pub fn new(w_bits: u8, a_bits: u8) -> Self {
        Self { w_bits, a_bits }
    }

    pub fn uniform(bits: u8) -> Self {
        Self::new(bits, bits)
    }

    pub fn validate(&self) -> Result<()> {
        for b in [self.w_bits, self.a_bits] {
            if !(MIN_BITS..=MAX_BITS).contains(&b) {
                return Err(Error::Domain(format!("bitwidth {b} outside [1, 8]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PolicyEntry {
    layer: usize,
    w_bits: u8,
    a_bits: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    layers: Vec<PolicyEntry>,
}

/// Per-layer bitwidths keyed by the layer's index in its [`NetSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "PolicyFile", into = "PolicyFile")]
pub struct BitwidthPolicy {
    pub layers: BTreeMap<usize, LayerBits>,
}

impl BitwidthPolicy {
    /// Same bitwidth for weights and activations of every parametric layer.
    pub fn uniform(net: &NetSpec, bits: u8) -> Self {
        Self {
            layers: net
                .parametric_indices()
                .into_iter()
                .map(|i| (i, LayerBits::uniform(bits)))
                .collect(),
        }
    }

    pub fn get(&self, layer: usize) -> Option<LayerBits> {
        self.layers.get(&layer).copied()
    }

    /// Checks bounds and that every parametric layer of `net` is covered.
    pub fn validate_for(&self, net: &NetSpec) -> Result<()> {
        for (i, b) in &self.layers {
            b.validate()?;
            match net.layers.get(*i) {
                Some(l) if l.is_parametric() => {}
                _ => return Err(Error::Policy(format!("layer {i} is not a parametric layer"))),
            }
        }
        for i in net.parametric_indices() {
            if !self.layers.contains_key(&i) {
                return Err(Error::Policy(format!("policy is missing layer {i}")));
            }
        }
        Ok(())
    }

    /// True when every bitwidth is `<=` the other policy's.
    pub fn pointwise_le(&self, other: &BitwidthPolicy) -> bool {
        self.layers.iter().all(|(i, b)| {
            other
                .layers
                .get(i)
                .is_some_and(|o| b.w_bits <= o.w_bits && b.a_bits <= o.a_bits)
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

impl From<BitwidthPolicy> for PolicyFile {
    fn from(p: BitwidthPolicy) -> Self {
        PolicyFile {
            layers: p
                .layers
                .into_iter()
                .map(|(layer, b)| PolicyEntry {
                    layer,
                    w_bits: b.w_bits,
                    a_bits: b.a_bits,
                })
                .collect(),
        }
    }
}

impl TryFrom<PolicyFile> for BitwidthPolicy {
    type Error = Error;

    fn try_from(file: PolicyFile) -> Result<Self> {
        let mut layers = BTreeMap::new();
        for e in file.layers {
            let b = LayerBits::new(e.w_bits, e.a_bits);
            b.validate()?;
            if layers.insert(e.layer, b).is_some() {
                return Err(Error::Parse(format!("duplicate entry for layer {}", e.layer)));
            }
        }
        Ok(Self { layers })
    }
}

/// Attainable MAC rate at a given operation intensity (MACs per DRAM byte).
pub fn roofline_attainable(intensity: f64, hw: &HardwareSpec) -> f64 {
    hw.peak_macs_per_s.min(hw.dram_bytes_per_s * intensity)
}

/// DRAM bytes moved by one layer at batch 1: weights once plus every input
/// and output activation once.
pub fn layer_bytes(layer: &LayerSpec, w_bits: u8, a_bits: u8) -> f64 {
    let bits = layer.weight_count() as f64 * w_bits as f64
        + (layer.in_acts() + layer.out_acts()) as f64 * a_bits as f64;
    bits / 8.0
}

/// MACs per DRAM byte of a parametric layer.
pub fn operation_intensity(layer: &LayerSpec, w_bits: u8, a_bits: u8) -> Result<f64> {
    if !layer.is_parametric() {
        return Err(Error::Domain(format!(
            "operation intensity is undefined for a {} layer",
            layer.kind
        )));
    }
    LayerBits::new(w_bits, a_bits).validate()?;
    Ok(count_macs(layer) as f64 / layer_bytes(layer, w_bits, a_bits))
}

/// Roofline execution time of one parametric layer, excluding the fixed
/// kernel overhead.
pub fn roofline_latency(layer: &LayerSpec, bits: LayerBits, hw: &HardwareSpec) -> Result<f64> {
    let macs = count_macs(layer) as f64;
    let intensity = operation_intensity(layer, bits.w_bits, bits.a_bits)?;
    Ok(macs / roofline_attainable(intensity, hw))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: usize,
    pub kind: LayerKind,
    pub bits: LayerBits,
    pub macs: u64,
    pub bytes: f64,
    pub intensity: f64,
    /// Attained MAC rate (MACs/s) on the roofline.
    pub attained_macs_per_s: f64,
    pub latency_s: f64,
    pub energy_j: f64,
    pub size_bits: f64,
}

/// Simulated latency, energy and weight storage of a quantized network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub latency_s: f64,
    pub energy_j: f64,
    pub model_size_bits: f64,
    pub per_layer: Vec<LayerCost>,
}

pub fn simulate_cost(net: &NetSpec, policy: &BitwidthPolicy, hw: &HardwareSpec) -> Result<CostReport> {
    policy.validate_for(net)?;
    let mut per_layer = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        if !layer.is_parametric() {
            continue;
        }
        let bits = policy.layers[&i];
        let macs = count_macs(layer);
        let bytes = layer_bytes(layer, bits.w_bits, bits.a_bits);
        let intensity = macs as f64 / bytes;
        let attained = roofline_attainable(intensity, hw);
        let latency_s = macs as f64 / attained + hw.fixed_overhead_s;
        let energy_j = macs as f64 * hw.energy_per_mac + bytes * hw.energy_per_dram_byte;
        let size_bits = layer.weight_count() as f64 * bits.w_bits as f64;
        per_layer.push(LayerCost {
            layer: i,
            kind: layer.kind,
            bits,
            macs,
            bytes,
            intensity,
            attained_macs_per_s: attained,
            latency_s,
            energy_j,
            size_bits,
        });
    }
    Ok(CostReport {
        latency_s: per_layer.iter().map(|c| c.latency_s).sum(),
        energy_j: per_layer.iter().map(|c| c.energy_j).sum(),
        model_size_bits: per_layer.iter().map(|c| c.size_bits).sum(),
        per_layer,
    })
}
