use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use super::tensor::Tensor;

/// Weights and bias of one parametric layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape().to_vec()),
            bias: Tensor::zeros(self.bias.shape().to_vec()),
        }
    }

    /// Glorot-uniform weights in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`,
    /// zero bias.
    pub fn init<R: Rng + ?Sized>(layer: &LayerSpec, rng: &mut R) -> Option<Self> {
        let shape = layer.weight_shape()?;
        let (fan_in, fan_out) = layer.fans();
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-a..=a)).collect();
        Some(Self {
            weight: Tensor::from_parts(shape, data),
            bias: Tensor::zeros(vec![layer.out_channels]),
        })
    }
}

/// Parameter set of a layer chain; `None` at non-parametric positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<Option<LayerParams>>,
}

impl Params {
    pub fn init<R: Rng + ?Sized>(layers: &[LayerSpec], rng: &mut R) -> Self {
        Self {
            layers: layers.iter().map(|l| LayerParams::init(l, rng)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|p| p.as_ref().map(LayerParams::zeros_like))
                .collect(),
        }
    }

    /// Iterates every parameter tensor in a fixed order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| [&p.weight, &p.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flatten()
            .flat_map(|p| [&mut p.weight, &mut p.bias])
    }

    pub fn num_values(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Flattens all values in `tensors()` order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites all values from a flat slice in `tensors()` order.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        debug_assert_eq!(off, flat.len());
    }

    pub fn add_scaled(&mut self, other: &Params, k: f64) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += k * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }
}
