use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::hwmodel::{BitwidthPolicy, MAX_BITS, MIN_BITS};
use crate::nncore::{Params, Tensor, TrainHook};

/// Quantization step for values bounded by `max_abs`.
pub fn quant_scale(max_abs: f64, bits: u8) -> f64 {
    if bits == 1 {
        max_abs
    } else {
        max_abs / ((1u32 << (bits - 1)) - 1) as f64
    }
}

fn check_bits(bits: u8) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::Input(format!(
            "bitwidth {bits} outside [{MIN_BITS}, {MAX_BITS}]"
        )));
    }
    Ok(())
}

/// In-place symmetric linear quantization with one scale for the slice.
/// One bit keeps only the sign, at magnitude `max|x|`.
pub fn quantize_slice(x: &mut [f64], bits: u8) -> Result<()> {
    check_bits(bits)?;
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m == 0.0 {
        return Ok(());
    }
    if !m.is_finite() {
        return Err(Error::Input("cannot quantize non-finite values".into()));
    }
    let s = quant_scale(m, bits);
    if bits == 1 {
        for v in x.iter_mut() {
            *v = if *v > 0.0 {
                s
            } else if *v < 0.0 {
                -s
            } else {
                0.0
            };
        }
        return Ok(());
    }
    let q = ((1u32 << (bits - 1)) - 1) as f64;
    for v in x.iter_mut() {
        *v = (*v / s).round().clamp(-q, q) * s;
    }
    Ok(())
}

/// Symmetric linear quantizer: scale `s = max|x| / (2^(bits-1) - 1)`
/// (`s = max|x|` at one bit); an all-zero tensor is returned unchanged.
pub fn linear_quantize(x: &Tensor, bits: u8) -> Result<Tensor> {
    let mut out = x.clone();
    quantize_slice(out.data_mut(), bits)?;
    Ok(out)
}

/// Maps an action in `[0, 1]` to `round(1 + 7a)` with ties to even, so
/// `a = 0.5` gives 4.
pub fn action_to_bits(a: f64) -> u8 {
    (1.0 + a.clamp(0.0, 1.0) * 7.0)
        .round_ties_even()
        .clamp(MIN_BITS as f64, MAX_BITS as f64) as u8
}

/// Quantization-aware training: weights are quantized per layer tensor and
/// each parametric layer's input per sample; gradients pass straight through.
#[derive(Debug, Clone)]
pub struct QuantHook {
    pub policy: BitwidthPolicy,
}

impl TrainHook for QuantHook {
    fn effective_params<'a>(&self, params: &'a Params) -> Cow<'a, Params> {
        let mut q = params.clone();
        for (i, p) in q.layers.iter_mut().enumerate() {
            if let (Some(p), Some(bits)) = (p.as_mut(), self.policy.get(i)) {
                // non-finite weights stay as they are; training reports the divergence
                let _ = quantize_slice(p.weight.data_mut(), bits.w_bits);
            }
        }
        Cow::Owned(q)
    }

    fn activation(&self, layer: usize, row: &mut [f64]) {
        if let Some(bits) = self.policy.get(layer) {
            let _ = quantize_slice(row, bits.a_bits);
        }
    }

    fn has_activation_hook(&self) -> bool {
        true
    }
}
