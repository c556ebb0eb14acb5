//! Mixed-precision quantization: a symmetric linear quantizer, an agent that
//! picks weight and activation bitwidths per layer, budget enforcement
//! against the simulated hardware, and policy transfer across networks.

mod budget;
mod quant;
mod search;

pub use budget::{enforce_budget, Budget, BudgetKind};
pub use quant::{action_to_bits, linear_quantize, quant_scale, quantize_slice, QuantHook};
pub use search::{
    evaluate_quantized, greedy_policy, haq_search, rollout, transfer_policy, HaqConfig,
    HaqEpisode, HaqOutcome, STATE_DIM,
};
