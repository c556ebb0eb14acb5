//! Hardware cost models: roofline latency, linear energy, weight storage and
//! per-op latency lookup tables.

mod cost;
mod hardware;
mod latency;

pub use cost::{
    layer_bytes, operation_intensity, roofline_attainable, roofline_latency, simulate_cost,
    BitwidthPolicy, CostReport, LayerBits, LayerCost, MAX_BITS, MIN_BITS,
};
pub use hardware::HardwareSpec;
pub use latency::{
    expected_network_latency, stack_latency, synthesize_latency_table, LatencyTable, OpStacks,
    TABLE_BITS,
};
