//! Differentiable architecture search over a residual supernet with
//! single-path sampled gates and a latency-penalized objective, plus an
//! exhaustive frontier for small spaces.

mod frontier;
mod gates;
mod search;
mod space;
mod supernet;

pub use frontier::{
    brute_force_frontier, near_pareto, pareto_flags, rescore, train_standalone, FrontierConfig,
    FrontierEntry,
};
pub use gates::{
    active_index, arch_gradient, derive_final_arch, hardware_aware_loss, latency_factor,
    sample_gates, softmax_probs, ArchParams,
};
pub use search::{search, EpochLog, SearchConfig, SearchOutcome};
pub use space::{OpKind, SearchSpace, SpecializedArch, DEFAULT_OPS, ZERO_OP};
pub use supernet::{PathGrads, PathTrace, Supernet};
