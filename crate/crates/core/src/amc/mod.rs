//! Reinforcement-learned channel pruning: an agent picks a sparsity per
//! layer, actions are clipped so the compute budget stays reachable, the
//! lowest-L2 channels are masked, and the fine-tuned validation accuracy is
//! the episode reward.

mod prune;
mod search;
mod state;

pub use prune::{
    apply_masks, channel_masks, clip_action_for_budget, prunable_layers, prune_channels,
    pruned_spec, round_feasible, shrink, uniform_shrink, uniform_shrink_for_budget, MaskHook,
    PruneBudget, PrunedLayer, SparsityPolicy,
};
pub use search::{amc_search, evaluate_pruned, rollout, AmcConfig, AmcEpisode, AmcOutcome};
pub use state::{layer_state, StateContext, STATE_DIM};
