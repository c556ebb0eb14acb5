//! Continuous-action actor-critic agent (deterministic policy gradient with
//! target networks and a replay buffer) that emits one action in `[0, 1]`
//! per decision.

mod agent;
mod replay;

pub use agent::{Agent, AgentConfig, RewardStats};
pub use replay::{ReplayBuffer, Transition};
