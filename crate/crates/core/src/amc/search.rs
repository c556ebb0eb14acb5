use serde::{Deserialize, Serialize};

use super::prune::{
    apply_masks, channel_masks, clip_action_for_budget, prunable_layers, round_feasible, MaskHook,
    PruneBudget, SparsityPolicy,
};
use super::state::{layer_state, StateContext, STATE_DIM};
use crate::error::{Error, Result};
use crate::nncore::{evaluate, fit, Dataset, NetSpec, Params, SgdConfig};
use crate::rlcore::{Agent, AgentConfig, Transition};

fn default_finetune_epochs() -> usize {
    2
}
fn default_finetune_lr() -> f64 {
    0.05
}
fn default_batch() -> usize {
    32
}
fn default_updates() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmcConfig {
    pub episodes: usize,
    /// Fine-tuning of each masked candidate before its validation accuracy
    /// is taken as reward.
    #[serde(default = "default_finetune_epochs")]
    pub finetune_epochs: usize,
    #[serde(default = "default_finetune_lr")]
    pub finetune_lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Agent updates after each episode once the replay is warm.
    #[serde(default = "default_updates")]
    pub updates_per_episode: usize,
    /// `state_dim` and `seed` are overwritten by the search.
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub seed: u64,
}

impl AmcConfig {
    pub fn new(episodes: usize, seed: u64) -> Self {
        Self {
            episodes,
            finetune_epochs: default_finetune_epochs(),
            finetune_lr: default_finetune_lr(),
            batch_size: default_batch(),
            updates_per_episode: default_updates(),
            agent: AgentConfig::new(STATE_DIM, seed),
            seed,
        }
    }

    pub fn finetune(&self) -> SgdConfig {
        SgdConfig {
            lr: self.finetune_lr,
            epochs: self.finetune_epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmcEpisode {
    pub episode: usize,
    /// Clipped actions, one per prunable layer.
    pub actions: Vec<f64>,
    pub policy: SparsityPolicy,
    pub cost: f64,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct AmcOutcome {
    pub policy: SparsityPolicy,
    pub accuracy: f64,
    pub cost: f64,
    pub log: Vec<AmcEpisode>,
    pub agent: Agent,
}

/// One pass over the prunable layers: `act` maps each state to a raw
/// sparsity action, which is clipped to the budget and rounded to a whole
/// channel count. Returns the policy and the `(state, clipped action)` steps.
pub fn rollout(
    net: &NetSpec,
    budget: &PruneBudget,
    act: &mut dyn FnMut(&[f64]) -> Result<f64>,
) -> Result<(SparsityPolicy, Vec<(Vec<f64>, f64)>)> {
    let prunable = prunable_layers(net);
    let full = budget.cost(net)?;
    let mut kept: Vec<usize> = Vec::with_capacity(prunable.len());
    let mut steps = Vec::with_capacity(prunable.len());
    let mut prev = 0.0;
    for (t, &layer) in prunable.iter().enumerate() {
        let mut so_far = kept.clone();
        so_far.extend(prunable[t..].iter().map(|&i| net.layers[i].out_channels));
        let now = budget.policy_cost(net, &SparsityPolicy::from_kept(net, &so_far))?;
        let reduced = if full > 0.0 { 1.0 - now / full } else { 0.0 };
        let state = layer_state(net, layer, StateContext { step: t, steps: prunable.len(), reduced, prev_action: prev });
        let raw = act(&state)?;
        let a = clip_action_for_budget(raw, t, net, &kept, budget)?;
        kept.push(round_feasible(a, net.layers[layer].out_channels).0);
        steps.push((state, a));
        prev = a;
    }
    Ok((SparsityPolicy::from_kept(net, &kept), steps))
}

/// Validation accuracy of `params` narrowed to `policy` (L2 channel
/// ranking) after masked fine-tuning. Depends only on the inputs.
pub fn evaluate_pruned(
    net: &NetSpec,
    params: &Params,
    policy: &SparsityPolicy,
    data: &Dataset,
    finetune: &SgdConfig,
) -> Result<f64> {
    let masks = channel_masks(net, params, policy)?;
    let mut p = params.clone();
    apply_masks(net, &mut p, &masks);
    let hook = MaskHook { net, masks };
    if finetune.epochs > 0 {
        fit(net, &mut p, &data.train, finetune, &hook)?;
    }
    evaluate(net, &p, &data.val, &hook)
}

/// A candidate whose fine-tuning diverges scores zero instead of ending the search.
fn diverged_as_zero(acc: Result<f64>) -> Result<f64> {
    match acc {
        Err(Error::Training { .. }) => Ok(0.0),
        other => other,
    }
}

/// Learns per-layer sparsities for a trained network under `budget`;
/// returns the most accurate policy seen (earliest on ties).
pub fn amc_search(
    net: &NetSpec,
    params: &Params,
    data: &Dataset,
    budget: &PruneBudget,
    cfg: &AmcConfig,
) -> Result<AmcOutcome> {
    net.validate()?;
    if prunable_layers(net).is_empty() {
        return Err(Error::Input("network has no prunable layer".into()));
    }
    let floor = SparsityPolicy::from_kept(net, &vec![1; prunable_layers(net).len()]);
    if !budget.satisfied_by(net, &floor)? {
        return Err(Error::Infeasible(format!(
            "{} budget {} is below the one-channel floor {}",
            budget.kind(),
            budget.limit(),
            budget.policy_cost(net, &floor)?
        )));
    }
    let finetune = cfg.finetune();
    let mut agent = Agent::new(AgentConfig {
        state_dim: STATE_DIM,
        seed: cfg.seed,
        ..cfg.agent.clone()
    })?;
    let mut log = Vec::with_capacity(cfg.episodes);
    let mut best: Option<(f64, SparsityPolicy, f64)> = None;
    for episode in 0..cfg.episodes {
        let (policy, steps) = rollout(net, budget, &mut |s| agent.act(s, true))?;
        let reward = diverged_as_zero(evaluate_pruned(net, params, &policy, data, &finetune))?;
        let cost = budget.policy_cost(net, &policy)?;
        debug_assert!(cost <= budget.limit());
        for (t, (state, action)) in steps.iter().enumerate() {
            let last = t + 1 == steps.len();
            agent.remember(Transition {
                state: state.clone(),
                action: *action,
                reward,
                next_state: if last { state.clone() } else { steps[t + 1].0.clone() },
                terminal: last,
            })?;
        }
        if agent.ready() {
            for _ in 0..cfg.updates_per_episode {
                agent.update()?;
            }
        }
        agent.end_episode();
        if best.as_ref().map_or(true, |(acc, _, _)| reward > *acc) {
            best = Some((reward, policy.clone(), cost));
        }
        log.push(AmcEpisode {
            episode,
            actions: steps.iter().map(|(_, a)| *a).collect(),
            policy,
            cost,
            reward,
        });
    }
    let (accuracy, policy, cost) =
        best.ok_or_else(|| Error::Input("amc search needs at least one episode".into()))?;
    Ok(AmcOutcome {
        policy,
        accuracy,
        cost,
        log,
        agent,
    })
}
