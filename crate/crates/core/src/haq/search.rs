use serde::{Deserialize, Serialize};

use super::budget::{enforce_budget, Budget};
use super::quant::{action_to_bits, QuantHook};
use crate::amc::{layer_state, StateContext, STATE_DIM as LAYER_STATE_DIM};
use crate::error::{Error, Result};
use crate::hwmodel::{simulate_cost, BitwidthPolicy, CostReport, HardwareSpec, LayerBits};
use crate::nncore::{count_macs, evaluate, fit, Dataset, NetSpec, Params, SgdConfig};
use crate::rlcore::{Agent, AgentConfig, Transition};

/// Layer features plus a flag that is 1 for the activation decision.
pub const STATE_DIM: usize = LAYER_STATE_DIM + 1;

fn default_finetune_epochs() -> usize {
    1
}
fn default_finetune_lr() -> f64 {
    0.02
}
fn default_batch() -> usize {
    32
}
fn default_updates() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HaqConfig {
    pub episodes: usize,
    /// Quantization-aware fine-tuning before each reward evaluation.
    #[serde(default = "default_finetune_epochs")]
    pub finetune_epochs: usize,
    #[serde(default = "default_finetune_lr")]
    pub finetune_lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_updates")]
    pub updates_per_episode: usize,
    /// `state_dim` and `seed` are overwritten by the search.
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub seed: u64,
}

impl HaqConfig {
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
pub struct HaqEpisode {
    pub episode: usize,
    /// Raw `(weight, activation)` actions per parametric layer.
    pub actions: Vec<(f64, f64)>,
    /// Policy after budget enforcement.
    pub policy: BitwidthPolicy,
    pub cost: f64,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct HaqOutcome {
    pub policy: BitwidthPolicy,
    pub accuracy: f64,
    pub cost: CostReport,
    pub log: Vec<HaqEpisode>,
    pub agent: Agent,
}

/// Quantization-agent state for decision `2t + activation` on parametric
/// layer `layer`. The "reduced" slot carries the MACs share of the layers
/// already decided.
fn quant_state(net: &NetSpec, layer: usize, t: usize, steps: usize, prev: f64, activation: bool) -> Vec<f64> {
    let total = net.total_macs().max(1) as f64;
    let before: u64 = net.layers[..layer].iter().map(count_macs).sum();
    let mut s = layer_state(
        net,
        layer,
        StateContext {
            step: t,
            steps,
            reduced: before as f64 / total,
            prev_action: prev,
        },
    );
    s.push(if activation { 1.0 } else { 0.0 });
    s
}

/// One pass over the parametric layers, two decisions each. Returns the
/// unconstrained policy and the `(state, action)` steps.
pub fn rollout(
    net: &NetSpec,
    act: &mut dyn FnMut(&[f64]) -> Result<f64>,
) -> Result<(BitwidthPolicy, Vec<(Vec<f64>, f64)>)> {
    let layers = net.parametric_indices();
    let mut policy = BitwidthPolicy::default();
    let mut steps = Vec::with_capacity(2 * layers.len());
    let mut prev = 1.0;
    for (t, &i) in layers.iter().enumerate() {
        let sw = quant_state(net, i, t, layers.len(), prev, false);
        let aw = act(&sw)?;
        let sa = quant_state(net, i, t, layers.len(), aw, true);
        let aa = act(&sa)?;
        policy.layers.insert(i, LayerBits::new(action_to_bits(aw), action_to_bits(aa)));
        steps.push((sw, aw));
        steps.push((sa, aa));
        prev = aa;
    }
    Ok((policy, steps))
}

/// Validation accuracy after quantization-aware fine-tuning of `params`
/// under `policy`. Depends only on the inputs.
pub fn evaluate_quantized(
    net: &NetSpec,
    params: &Params,
    policy: &BitwidthPolicy,
    data: &Dataset,
    finetune: &SgdConfig,
) -> Result<f64> {
    policy.validate_for(net)?;
    let hook = QuantHook { policy: policy.clone() };
    let mut p = params.clone();
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

/// Learns per-layer weight and activation bitwidths for a trained network
/// under `budget` on `hw`; returns the most accurate feasible policy seen
/// (earliest on ties).
pub fn haq_search(
    net: &NetSpec,
    params: &Params,
    data: &Dataset,
    hw: &HardwareSpec,
    budget: &Budget,
    cfg: &HaqConfig,
) -> Result<HaqOutcome> {
    net.validate()?;
    // refuse infeasible budgets before any episode
    enforce_budget(&BitwidthPolicy::uniform(net, 1), net, hw, budget)?;
    let finetune = cfg.finetune();
    let mut agent = Agent::new(AgentConfig {
        state_dim: STATE_DIM,
        seed: cfg.seed,
        ..cfg.agent.clone()
    })?;
    let mut log = Vec::with_capacity(cfg.episodes);
    let mut best: Option<(f64, BitwidthPolicy)> = None;
    for episode in 0..cfg.episodes {
        let (proposed, steps) = rollout(net, &mut |s| agent.act(s, true))?;
        let policy = enforce_budget(&proposed, net, hw, budget)?;
        let reward = diverged_as_zero(evaluate_quantized(net, params, &policy, data, &finetune))?;
        let cost = budget.cost(net, &policy, hw)?;
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
        if best.as_ref().map_or(true, |(acc, _)| reward > *acc) {
            best = Some((reward, policy.clone()));
        }
        log.push(HaqEpisode {
            episode,
            actions: steps.chunks(2).map(|c| (c[0].1, c[1].1)).collect(),
            policy,
            cost,
            reward,
        });
    }
    let (accuracy, policy) =
        best.ok_or_else(|| Error::Input("haq search needs at least one episode".into()))?;
    Ok(HaqOutcome {
        cost: simulate_cost(net, &policy, hw)?,
        policy,
        accuracy,
        log,
        agent,
    })
}

/// Policy of the agent's deterministic actor on `net`, before any budget.
pub fn greedy_policy(agent: &Agent, net: &NetSpec) -> Result<BitwidthPolicy> {
    if agent.config().state_dim != STATE_DIM {
        return Err(Error::Input(format!(
            "agent expects {} state features, quantization states have {STATE_DIM}",
            agent.config().state_dim
        )));
    }
    Ok(rollout(net, &mut |s| agent.greedy(s))?.0)
}

/// Runs a trained agent's frozen actor over another network and projects
/// the result onto the budget. No training happens.
pub fn transfer_policy(agent: &Agent, net: &NetSpec, hw: &HardwareSpec, budget: &Budget) -> Result<BitwidthPolicy> {
    net.validate()?;
    enforce_budget(&greedy_policy(agent, net)?, net, hw, budget)
}
