use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::replay::{ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::nncore::{backward_layers, forward_layers, Adam, LayerSpec, NoHook, Params, Tensor};
use crate::rng;

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_lr() -> f64 {
    1e-3
}
fn default_tau() -> f64 {
    0.01
}
fn default_sigma() -> f64 {
    0.5
}
fn default_decay() -> f64 {
    0.99
}
fn default_capacity() -> usize {
    2000
}
fn default_batch() -> usize {
    64
}
fn default_warmup() -> usize {
    100
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// Filled in by the compression searches from their state layout.
    #[serde(default)]
    pub state_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_lr")]
    pub actor_lr: f64,
    #[serde(default = "default_lr")]
    pub critic_lr: f64,
    /// Discount. Episodic rewards are shared by every step of an episode, so
    /// the default bootstraps nothing.
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Initial standard deviation of the exploration noise.
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    /// Multiplicative noise decay applied by [`Agent::end_episode`].
    #[serde(default = "default_decay")]
    pub noise_decay: f64,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Transitions required before the first update.
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Standardize rewards by their running mean and deviation before updates.
    #[serde(default = "default_true")]
    pub normalize_rewards: bool,
    /// Overwritten by the compression searches with their own seed.
    #[serde(default)]
    pub seed: u64,
}

/// Default hyper-parameters with `state_dim` still unset (0).
impl Default for AgentConfig {
    fn default() -> Self {
        Self::new(0, 0)
    }
}

impl AgentConfig {
    pub fn new(state_dim: usize, seed: u64) -> Self {
        Self {
            state_dim,
            hidden: default_hidden(),
            actor_lr: default_lr(),
            critic_lr: default_lr(),
            gamma: 0.0,
            tau: default_tau(),
            noise_sigma: default_sigma(),
            noise_decay: default_decay(),
            capacity: default_capacity(),
            batch_size: default_batch(),
            warmup: default_warmup(),
            normalize_rewards: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Input(format!("agent config: {m}")));
        if self.state_dim == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("state_dim and hidden sizes must be positive");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0)
            || !self.actor_lr.is_finite()
            || !self.critic_lr.is_finite()
        {
            return bad("learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite())
            || !(self.noise_decay > 0.0 && self.noise_decay <= 1.0)
        {
            return bad("noise sigma must be >= 0 and decay in (0, 1]");
        }
        if self.batch_size == 0 || self.capacity < self.batch_size {
            return bad("capacity must be at least the (positive) batch size");
        }
        Ok(())
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RewardStats {
    pub fn push(&mut self, r: f64) {
        self.count += 1;
        let d = r - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (r - self.mean);
    }

    pub fn std(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }

    /// `(r - mean) / std`, or `r - mean` while the spread is negligible.
    pub fn normalize(&self, r: f64) -> f64 {
        let s = self.std();
        if s > 1e-8 {
            (r - self.mean) / s
        } else {
            r - self.mean
        }
    }
}

fn mlp(input: usize, hidden: &[usize]) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut cur = input;
    for &h in hidden {
        layers.push(LayerSpec::dense(cur, h));
        layers.push(LayerSpec::relu(h, (1, 1)));
        cur = h;
    }
    layers.push(LayerSpec::dense(cur, 1));
    layers
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn soft_update(target: &mut Params, online: &Params, tau: f64) {
    for (t, o) in target.tensors_mut().zip(online.tensors()) {
        for (x, y) in t.data_mut().iter_mut().zip(o.data()) {
            *x = tau * y + (1.0 - tau) * *x;
        }
    }
}

const MAGIC: &[u8; 8] = b"ADRLCKPT";
const VERSION: u32 = 1;

/// Actor-critic agent with target networks, replay and exploration noise.
#[derive(Debug, Clone)]
pub struct Agent {
    cfg: AgentConfig,
    actor_layers: Vec<LayerSpec>,
    critic_layers: Vec<LayerSpec>,
    pub actor: Params,
    pub critic: Params,
    pub actor_target: Params,
    pub critic_target: Params,
    actor_opt: Adam,
    critic_opt: Adam,
    replay: ReplayBuffer,
    rewards: RewardStats,
    sigma: f64,
    noise_rng: rng::Rng,
    replay_rng: rng::Rng,
}

impl Agent {
    pub fn new(cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        let actor_layers = mlp(cfg.state_dim, &cfg.hidden);
        let critic_layers = mlp(cfg.state_dim + 1, &cfg.hidden);
        let mut init = rng::stream(cfg.seed, rng::STREAM_AGENT);
        let actor = Params::init(&actor_layers, &mut init);
        let critic = Params::init(&critic_layers, &mut init);
        Ok(Self {
            actor_opt: Adam::new(cfg.actor_lr, actor.num_values()),
            critic_opt: Adam::new(cfg.critic_lr, critic.num_values()),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_layers,
            critic_layers,
            replay: ReplayBuffer::new(cfg.capacity),
            rewards: RewardStats::default(),
            sigma: cfg.noise_sigma,
            noise_rng: rng::stream(cfg.seed, rng::STREAM_NOISE),
            replay_rng: rng::stream(cfg.seed, rng::STREAM_REPLAY),
            cfg,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn noise_sigma(&self) -> f64 {
        self.sigma
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn reward_stats(&self) -> RewardStats {
        self.rewards
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.cfg.state_dim {
            return Err(Error::Input(format!(
                "state has {} features, agent expects {}",
                state.len(),
                self.cfg.state_dim
            )));
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("state contains non-finite values".into()));
        }
        Ok(())
    }

    fn actor_forward(&self, params: &Params, states: Tensor) -> Result<Vec<f64>> {
        let (z, _) = forward_layers(&self.actor_layers, params, &states, &NoHook)?;
        Ok(z.data().iter().map(|&v| sigmoid(v)).collect())
    }

    fn critic_input(&self, states: &[&[f64]], actions: &[f64]) -> Tensor {
        let d = self.cfg.state_dim + 1;
        let mut data = Vec::with_capacity(states.len() * d);
        for (s, a) in states.iter().zip(actions) {
            data.extend_from_slice(s);
            data.push(*a);
        }
        Tensor::new(vec![states.len(), d], data).expect("consistent critic input")
    }

    /// Deterministic policy output.
    pub fn greedy(&self, state: &[f64]) -> Result<f64> {
        self.check_state(state)?;
        let x = Tensor::new(vec![1, state.len()], state.to_vec())?;
        Ok(self.actor_forward(&self.actor, x)?[0])
    }

    /// Policy action; with `explore`, a Gaussian around it truncated to
    /// `[0, 1]` by rejection.
    pub fn act(&mut self, state: &[f64], explore: bool) -> Result<f64> {
        let mu = self.greedy(state)?;
        if !explore || self.sigma == 0.0 {
            return Ok(mu);
        }
        for _ in 0..64 {
            let z: f64 = self.noise_rng.sample(StandardNormal);
            let a = mu + self.sigma * z;
            if (0.0..=1.0).contains(&a) {
                return Ok(a);
            }
        }
        let z: f64 = self.noise_rng.sample(StandardNormal);
        Ok((mu + self.sigma * z).clamp(0.0, 1.0))
    }

    /// Q-value estimate of the online critic.
    pub fn q_value(&self, state: &[f64], action: f64) -> Result<f64> {
        self.check_state(state)?;
        let x = self.critic_input(&[state], &[action]);
        let (q, _) = forward_layers(&self.critic_layers, &self.critic, &x, &NoHook)?;
        Ok(q.data()[0])
    }

    pub fn remember(&mut self, t: Transition) -> Result<()> {
        self.check_state(&t.state)?;
        self.check_state(&t.next_state)?;
        if !(0.0..=1.0).contains(&t.action) || !t.reward.is_finite() {
            return Err(Error::Input(format!(
                "transition action {} must lie in [0, 1] with a finite reward",
                t.action
            )));
        }
        self.rewards.push(t.reward);
        self.replay.push(t);
        Ok(())
    }

    pub fn ready(&self) -> bool {
        self.replay.len() >= self.cfg.warmup.max(self.cfg.batch_size)
    }

    pub fn end_episode(&mut self) {
        self.sigma *= self.cfg.noise_decay;
    }

    /// One critic regression step, one actor ascent step and a soft target
    /// update. Returns `(critic_loss, actor_objective)`.
    pub fn update(&mut self) -> Result<(f64, f64)> {
        let n = self.cfg.batch_size;
        let slots = self
            .replay
            .sample_indices(n, self.cfg.warmup, &mut self.replay_rng)?;
        let batch: Vec<&Transition> = slots.iter().map(|&i| self.replay.get(i)).collect();
        let sd = self.cfg.state_dim;
        let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let next: Vec<&[f64]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
        let flat = |rows: &[&[f64]]| Tensor::new(vec![rows.len(), sd], rows.concat());

        let a_next = self.actor_forward(&self.actor_target, flat(&next)?)?;
        let (q_next, _) = forward_layers(
            &self.critic_layers,
            &self.critic_target,
            &self.critic_input(&next, &a_next),
            &NoHook,
        )?;
        let targets: Vec<f64> = batch
            .iter()
            .zip(q_next.data())
            .map(|(t, q2)| {
                let r = if self.cfg.normalize_rewards {
                    self.rewards.normalize(t.reward)
                } else {
                    t.reward
                };
                r + if t.terminal { 0.0 } else { self.cfg.gamma * q2 }
            })
            .collect();

        let actions: Vec<f64> = batch.iter().map(|t| t.action).collect();
        let (q, trace) = forward_layers(
            &self.critic_layers,
            &self.critic,
            &self.critic_input(&states, &actions),
            &NoHook,
        )?;
        let mut loss = 0.0;
        let dq: Vec<f64> = q
            .data()
            .iter()
            .zip(&targets)
            .map(|(q, y)| {
                loss += (q - y) * (q - y);
                2.0 * (q - y) / n as f64
            })
            .collect();
        loss /= n as f64;
        let g = backward_layers(
            &self.critic_layers,
            &self.critic,
            &trace,
            &Tensor::new(q.shape().to_vec(), dq)?,
        )?;
        self.critic_opt.step_params(&mut self.critic, &g.params);

        let s_t = flat(&states)?;
        let (z, actor_trace) = forward_layers(&self.actor_layers, &self.actor, &s_t, &NoHook)?;
        let mu: Vec<f64> = z.data().iter().map(|&v| sigmoid(v)).collect();
        let (q_mu, critic_trace) = forward_layers(
            &self.critic_layers,
            &self.critic,
            &self.critic_input(&states, &mu),
            &NoHook,
        )?;
        let objective = q_mu.data().iter().sum::<f64>() / n as f64;
        let dq_mu = Tensor::full(q_mu.shape().to_vec(), -1.0 / n as f64);
        let gc = backward_layers(&self.critic_layers, &self.critic, &critic_trace, &dq_mu)?;
        let dz: Vec<f64> = (0..n)
            .map(|i| gc.input.data()[i * (sd + 1) + sd] * mu[i] * (1.0 - mu[i]))
            .collect();
        let ga = backward_layers(
            &self.actor_layers,
            &self.actor,
            &actor_trace,
            &Tensor::new(z.shape().to_vec(), dz)?,
        )?;
        self.actor_opt.step_params(&mut self.actor, &ga.params);

        soft_update(&mut self.actor_target, &self.actor, self.cfg.tau);
        soft_update(&mut self.critic_target, &self.critic, self.cfg.tau);
        if !(self.actor.all_finite() && self.critic.all_finite()) {
            return Err(Error::Training {
                epoch: 0,
                reason: "agent parameters became non-finite".into(),
            });
        }
        Ok((loss, objective))
    }

    /// Serializes config, the four networks, the current noise scale and the
    /// reward statistics. Optimizer moments and replay are not stored.
    pub fn checkpoint(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let json = serde_json::to_vec(&(&self.cfg, &self.rewards))
            .map_err(|e| Error::Parse(e.to_string()))?;
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.sigma.to_le_bytes());
        for p in [&self.actor, &self.critic, &self.actor_target, &self.critic_target] {
            let flat = p.flatten();
            out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
            for v in flat {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::Parse("truncated agent checkpoint".into()));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(Error::Parse("not an agent checkpoint".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let (cfg, rewards): (AgentConfig, RewardStats) =
            serde_json::from_slice(take(len)?).map_err(|e| Error::Parse(e.to_string()))?;
        let mut agent = Agent::new(cfg).map_err(|e| Error::Parse(e.to_string()))?;
        agent.rewards = rewards;
        agent.sigma = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        for p in [
            &mut agent.actor,
            &mut agent.critic,
            &mut agent.actor_target,
            &mut agent.critic_target,
        ] {
            let n = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
            if n != p.num_values() {
                return Err(Error::Parse(format!(
                    "checkpoint network has {n} values, config implies {}",
                    p.num_values()
                )));
            }
            let raw = take(n * 8)?;
            let flat: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            p.assign_flat(&flat);
        }
        Ok(agent)
    }
}
