use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{EnvConfig, Observation, VascEnv};
use crate::error::Result;
use crate::grid::OccupancyGrid;
use crate::par;
use crate::policy::{CategoricalDist, ForwardCache, PolicyParams};

/// One environment with its private random stream and running episode tally.
#[derive(Clone, Debug)]
pub struct EnvSlot {
    pub env: VascEnv,
    rng: ChaCha8Rng,
    episode_return: f64,
    episode_len: u32,
}

impl EnvSlot {
    pub fn new(grid: Arc<OccupancyGrid>, config: EnvConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = VascEnv::new(grid, config, &mut rng)?;
        Ok(Self {
            env,
            rng,
            episode_return: 0.0,
            episode_len: 0,
        })
    }

    /// Builds `n` slots whose seeds are drawn from `rng`.
    pub fn many<R: Rng + ?Sized>(
        grid: &Arc<OccupancyGrid>,
        config: &EnvConfig,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Self>> {
        (0..n)
            .map(|_| Self::new(grid.clone(), config.clone(), rng.random()))
            .collect()
    }
}

/// Summary of an episode that finished during collection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStat {
    pub episode_return: f64,
    pub length: u32,
    pub arrived: bool,
}

/// Transitions from `n_envs` environments, `length` steps each, stored
/// env-major (`index = env * length + t`).
#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub length: usize,
    pub obs: Vec<Observation>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// The episode ended at this step (arrival or truncation).
    pub dones: Vec<bool>,
    /// Value of the final observation when the episode was truncated rather
    /// than terminated; zero otherwise.
    pub truncation_values: Vec<f64>,
    /// Value of the observation following the last step of each env.
    pub last_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub episodes: Vec<EpisodeStat>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Fills `advantages` and `returns` by generalized advantage estimation
    /// on rewards multiplied by `reward_scale`. Truncated episodes bootstrap
    /// from their final value; arrivals are terminal.
    pub fn compute_gae_scaled(&mut self, gamma: f64, lambda: f64, reward_scale: f64) {
        let n = self.len();
        self.advantages = vec![0.0; n];
        self.returns = vec![0.0; n];
        for e in 0..self.n_envs {
            let mut next_adv = 0.0;
            let mut next_value = self.last_values[e];
            for t in (0..self.length).rev() {
                let i = e * self.length + t;
                let r = reward_scale * self.rewards[i] + gamma * self.truncation_values[i];
                let live = if self.dones[i] { 0.0 } else { 1.0 };
                let delta = r + gamma * next_value * live - self.values[i];
                next_adv = delta + gamma * lambda * live * next_adv;
                self.advantages[i] = next_adv;
                self.returns[i] = next_adv + self.values[i];
                next_value = self.values[i];
            }
        }
    }
}

/// `advantage_t = Σ_k (γλ)^k δ_{t+k}` within each episode, with
/// `δ_t = r_t + γ V(s_{t+1}) (1 − done_t) − V(s_t)`; returns are
/// advantages plus values.
pub fn compute_gae(buffer: &mut RolloutBuffer, gamma: f64, lambda: f64) {
    buffer.compute_gae_scaled(gamma, lambda, 1.0);
}

struct Segment {
    obs: Vec<Observation>,
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    truncation_values: Vec<f64>,
    last_value: f64,
    episodes: Vec<EpisodeStat>,
}

fn run_segment(policy: &PolicyParams, slot: &mut EnvSlot, length: usize) -> Result<Segment> {
    let mut seg = Segment {
        obs: Vec::with_capacity(length),
        actions: Vec::with_capacity(length),
        log_probs: Vec::with_capacity(length),
        rewards: Vec::with_capacity(length),
        values: Vec::with_capacity(length),
        dones: Vec::with_capacity(length),
        truncation_values: Vec::with_capacity(length),
        last_value: 0.0,
        episodes: Vec::new(),
    };
    let mut cache = ForwardCache::new(&policy.arch);
    for _ in 0..length {
        let obs = slot.env.observe();
        policy.forward_into(&obs, &mut cache)?;
        let dist = CategoricalDist::from_logits(&cache.logits);
        let (action, log_prob) = dist.sample(&mut slot.rng);
        let value = cache.value;
        let r = slot.env.step(action)?;
        slot.episode_return += r.reward;
        slot.episode_len += 1;
        let mut truncation_value = 0.0;
        let done = r.next_state.done;
        if done {
            if r.truncated {
                policy.forward_into(&slot.env.observe(), &mut cache)?;
                truncation_value = cache.value;
            }
            seg.episodes.push(EpisodeStat {
                episode_return: slot.episode_return,
                length: slot.episode_len,
                arrived: r.arrived,
            });
            slot.episode_return = 0.0;
            slot.episode_len = 0;
            let EnvSlot { env, rng, .. } = slot;
            env.reset(rng)?;
        }
        seg.obs.push(obs);
        seg.actions.push(action);
        seg.log_probs.push(log_prob);
        seg.rewards.push(r.reward);
        seg.values.push(value);
        seg.dones.push(done);
        seg.truncation_values.push(truncation_value);
    }
    policy.forward_into(&slot.env.observe(), &mut cache)?;
    seg.last_value = cache.value;
    Ok(seg)
}

/// Steps every slot `length` times with actions sampled from the policy,
/// resetting environments as episodes end. Slots run independently (in
/// parallel with the `parallel` feature); the result does not depend on
/// thread count.
pub fn collect_rollout(
    policy: &PolicyParams,
    slots: &mut [EnvSlot],
    length: usize,
) -> Result<RolloutBuffer> {
    let segments = par::map_mut(slots, |slot| run_segment(policy, slot, length));
    let mut buf = RolloutBuffer {
        n_envs: slots.len(),
        length,
        ..Default::default()
    };
    for seg in segments {
        let seg = seg?;
        buf.obs.extend(seg.obs);
        buf.actions.extend(seg.actions);
        buf.log_probs.extend(seg.log_probs);
        buf.rewards.extend(seg.rewards);
        buf.values.extend(seg.values);
        buf.dones.extend(seg.dones);
        buf.truncation_values.extend(seg.truncation_values);
        buf.last_values.push(seg.last_value);
        buf.episodes.extend(seg.episodes);
    }
    Ok(buf)
}
