use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::policy::{AdamState, CategoricalDist, ForwardCache, PolicyParams};
use crate::trainers::config::PpoConfig;
use crate::trainers::rollout::RolloutBuffer;

/// Samples per parallel gradient chunk.
const GRAD_CHUNK: usize = 16;

/// Averages over the update of the individual loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
}

impl LossStats {
    fn accumulate(&mut self, other: &LossStats) {
        self.policy_loss += other.policy_loss;
        self.value_loss += other.value_loss;
        self.entropy += other.entropy;
        self.approx_kl += other.approx_kl;
        self.clip_fraction += other.clip_fraction;
        self.grad_norm += other.grad_norm;
        self.minibatches += other.minibatches;
    }

    fn averaged(mut self) -> Self {
        let n = self.minibatches.max(1) as f64;
        self.policy_loss /= n;
        self.value_loss /= n;
        self.entropy /= n;
        self.approx_kl /= n;
        self.clip_fraction /= n;
        self.grad_norm /= n;
        self
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if [self.policy_loss, self.value_loss, self.entropy]
            .iter()
            .all(|x| x.is_finite())
        {
            Ok(())
        } else {
            Err(Error::NonFinite(format!(
                "loss (policy {}, value {}, entropy {})",
                self.policy_loss, self.value_loss, self.entropy
            )))
        }
    }
}

/// `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of the clipped surrogate with respect to `log π_new`: the
/// unclipped branch contributes `r·A`, the clipped branch is flat.
pub fn clipped_surrogate_grad(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    if ratio * advantage <= clipped * advantage {
        ratio * advantage
    } else {
        0.0
    }
}

/// Shifts and scales to mean 0, standard deviation 1 (population std).
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.len() < 2 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut PolicyParams, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm {
        grads.scale(max_norm / (norm + 1e-12));
    }
    norm
}

pub(crate) struct Sample<'a> {
    pub obs: &'a [f64],
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Gradient of the clipped PPO loss averaged over `batch`, plus statistics.
pub(crate) fn ppo_batch_gradient(
    params: &PolicyParams,
    batch: &[Sample<'_>],
    config: &PpoConfig,
) -> Result<(PolicyParams, LossStats)> {
    let scale = 1.0 / batch.len() as f64;
    let parts = par::map_chunks(batch, GRAD_CHUNK, |chunk| -> Result<(PolicyParams, LossStats)> {
        let mut grads = params.zeros_like();
        let mut stats = LossStats::default();
        let mut cache = ForwardCache::new(&params.arch);
        let mut grad_logits = vec![0.0; params.arch.actions];
        for s in chunk {
            params.forward_into(s.obs, &mut cache)?;
            let dist = CategoricalDist::from_logits(&cache.logits);
            let log_prob = dist.log_prob(s.action);
            let ratio = (log_prob - s.old_log_prob).exp();
            let surrogate = clipped_surrogate(ratio, s.advantage, config.clip_ratio);
            let d_surr = clipped_surrogate_grad(ratio, s.advantage, config.clip_ratio);
            let entropy = dist.entropy();
            let probs = dist.probabilities();
            let ent_grad = dist.entropy_grad();
            // loss = −surrogate − c_ent·H + c_v·(V − R)²
            for (j, g) in grad_logits.iter_mut().enumerate() {
                let onehot = if j == s.action { 1.0 } else { 0.0 };
                *g = scale * (-d_surr * (onehot - probs[j]) - config.ent_coef * ent_grad[j]);
            }
            let v_err = cache.value - s.ret;
            let grad_value = scale * config.vf_coef * 2.0 * v_err;
            params.backward_into(&mut cache, &grad_logits, grad_value, &mut grads)?;

            stats.policy_loss -= surrogate * scale;
            stats.value_loss += v_err * v_err * scale;
            stats.entropy += entropy * scale;
            stats.approx_kl += ((ratio - 1.0) - (log_prob - s.old_log_prob)) * scale;
            if (ratio - 1.0).abs() > config.clip_ratio {
                stats.clip_fraction += scale;
            }
        }
        Ok((grads, stats))
    });
    let mut total = params.zeros_like();
    let mut stats = LossStats::default();
    for part in parts {
        let (g, s) = part?;
        total.add_scaled(&g, 1.0);
        stats.accumulate(&s);
    }
    stats.minibatches = 1;
    Ok((total, stats))
}

/// Runs the PPO epochs over a rollout whose advantages are already
/// computed. Advantages are normalized per minibatch; each minibatch takes
/// one clipped-gradient Adam step.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    adam: &mut AdamState,
    buffer: &RolloutBuffer,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<LossStats> {
    let n = buffer.len();
    if buffer.advantages.len() != n || buffer.returns.len() != n {
        return Err(Error::InvalidInput("advantages not computed".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut totals = LossStats::default();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for mb in order.chunks(config.minibatch_size) {
            let mut adv: Vec<f64> = mb.iter().map(|&i| buffer.advantages[i]).collect();
            normalize_advantages(&mut adv);
            let batch: Vec<Sample<'_>> = mb
                .iter()
                .zip(&adv)
                .map(|(&i, &a)| Sample {
                    obs: &buffer.obs[i],
                    action: buffer.actions[i],
                    old_log_prob: buffer.log_probs[i],
                    advantage: a,
                    ret: buffer.returns[i],
                })
                .collect();
            let (mut grads, mut stats) = ppo_batch_gradient(params, &batch, config)?;
            stats.check_finite()?;
            stats.grad_norm = clip_grad_norm(&mut grads, config.max_grad_norm);
            adam.update(params, &grads)?;
            totals.accumulate(&stats);
        }
    }
    Ok(totals.averaged())
}
