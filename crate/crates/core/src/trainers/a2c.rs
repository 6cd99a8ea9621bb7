use crate::error::{Error, Result};
use crate::par;
use crate::policy::{AdamState, CategoricalDist, ForwardCache, PolicyParams};
use crate::trainers::config::A2cConfig;
use crate::trainers::ppo::{clip_grad_norm, LossStats};
use crate::trainers::rollout::RolloutBuffer;

const GRAD_CHUNK: usize = 16;

/// Gradient of `−logπ(a|s)·A + c_v·(V − R)² − c_ent·H` averaged over the
/// buffer, with the loss terms evaluated at the current parameters.
pub fn a2c_gradient(
    params: &PolicyParams,
    buffer: &RolloutBuffer,
    config: &A2cConfig,
) -> Result<(PolicyParams, LossStats)> {
    let n = buffer.len();
    if n == 0 || buffer.advantages.len() != n || buffer.returns.len() != n {
        return Err(Error::InvalidInput("returns not computed".into()));
    }
    let scale = 1.0 / n as f64;
    let idx: Vec<usize> = (0..n).collect();
    let parts = par::map_chunks(&idx, GRAD_CHUNK, |chunk| -> Result<(PolicyParams, LossStats)> {
        let mut grads = params.zeros_like();
        let mut stats = LossStats::default();
        let mut cache = ForwardCache::new(&params.arch);
        let mut grad_logits = vec![0.0; params.arch.actions];
        for &i in chunk {
            params.forward_into(&buffer.obs[i], &mut cache)?;
            let dist = CategoricalDist::from_logits(&cache.logits);
            let a = buffer.actions[i];
            let adv = buffer.advantages[i];
            let probs = dist.probabilities();
            let ent_grad = dist.entropy_grad();
            for (j, g) in grad_logits.iter_mut().enumerate() {
                let onehot = if j == a { 1.0 } else { 0.0 };
                *g = scale * (-adv * (onehot - probs[j]) - config.ent_coef * ent_grad[j]);
            }
            let v_err = cache.value - buffer.returns[i];
            let grad_value = scale * config.vf_coef * 2.0 * v_err;
            params.backward_into(&mut cache, &grad_logits, grad_value, &mut grads)?;

            stats.policy_loss -= dist.log_prob(a) * adv * scale;
            stats.value_loss += v_err * v_err * scale;
            stats.entropy += dist.entropy() * scale;
        }
        Ok((grads, stats))
    });
    let mut total = params.zeros_like();
    let mut stats = LossStats::default();
    for part in parts {
        let (g, s) = part?;
        total.add_scaled(&g, 1.0);
        stats.policy_loss += s.policy_loss;
        stats.value_loss += s.value_loss;
        stats.entropy += s.entropy;
    }
    stats.minibatches = 1;
    Ok((total, stats))
}

/// One gradient step over the whole rollout. Advantages must already hold
/// n-step estimates (`compute_gae` with λ = 1).
pub fn a2c_update(
    params: &mut PolicyParams,
    adam: &mut AdamState,
    buffer: &RolloutBuffer,
    config: &A2cConfig,
) -> Result<LossStats> {
    let (mut grads, mut stats) = a2c_gradient(params, buffer, config)?;
    stats.check_finite()?;
    stats.grad_norm = clip_grad_norm(&mut grads, config.max_grad_norm);
    adam.update(params, &grads)?;
    Ok(stats)
}
