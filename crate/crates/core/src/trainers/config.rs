use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub total_steps: u64,
    /// Transitions collected per update, summed over all environments.
    pub rollout_length: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub clip_ratio: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
    pub n_envs: usize,
    /// Multiplier applied to rewards before advantage estimation.
    pub reward_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            total_steps: 2_000_000,
            rollout_length: 2048,
            minibatch_size: 64,
            epochs: 4,
            clip_ratio: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            ent_coef: 0.01,
            vf_coef: 0.5,
            lr: 3e-4,
            max_grad_norm: 0.5,
            seed: 0,
            n_envs: 8,
            reward_scale: 0.01,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        check_discount(self.gamma)?;
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config("gae_lambda must lie in [0, 1]".into()));
        }
        if !(self.clip_ratio > 0.0) {
            return Err(Error::Config("clip_ratio must be positive".into()));
        }
        if self.n_envs == 0 || self.rollout_length == 0 || self.rollout_length % self.n_envs != 0 {
            return Err(Error::Config(
                "rollout_length must be a positive multiple of n_envs".into(),
            ));
        }
        if self.minibatch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("minibatch_size and epochs must be positive".into()));
        }
        check_common(self.lr, self.max_grad_norm, self.reward_scale)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A2cConfig {
    pub total_steps: u64,
    pub n_steps: usize,
    pub gamma: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
    pub n_envs: usize,
    pub reward_scale: f64,
}

impl Default for A2cConfig {
    fn default() -> Self {
        Self {
            total_steps: 2_000_000,
            n_steps: 5,
            gamma: 0.99,
            ent_coef: 0.01,
            vf_coef: 0.5,
            lr: 7e-4,
            max_grad_norm: 0.5,
            seed: 0,
            n_envs: 8,
            reward_scale: 0.01,
        }
    }
}

impl A2cConfig {
    pub fn validate(&self) -> Result<()> {
        check_discount(self.gamma)?;
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if self.n_envs == 0 {
            return Err(Error::Config("n_envs must be at least 1".into()));
        }
        check_common(self.lr, self.max_grad_norm, self.reward_scale)
    }
}

/// Greedy evaluation schedule used while training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Environment steps between evaluations.
    pub interval_steps: u64,
    /// Held-out start/target pairs per evaluation.
    pub episodes: usize,
    /// Seed of the held-out pairs; independent of the training seed.
    pub seed: u64,
    /// Stop training once the success rate reaches this value.
    pub stop_at_success: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interval_steps: 16_384,
            episodes: 100,
            seed: 0x5eed_e7a1,
            stop_at_success: None,
        }
    }
}

fn check_discount(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config("gamma must lie in (0, 1]".into()))
    }
}

fn check_common(lr: f64, max_grad_norm: f64, reward_scale: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config("lr must be positive".into()));
    }
    if !(max_grad_norm > 0.0) {
        return Err(Error::Config("max_grad_norm must be positive".into()));
    }
    if !(reward_scale > 0.0) {
        return Err(Error::Config("reward_scale must be positive".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PpoConfig::default().validate().unwrap();
        A2cConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            PpoConfig { gamma: 0.0, ..Default::default() },
            PpoConfig { gamma: 1.1, ..Default::default() },
            PpoConfig { gae_lambda: -0.1, ..Default::default() },
            PpoConfig { clip_ratio: 0.0, ..Default::default() },
            PpoConfig { n_envs: 3, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(A2cConfig { n_steps: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn toml_keys_mirror_field_names() {
        let c: PpoConfig = toml::from_str("clip_ratio = 0.1\nseed = 7\n").unwrap();
        assert_eq!(c.clip_ratio, 0.1);
        assert_eq!(c.seed, 7);
        assert_eq!(c.epochs, 4);
    }
}
