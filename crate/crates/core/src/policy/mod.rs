//! Actor-critic network, categorical action head and optimizer.

pub mod adam;
pub mod dist;
pub mod net;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use dist::{sample_action, CategoricalDist};
pub use net::{Arch, ForwardCache, Layer, PolicyParams};

use rand::RngCore;

use crate::env::{Observation, NUM_ACTIONS};

/// Anything that picks an action from an observation.
pub trait Policy: Send + Sync {
    fn act(&self, obs: &Observation) -> usize;

    /// Stochastic action; scripted policies fall back to `act`.
    fn sample(&self, obs: &Observation, rng: &mut dyn RngCore) -> usize {
        let _ = rng;
        self.act(obs)
    }
}

/// Greedy (argmax) action of a trained network.
impl Policy for PolicyParams {
    fn act(&self, obs: &Observation) -> usize {
        let mut cache = ForwardCache::new(&self.arch);
        match self.forward_into(obs, &mut cache) {
            Ok(()) => CategoricalDist::from_logits(&cache.logits).argmax(),
            Err(_) => 0,
        }
    }

    fn sample(&self, obs: &Observation, rng: &mut dyn RngCore) -> usize {
        let mut cache = ForwardCache::new(&self.arch);
        match self.forward_into(obs, &mut cache) {
            Ok(()) => CategoricalDist::from_logits(&cache.logits).sample(rng).0,
            Err(_) => 0,
        }
    }
}

/// Scripted policy that picks the action best aligned with the straight
/// line to the target. Needs the world size to undo observation scaling.
#[derive(Clone, Copy, Debug)]
pub struct StraightLinePolicy {
    pub width: f64,
    pub height: f64,
}

impl Policy for StraightLinePolicy {
    fn act(&self, obs: &Observation) -> usize {
        let dx = (obs[4] - obs[0]) * self.width;
        let dy = (obs[5] - obs[1]) * self.height;
        let table = crate::env::action_table();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for a in table.iter().take(NUM_ACTIONS) {
            let d = (dx - a.dx as f64).hypot(dy - a.dy as f64);
            if d < best_d {
                best_d = d;
                best = a.index;
            }
        }
        best
    }
}
