//! PPO and A2C training loops, rollout collection and advantage estimation.

pub mod a2c;
pub mod config;
pub mod ppo;
pub mod rollout;
pub mod train;

pub use a2c::{a2c_gradient, a2c_update};
pub use config::{A2cConfig, EvalConfig, PpoConfig};
pub use ppo::{clip_grad_norm, clipped_surrogate, normalize_advantages, ppo_update, LossStats};
pub use rollout::{collect_rollout, compute_gae, EnvSlot, EpisodeStat, RolloutBuffer};
pub use train::{
    curve_csv, evaluate, train, train_from, Algo, AlgoConfig, CurvePoint, EpisodeTrace, EvalReport,
    PhaseTimes, TrainReport,
};
