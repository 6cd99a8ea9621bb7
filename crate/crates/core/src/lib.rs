//! Semi-autonomous navigation of magnetic micro-robots in 2D vessel maps.
//!
//! The crate bundles a grid-world simulator, policy-gradient trainers (PPO
//! and A2C) built on a small hand-written actor-critic network, a
//! mode-switching controller that hands control from the learned policy to a
//! human operator, a point-dipole actuation model, trajectory-quality
//! metrics with their statistical comparison, and the session engine behind
//! the teleoperation server.

pub mod env;
pub mod error;
pub mod grid;
pub mod io;
pub mod magnet;
pub mod metrics;
pub mod par;
pub mod policy;
pub mod semi_auto;
pub mod session;
pub mod trainers;

pub use error::{Error, Result};
