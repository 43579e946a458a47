//! Decentralized multi-player bandits with collision-channel communication.
//!
//! Agents share a stochastic bandit, observe only their own reward and a
//! collision bit, and coordinate purely through deliberate collisions.

pub mod asynch;
pub mod codec;
pub mod env;
pub mod metrics;
pub mod rng;
pub mod sim;
pub mod syncd;

pub use env::{Action, BanditConfig, BanditEnv, EnvError, Observation, Phase};
