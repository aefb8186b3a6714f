//! Decentralized scheduling of time-dependent UAVs, ground workers, and
//! charging vehicles for spatial crowdsensing.
//!
//! Each decision epoch, UAVs are split into task-seekers and charge-seekers
//! by comparing expected benefits ([`benefit`]); every free agent then plays
//! a local game over reachable points, sampling actions with a distance
//! softmax and resampling until its whole neighborhood is at a local Nash
//! equilibrium ([`nash`]). The [`sim`] kernel evolves the world between
//! epochs and records metrics; [`baselines`] provides comparison schedulers.

pub mod baselines;
pub mod benefit;
pub mod coupling;
pub mod error;
pub mod experiment;
pub mod nash;
pub mod scenario;
pub mod sim;
pub mod world;

pub use error::{Error, Result};
