//! Traffic-signal control laboratory core.
//!
//! * [`nn`]: dense matrices with reverse-mode gradients and Adam.
//! * [`sim`]: queue-based grid traffic simulation.
//! * [`dhg`]: directed spatio-temporal hypergraph construction and attention.
//! * [`ppo`]: multi-agent PPO with a hypergraph critic.
//! * [`control`]: fixed-time and max-pressure baselines.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod control;
pub mod dhg;
pub mod matrix;
pub mod nn;
pub mod ppo;
pub mod sim;

pub use matrix::Matrix;
