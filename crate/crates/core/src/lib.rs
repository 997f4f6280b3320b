//! Simulator, learner and experiment harness for learned MAC signaling
//! between one base station and a handful of UEs.

pub mod baselines;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod maddpg;
pub mod neural;
pub mod persist;
pub mod protocol;
pub mod rng;
pub mod state;
