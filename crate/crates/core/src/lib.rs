//! Bayesian risk-averse reinforcement learning.

pub mod bandit;
pub mod brmdp;
pub mod config;
pub mod environments;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod normality;
pub mod posteriors;
pub mod risk;
pub mod stats;

pub use error::{Error, Result};
