//! Neural feedback policies that provably keep a constraint `y <= y_max` of
//! high relative degree.
//!
//! A ReLU policy is made exactly affine on a buffer polytope next to the
//! constraint ([`police`]). Since the buffer is a polytope and the policy is
//! affine on it, checking the dissipation condition
//! `y^(r)(v) <= -2 eps - beta v_r` at the buffer vertices ([`buffer`],
//! [`verify`]) certifies that trajectories entering the buffer never cross the
//! constraint, where `eps` bounds how far the closed-loop dynamics are from
//! affine over the buffer ([`approx`]). Policies are trained with PPO
//! ([`train`]) and the whole pipeline is driven from TOML experiment files
//! ([`config`], [`cli`]).

pub mod approx;
pub mod buffer;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod hull;
pub mod nn;
pub mod police;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
