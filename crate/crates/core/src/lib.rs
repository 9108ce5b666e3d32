//! Sensor selection for location-aware participatory sensing under
//! long-term participation incentives.
//!
//! Users cover grid cells of a sensing area; each slot the platform selects
//! a subset of users to maximize covered value minus sensing cost, while every
//! user must be selected often enough to keep them from dropping out. The
//! crate provides:
//!
//! - [`world`]: coverage and welfare arithmetic for one slot.
//! - [`solver`]: per-slot regulated-welfare maximization (exact, greedy and
//!   branch-and-bound).
//! - [`benchmark`]: offline optima and the dual upper bound.
//! - [`policy_dual`], [`policy_lyapunov`]: the two online selection policies.
//! - [`auction`]: the regulated reverse VCG auction and a truthfulness harness.
//! - [`baselines`]: RADP-VPC, greedy and random selection.
//! - [`scenarios`]: seeded instance generation (mobility, regions, weights, costs).
//! - [`engine`]: the slotted simulator with warmup and user dropping.

pub mod auction;
pub mod baselines;
pub mod benchmark;
pub mod engine;
mod error;
pub mod gridset;
pub mod policy_dual;
pub mod policy_lyapunov;
pub mod scenarios;
pub mod solver;
pub mod world;

pub use error::{Error, Result};

/// Absolute tolerance used whenever two objective values are compared for equality.
pub const TIE_TOL: f64 = 1e-9;
