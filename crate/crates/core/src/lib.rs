//! Distributed model evidence.
//!
//! A dataset is split into disjoint shards, every shard samples its
//! subposterior (the shard likelihood times the prior raised to `1/S`) on an
//! independent worker, and the coordinator recombines the per-shard evidences
//! with the integral of the product of subposteriors:
//!
//! ```text
//! log p(y) = S·log α + Σ_s log p̃(y_s) + log ∫ Π_s p̃(θ | y_s) dθ
//! ```
//!
//! The last term is either estimated from Polya-Gamma conditional Gaussians
//! (`Mode::Conditional`) or from a Gaussian approximation of every
//! subposterior (`Mode::Approx`). Reversible-jump variable selection can be
//! distributed the same way, see [`rjmcmc`].
//!
//! Workers run concurrently through rayon when the `parallel` feature is on
//! (the default); without it every data-parallel loop runs sequentially with
//! identical results.

pub mod cluster;
pub mod diagnostics;
pub mod error;
pub mod evidence;
pub mod exec;
pub mod linalg;
pub mod model;
pub mod rjmcmc;
pub mod samplers;
pub mod sharding;

pub use error::{Error, Result};
pub use model::{Dataset, Likelihood, ModelSpec, Prior, Shard};
