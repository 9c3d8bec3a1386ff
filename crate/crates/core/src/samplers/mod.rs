//! Subposterior samplers and chain summaries.

mod gibbs;
mod moments;
mod optimize;
mod pg;
mod rwmh;
mod stream;

pub use gibbs::pg_gibbs_logistic;
pub use moments::{chain_moments, effective_sample_size, Chain, GaussianMoments};
pub use optimize::{find_mode, initial_point_for, Mode};
pub use pg::{pg_mean, sample_pg, sample_pg_truncated, TRUNCATED_TERMS};
pub use rwmh::{rwmh_chain, RwmhConfig};
pub use stream::ConditionalGaussianStream;


use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
