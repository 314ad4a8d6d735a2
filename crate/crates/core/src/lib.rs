//! Weakly-supervised anomaly detection built around a score-distribution
//! overlap loss.
//!
//! A small MLP scorer maps feature rows to scalar anomaly scores. During
//! training the scores of unlabeled rows and of the few labeled anomalies are
//! each smoothed by a Gaussian KDE; the loss is the probability mass of the
//! unlabeled scores above the density intersection point plus the mass of the
//! anomaly scores below it, which is bounded to `[0, 2]` and penalises
//! reversed score order.
//!
//! Module map:
//!
//! - [`autonn`]: dense matrices, the scorer network with batch norm, manual
//!   backprop and SGD.
//! - [`kde`]: one-dimensional Gaussian KDE and score grids.
//! - [`overlap`]: the overlap loss family and the Gaussian closed form.
//! - [`baselines`]: Minus, Inverse, Hinge, Deviation and Ordinal losses.
//! - [`data`]: CSV loading, stratified splits, label reveal, batch sampling.
//! - [`synth`]: GMM / copula based synthetic anomaly generators.
//! - [`metrics`]: AUC-ROC, AUC-PR and the Wilcoxon signed-rank test.
//! - [`bench`]: experiment configs, the training loop, suites and reports.

pub mod autonn;
pub mod baselines;
pub mod bench;
pub mod data;
pub mod error;
pub mod kde;
pub mod metrics;
pub mod overlap;
pub mod synth;

pub use error::{Error, Result};

/// Deterministic random stream used everywhere a seed is accepted.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's random stream from an integer seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
