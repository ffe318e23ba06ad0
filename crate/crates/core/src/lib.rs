//! Population-level geometry of contrastive learning with latent classes:
//! exact and Monte Carlo evaluation of the noise-contrastive objective over
//! correlation matrices, projected-gradient optimization of that objective,
//! the downstream supervised loss of the learned geometry, transfer bounds,
//! and embedding-structure diagnostics.
//!
//! All randomness flows through counter-based streams derived from a single
//! root seed, so every result is bit-reproducible at any worker count; the
//! `parallel` feature (on by default) runs Monte Carlo reductions and
//! optimizer runs on a rayon pool without changing any output.

pub mod bounds;
pub mod downstream;
pub mod error;
pub mod latent;
pub mod losses;
pub mod metrics;
pub mod nce;
pub mod opt;
pub mod parallel;
pub mod seeding;
pub mod verify;

pub use error::{Error, Result};
pub use latent::{ClassDistribution, CorrelationMatrix, Representation};
pub use losses::{LossKind, LossSpec};
