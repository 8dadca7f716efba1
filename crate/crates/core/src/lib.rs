//! Minimax training for class-imbalanced classification.
//!
//! The crate bundles everything needed to train a classifier that protects
//! its worst-performing class and to check the method against exact
//! references:
//!
//! * [`losses`]: the generalized logit-adjusted softmax loss family, including
//!   the targeted logit-adjustment (TLA) and targeted-weight (TWCE) losses.
//! * [`ascent`]: per-class risk estimation and the two prior updates
//!   (linear ascent toward the `M` worst classes, exponentiated gradient).
//! * [`minimax`]: the three-phase warmup / minimax / fine-tune driver.
//! * [`oracle`]: Bayes-optimal rules and risks for Gaussian mixtures, plus
//!   adversarial prior search.
//! * [`theory`] and [`mc`]: exact binomial calculators for worst-class
//!   identification and EGA estimate error, and the Monte Carlo harness that
//!   validates them.
//!
//! Class indices are zero-based throughout the library. Files exchanged with
//! the outside world (CSV datasets, reports) use one-based labels.

pub mod ascent;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod losses;
pub mod mc;
pub mod metrics;
pub mod minimax;
pub mod model;
pub mod oracle;
pub mod prior;
pub mod seed;
pub mod theory;

pub use error::{Error, Result};
pub use prior::Prior;
