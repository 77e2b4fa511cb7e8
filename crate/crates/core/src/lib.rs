//! Desk-scale laboratory for two-game adversarial transfer training.
//!
//! A single conditional generator is trained inside two simultaneous adversarial games —
//! a source-domain game that matches generated (input, label) pairs against a labelled
//! joint distribution, and a target-domain game that matches them against an encoder's
//! pairings of unlabelled inputs under a shifted label prior. The encoder that falls out
//! of the second game is the inference artifact. Every world here has closed-form
//! distributions, so the theoretical optimum of both games is computable exactly and
//! training outcomes are checked against it rather than eyeballed.
//!
//! Layout:
//! - [`rng`]: pinned, reproducible pseudo-randomness (xoshiro256++ with Box–Muller);
//! - [`tensor`]: minimal reverse-mode autodiff over dense `f64` matrices;
//! - [`optim`]: SGD / Adam updates with consume-on-step gradients;
//! - [`worlds`]: synthetic discrete and linear-Gaussian problem instances.

#![forbid(unsafe_code)]

pub mod adversarial;
pub mod checkpoint;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod worlds;
