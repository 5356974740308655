//! Robustness scoring of Siamese verification systems with frozen adversarial
//! test suites.
//!
//! The library builds a self-contained benchmark end to end: a procedural
//! verification dataset, a zoo of small Siamese encoders, transferable
//! adversarial candidates generated against a held-out extra encoder, a
//! GA-selected test subset whose failure pattern tracks reference robustness
//! across systems, and a serialized suite that scores unseen systems in a
//! single forward-only pass. PGD and local-Lipschitz references plus a
//! brute-force grid oracle validate the estimates.

pub mod artifact;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod generate;
pub mod numerics;
pub mod oracle;
pub mod optimize;
pub mod perturb;
pub mod pipeline;
pub mod reference;
pub mod siamese;
pub mod suite;

pub use error::{Error, Result};
