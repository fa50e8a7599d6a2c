//! Dense feed-forward networks and the training regimes used to study how
//! fault tolerance, adversarial robustness and differential privacy trade
//! off against each other.
//!
//! The crate is `no_std` + `alloc`. File formats, configuration and the
//! command line live in the `faultbench` companion crate.
//!
//! Module map:
//!
//! * [`nn`]: network representation, forward pass, exact gradients, SGD.
//! * [`data`]: datasets, the two-circles generator, IDX parsing, batching.
//! * [`attacks`]: l∞ projected gradient attacks (CE and KL objectives).
//! * [`training`]: natural, Tikhonov, input-noise, TRADES and DP-SGD regimes.
//! * [`privacy`]: Rényi-DP accounting and the DP generalization bound.
//! * [`faults`]: stuck-at-0 node and parameter faults, fault sweeps.
//! * [`metrics`]: accuracy, generalization error, parameter dispersion.
#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` style checks are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod attacks;
pub mod data;
mod error;
pub mod faults;
pub mod linalg;
mod math;
pub mod metrics;
pub mod nn;
pub mod privacy;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use nn::{DenseLayer, ForwardTrace, Gradients, Network};
pub use rng::StreamRng;
