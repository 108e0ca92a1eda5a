//! Skeleton action recognition under temporal corruption.
//!
//! The pipeline: simulate frame dropping on 2-D pose sequences, restore them
//! with an in-context completion network, split the skeleton into dynamic and
//! static regions with targeted augmentation, estimate joint accelerations
//! from learned rigid-body dynamics, and classify the result with a graph
//! convolutional network. Restoration quality is scored with MPJPE-family
//! metrics. All randomness is seeded and every stage is bit-reproducible.

pub mod complete;
pub mod config;
pub mod container;
pub mod corrupt;
pub mod decompose;
pub mod dynamics;
pub mod error;
pub mod gradcheck;
pub mod jsonl;
pub mod metrics;
pub mod nn;
pub mod recognize;
pub mod rng;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};
