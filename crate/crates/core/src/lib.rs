//! Application-type classification of network flows in the presence of
//! generic background traffic.
//!
//! The crate covers the whole batch pipeline: capture parsing and flow
//! assembly ([`ingest`]), fixed-shape flow features and class balancing
//! ([`features`]), a small bidirectional LSTM encoder trained with either
//! cross-entropy or supervised contrastive loss ([`encoder`]), the
//! centroid-similarity + Gaussian mixture confidence model with
//! log-likelihood abstention ([`confidence`]), evaluation ([`metrics`]),
//! a deterministic synthetic corpus generator ([`synth`]) and the
//! experiment orchestrator ([`pipeline`]).

pub mod classes;
pub mod confidence;
pub mod encoder;
pub mod error;
pub mod features;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use classes::ClassSet;
pub use error::{Error, Result};
