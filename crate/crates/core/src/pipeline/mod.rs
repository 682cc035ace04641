//! End-to-end experiment runner with per-stage caching and a manifest of
//! every artifact it writes.

mod config;
mod manifest;
mod run;

pub use config::{
    CaptureEntry, ConfidenceSection, EncoderSection, FeatureSection, InputConfig, Labeling,
    PipelineConfig,
};
pub use manifest::{sha256_bytes, sha256_file, Manifest, StageRecord, MANIFEST_FILE};
pub use run::{run_pipeline, sweep_gmm, sweep_softmax, RunSummary};
