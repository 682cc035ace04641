//! Deterministic synthetic corpora: labeled flows from parametric class
//! profiles, and labeled embeddings on the unit sphere.

mod embeddings;
mod flows;

pub use embeddings::{
    generate_embeddings, orthonormal_means, EmbeddingSpec, OUTLIER_MAX_COSINE, OUTLIER_SESSION,
};
pub use flows::{
    generate_flows, BackgroundProfile, ClassProfile, SizeDist, SynthConfig, SynthCorpus, SIZE_MAX,
    SIZE_MIN,
};
