//! Confidence model: cosine similarity to class centroids, a Gaussian
//! mixture over those similarity vectors, and log-likelihood percentile
//! abstention. Also the softmax-threshold baseline.

mod centroids;
mod decide;
mod gmm;
mod store;

pub use centroids::{compute_centroids, similarity_vector, CentroidSet};
pub use decide::{
    assign_cluster_labels, calibrate_threshold, classify_gmm, classify_gmm_batch,
    classify_softmax, percentile_threshold, ClusterComposition, Decision,
};
pub use gmm::{fit_gmm, FitInfo, GmmConfig, GmmModel, COLLAPSE_WEIGHT};
pub use store::{read_decisions, write_decisions, ConfidenceModel, DecisionRow, ABSTAIN};
