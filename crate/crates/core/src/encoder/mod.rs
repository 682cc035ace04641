//! Bidirectional LSTM flow encoder, implemented directly on a flat `f64`
//! parameter vector with hand-written back-propagation.
//!
//! The same network serves two roles: with a softmax head it is the
//! cross-entropy classifier; with the embedding head (head removed, dense
//! GELU output used as a 64-dim vector) it is trained with supervised
//! contrastive loss and feeds the confidence model.

mod io;
mod loss;
mod model;
mod ops;
mod optim;
mod train;

pub use io::{
    embed_dataset, import_embeddings, predict_proba, read_embeddings, write_embeddings,
    EmbeddingRecord, SavedEncoder, TrainingRecord, EMBEDDING_DIM,
};
pub use loss::{l2_normalize, supervised_contrastive_loss};
pub use model::{EncoderConfig, EncoderModel, Head, InputScaling, Output};
pub use train::{batch_gradient, batch_loss, train, LossKind, TrainConfig, TrainReport};
