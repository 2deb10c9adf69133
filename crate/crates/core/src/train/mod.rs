//! Unsupervised retrieval training: ranks, the rank-based loss, batching,
//! the optimization loop and checkpoints.

mod checkpoint;
mod loss;
mod rank;
mod trainer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_with, save_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use loss::{loss_from_ranks, retrieval_loss};
pub(crate) use rank::euclidean;
pub use rank::{hard_rank, soft_rank, spearman_similarity};
pub use trainer::{
    batch_gradients, build_retrieval_batch, dataset_segments, derive_seed, evaluate_mean_rank, BatchGradients,
    EpochReport, RetrievalBatch, Trainer,
};
