//! Multi-granularity representation learning for time series.
//!
//! A segment is encoded twice: per timestamp by a small transformer and per
//! symbol by embedded SAX tokens. The fine embeddings are fused into one
//! vector by max-pooled-query attention, which then attends over the coarse
//! tokens in a cross-granularity block. Training needs no labels: each
//! segment's average-pooled fine embedding must retrieve its own fused vector
//! among in-batch distractors, scored by a relaxed rank.

pub mod config;
pub mod encoders;
mod error;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod train;

pub use config::{EncoderSpec, FusionConfig, MugConfig, TrainConfig};
pub use error::MugError;
pub use model::{Granularity, MugModel};

pub type Result<T, E = MugError> = std::result::Result<T, E>;

#[cfg(test)]
pub(crate) mod testutil {
    use crate::config::{EncoderSpec, MugConfig};
    use crate::encoders::{FineEncoderConfig, SaxConfig};

    pub(crate) fn tiny_config(segments: usize) -> MugConfig {
        MugConfig {
            segments,
            fine: EncoderSpec::new(
                "transformer",
                FineEncoderConfig {
                    model_dim: 8,
                    heads: 2,
                    layers: 1,
                    ff_dim: 8,
                    dropout: 0.0,
                    ..FineEncoderConfig::default()
                },
            ),
            coarse: EncoderSpec::new(
                "sax",
                SaxConfig {
                    alphabet: 4,
                    word_length: 3,
                    embed_dim: 6,
                },
            ),
            ..MugConfig::default()
        }
    }
}
