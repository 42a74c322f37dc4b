//! Full-range head pose estimation built on SO(3) pose labels.
//!
//! The crate covers the whole pipeline: rotation-matrix geometry
//! ([`so3`]), label-preserving geometric augmentation ([`augment`]), a
//! procedural head renderer that manufactures anchor-positive pairs
//! ([`synth`]), geodesic-threshold triplet mining with Circle Loss
//! ([`mining`]), a small trainable encoder and 6D pose head ([`nn`],
//! [`train`]), and evaluation/export utilities ([`eval`],
//! [`experiment`]).
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod augment;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod mining;
pub mod nn;
pub mod raster;
pub mod so3;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// A corpus and training setup small enough for unit tests.
#[cfg(test)]
pub(crate) fn encoder_test_config() -> (corpus::CorpusConfig, train::TrainConfig) {
    let corpus = corpus::CorpusConfig {
        anchors: 24,
        anchor_identities: 6,
        validation_identities: 2,
        positive_identities: 3,
        test_samples: 8,
        test_identities: 2,
        size: 16,
        ..Default::default()
    };
    let train = train::TrainConfig {
        batch_size: 8,
        epochs: 2,
        head_epochs: 2,
        encoder: nn::EncoderConfig {
            input_size: 16,
            pool: 2,
            hidden: vec![24, 24],
            embedding_dim: 8,
        },
        head: nn::HeadConfig { input_dim: 8, width: 16 },
        ..Default::default()
    };
    (corpus, train)
}
