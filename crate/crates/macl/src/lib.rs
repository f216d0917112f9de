//! Multi-label adaptive contrastive learning over feature vectors.
//!
//! The crate implements a family of supervised contrastive losses for
//! multi-label data, their analytic gradients with an attraction/repulsion
//! decomposition, a deterministic desk-scale trainer, and the cosine- and
//! Jaccard-relevance retrieval metrics used to evaluate the learned
//! embeddings. The `macl` binary wires these together behind a CLI.

pub mod data;
pub mod error;
pub mod grad;
pub mod labels;
pub mod loss;
pub mod metrics;
pub mod stats;
pub mod testutil;
pub mod train;

pub use error::MaclError;
pub use labels::{jaccard_overlap, LabelSet, LabelVocabulary};
pub use loss::{batch_loss, BatchView, LossHyperparams, LossVariant};
pub use stats::CorpusLabelStats;
