//! Seeded generators for randomized checks.
//!
//! Shared by the unit tests, the acceptance suite, and the `gradcheck`
//! command, which all need small random batches and corpora.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::labels::LabelSet;
use crate::loss::BatchView;
use crate::stats::CorpusLabelStats;

/// A random non-empty label set over `0..num_labels`.
pub fn random_label_set(rng: &mut ChaCha8Rng, num_labels: usize) -> LabelSet {
    loop {
        let bits = rng.gen_range(0u64..(1 << num_labels));
        if bits != 0 {
            return LabelSet::from_bits(bits);
        }
    }
}

/// A random unit vector of the given dimension.
pub fn random_unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// A random batch of unit embeddings with non-empty label sets.
pub fn random_batch(seed: u64, batch_size: usize, dim: usize, num_labels: usize) -> BatchView {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embeddings = (0..batch_size)
        .map(|_| random_unit_vector(&mut rng, dim))
        .collect();
    let labels = (0..batch_size)
        .map(|_| random_label_set(&mut rng, num_labels))
        .collect();
    BatchView::new(embeddings, labels).expect("generated batch is valid")
}

/// Random corpus statistics where every label in `0..num_labels` appears at
/// least once, so marginal counts stay >= 1 for any queried anchor.
pub fn random_stats(seed: u64, corpus_size: usize, num_labels: usize) -> CorpusLabelStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus: Vec<LabelSet> = (0..num_labels)
        .map(|label| LabelSet::from_indices([label]))
        .collect();
    while corpus.len() < corpus_size.max(num_labels) {
        corpus.push(random_label_set(&mut rng, num_labels));
    }
    CorpusLabelStats::build(&corpus).expect("non-empty corpus")
}
