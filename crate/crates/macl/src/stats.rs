//! Corpus-level label statistics backing pair reweighting and temperature
//! scaling.
//!
//! Counts are built once over the training corpus and queried read-only
//! afterwards. Intersection-containment counts are memoized lazily under the
//! canonical bit pattern of the queried intersection; concurrent fills may
//! duplicate a scan but always store the same count.

use std::collections::HashMap;
use std::sync::RwLock;

use crate::error::MaclError;
use crate::labels::{LabelSet, MAX_LABELS};

/// How the co-occurrence frequency f is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CooccurrenceMode {
    /// Count corpus samples whose label set contains the queried intersection.
    #[default]
    SupersetOfIntersection,
    /// Count corpus samples whose label set equals the queried intersection.
    ExactMatch,
}

/// How the anchor rarity h aggregates per-label marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RarityAggregation {
    /// The rarest label dominates.
    #[default]
    Min,
    /// Mean of the per-label counts.
    Mean,
}

/// Cached per-label marginals plus a lazily filled intersection-containment
/// cache over one corpus of label sets.
#[derive(Debug)]
pub struct CorpusLabelStats {
    corpus: Vec<LabelSet>,
    sample_count: usize,
    per_label_count: Vec<usize>,
    containment_cache: RwLock<HashMap<u64, usize>>,
    cooccurrence: CooccurrenceMode,
    rarity: RarityAggregation,
}

impl CorpusLabelStats {
    pub fn build(labels: &[LabelSet]) -> Result<Self, MaclError> {
        Self::build_with_modes(labels, CooccurrenceMode::default(), RarityAggregation::default())
    }

    pub fn build_with_modes(
        labels: &[LabelSet],
        cooccurrence: CooccurrenceMode,
        rarity: RarityAggregation,
    ) -> Result<Self, MaclError> {
        if labels.is_empty() {
            return Err(MaclError::Statistics("empty statistics corpus".into()));
        }
        let mut per_label_count = vec![0usize; MAX_LABELS];
        for set in labels {
            for label in set.iter() {
                per_label_count[label] += 1;
            }
        }
        let stats = CorpusLabelStats {
            corpus: labels.to_vec(),
            sample_count: labels.len(),
            per_label_count,
            containment_cache: RwLock::new(HashMap::new()),
            cooccurrence,
            rarity,
        };
        // Seed the cache with all singletons present in the corpus.
        {
            let mut cache = stats.containment_cache.write().unwrap();
            for label in 0..MAX_LABELS {
                if stats.per_label_count[label] > 0 {
                    let key = LabelSet::from_indices([label]);
                    let count = stats.scan(key);
                    cache.insert(key.bits(), count);
                }
            }
        }
        Ok(stats)
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn per_label_count(&self, label: usize) -> usize {
        self.per_label_count.get(label).copied().unwrap_or(0)
    }

    fn scan(&self, key: LabelSet) -> usize {
        match self.cooccurrence {
            CooccurrenceMode::SupersetOfIntersection => self
                .corpus
                .iter()
                .filter(|set| key.is_subset_of(**set))
                .count(),
            CooccurrenceMode::ExactMatch => {
                self.corpus.iter().filter(|set| **set == key).count()
            }
        }
    }

    /// Co-occurrence frequency f: the number of corpus samples whose label
    /// set contains `a ∩ b` entirely. Memoized under the intersection key.
    pub fn intersection_frequency(&self, a: LabelSet, b: LabelSet) -> Result<usize, MaclError> {
        let key = a.intersection(b);
        if key.is_empty() {
            return Err(MaclError::Statistics(
                "undefined co-occurrence for disjoint pair".into(),
            ));
        }
        if let Some(&count) = self.containment_cache.read().unwrap().get(&key.bits()) {
            return Ok(count);
        }
        let count = self.scan(key);
        self.containment_cache
            .write()
            .unwrap()
            .insert(key.bits(), count);
        Ok(count)
    }

    /// Anchor rarity h: the minimum (default) or mean per-label marginal
    /// count over the labels of `a`.
    pub fn marginal_frequency(&self, a: LabelSet) -> Result<f64, MaclError> {
        if a.is_empty() {
            return Err(MaclError::Statistics(
                "rarity undefined for empty label set".into(),
            ));
        }
        let counts = a.iter().map(|label| self.per_label_count[label]);
        Ok(match self.rarity {
            RarityAggregation::Min => counts.min().unwrap() as f64,
            RarityAggregation::Mean => {
                let card = a.cardinality();
                counts.sum::<usize>() as f64 / card as f64
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(indices: &[usize]) -> LabelSet {
        LabelSet::from_indices(indices.iter().copied())
    }

    #[test]
    fn per_label_counts_are_exact() {
        let stats = CorpusLabelStats::build(&[set(&[1, 3]), set(&[1]), set(&[3])]).unwrap();
        assert_eq!(stats.sample_count(), 3);
        assert_eq!(stats.per_label_count(1), 2);
        assert_eq!(stats.per_label_count(3), 2);
        assert_eq!(stats.per_label_count(0), 0);
    }

    #[test]
    fn single_sample_corpus() {
        let stats = CorpusLabelStats::build(&[set(&[1])]).unwrap();
        assert_eq!(stats.sample_count(), 1);
        assert_eq!(stats.per_label_count(1), 1);
    }

    #[test]
    fn empty_corpus_rejected() {
        let err = CorpusLabelStats::build(&[]).unwrap_err();
        assert!(err.to_string().contains("empty statistics corpus"));
    }

    #[test]
    fn intersection_frequency_counts_supersets() {
        let stats =
            CorpusLabelStats::build(&[set(&[1, 3]), set(&[1, 3]), set(&[1])]).unwrap();
        assert_eq!(
            stats.intersection_frequency(set(&[1, 3]), set(&[1, 3])).unwrap(),
            2
        );
        // intersection {1}: every sample contains label 1
        assert_eq!(
            stats
                .intersection_frequency(set(&[1, 3, 5]), set(&[1, 2]))
                .unwrap(),
            3
        );
    }

    #[test]
    fn disjoint_pair_rejected() {
        let stats = CorpusLabelStats::build(&[set(&[1]), set(&[2])]).unwrap();
        let err = stats
            .intersection_frequency(set(&[1]), set(&[2]))
            .unwrap_err();
        assert!(err.to_string().contains("disjoint"));
    }

    #[test]
    fn marginal_frequency_min_convention() {
        let stats = CorpusLabelStats::build(&[
            set(&[1]),
            set(&[1, 3]),
            set(&[3]),
            set(&[3]),
            set(&[3]),
            set(&[3]),
            set(&[3]),
            set(&[3]),
        ])
        .unwrap();
        // per_label_count {1: 2, 3: 7}
        assert_eq!(stats.per_label_count(1), 2);
        assert_eq!(stats.per_label_count(3), 7);
        assert_eq!(stats.marginal_frequency(set(&[1, 3])).unwrap(), 2.0);
        // identity on singletons
        assert_eq!(stats.marginal_frequency(set(&[3])).unwrap(), 7.0);
    }

    #[test]
    fn marginal_frequency_mean_switch() {
        let stats = CorpusLabelStats::build_with_modes(
            &[set(&[1]), set(&[1, 3]), set(&[3]), set(&[3])],
            CooccurrenceMode::default(),
            RarityAggregation::Mean,
        )
        .unwrap();
        // counts {1: 2, 3: 3}
        assert_eq!(stats.marginal_frequency(set(&[1, 3])).unwrap(), 2.5);
    }

    #[test]
    fn empty_rarity_rejected() {
        let stats = CorpusLabelStats::build(&[set(&[0])]).unwrap();
        assert!(stats.marginal_frequency(LabelSet::EMPTY).is_err());
    }

    #[test]
    fn exact_match_mode() {
        let stats = CorpusLabelStats::build_with_modes(
            &[set(&[1, 3]), set(&[1, 3]), set(&[1])],
            CooccurrenceMode::ExactMatch,
            RarityAggregation::default(),
        )
        .unwrap();
        assert_eq!(
            stats.intersection_frequency(set(&[1, 3]), set(&[1, 3])).unwrap(),
            2
        );
        // intersection {1}: only one exact {1} sample
        assert_eq!(
            stats.intersection_frequency(set(&[1]), set(&[1, 3])).unwrap(),
            1
        );
    }

    fn random_corpus(seed: u64, n: usize, num_labels: usize) -> Vec<LabelSet> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| loop {
                let bits = rng.gen_range(0u64..(1 << num_labels));
                if bits != 0 {
                    break LabelSet::from_bits(bits);
                }
            })
            .collect()
    }

    #[test]
    fn intersection_frequency_matches_exhaustive_scan() {
        use rand::{Rng, SeedableRng};
        let corpus = random_corpus(11, 200, 6);
        let stats = CorpusLabelStats::build(&corpus).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let a = corpus[rng.gen_range(0..corpus.len())];
            let b = corpus[rng.gen_range(0..corpus.len())];
            let key = a.intersection(b);
            if key.is_empty() {
                continue;
            }
            let oracle = corpus.iter().filter(|s| key.is_subset_of(**s)).count();
            assert_eq!(stats.intersection_frequency(a, b).unwrap(), oracle);
        }
    }

    #[test]
    fn marginal_frequency_matches_brute_force_scan() {
        use rand::{Rng, SeedableRng};
        let corpus = random_corpus(23, 150, 6);
        let stats = CorpusLabelStats::build(&corpus).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = corpus[rng.gen_range(0..corpus.len())];
            let oracle = a
                .iter()
                .map(|label| corpus.iter().filter(|s| s.contains(label)).count())
                .min()
                .unwrap() as f64;
            assert_eq!(stats.marginal_frequency(a).unwrap(), oracle);
        }
    }

    #[test]
    fn warm_cache_equals_cold_cache() {
        use rand::{Rng, SeedableRng};
        let corpus = random_corpus(5, 120, 6);
        let warm = CorpusLabelStats::build(&corpus).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let queries: Vec<(LabelSet, LabelSet)> = (0..1000)
            .map(|_| {
                (
                    corpus[rng.gen_range(0..corpus.len())],
                    corpus[rng.gen_range(0..corpus.len())],
                )
            })
            .collect();
        // First pass fills the cache; second pass must agree with a cold copy.
        for &(a, b) in &queries {
            if !a.intersection(b).is_empty() {
                warm.intersection_frequency(a, b).unwrap();
            }
        }
        let cold = CorpusLabelStats::build(&corpus).unwrap();
        for &(a, b) in &queries {
            if !a.intersection(b).is_empty() {
                assert_eq!(
                    warm.intersection_frequency(a, b).unwrap(),
                    cold.intersection_frequency(a, b).unwrap()
                );
            }
        }
    }

    #[test]
    fn corpus_resident_pair_has_frequency_at_least_two() {
        let corpus = random_corpus(41, 80, 5);
        let stats = CorpusLabelStats::build(&corpus).unwrap();
        for (i, &a) in corpus.iter().enumerate() {
            for &b in &corpus[i + 1..] {
                if !a.intersection(b).is_empty() {
                    assert!(stats.intersection_frequency(a, b).unwrap() >= 2);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn frequency_symmetric_and_monotone(seed in 0u64..200, a in 1u64..64, b in 1u64..64) {
            let corpus = random_corpus(seed, 60, 6);
            let stats = CorpusLabelStats::build(&corpus).unwrap();
            let (sa, sb) = (LabelSet::from_bits(a), LabelSet::from_bits(b));
            if !sa.intersection(sb).is_empty() {
                let f_ab = stats.intersection_frequency(sa, sb).unwrap();
                let f_ba = stats.intersection_frequency(sb, sa).unwrap();
                prop_assert_eq!(f_ab, f_ba);
                prop_assert!(f_ab <= stats.sample_count());
                // shrinking the intersection can only grow the count
                let sub = sa.intersection(sb);
                for label in sub.iter() {
                    let single = LabelSet::from_indices([label]);
                    let f_single = stats.intersection_frequency(single, single).unwrap();
                    prop_assert!(f_single >= f_ab);
                }
            }
        }
    }
}
