//! Label sets as fixed-width bitmasks and the label vocabulary.
//!
//! All label algebra in the crate runs on [`LabelSet`], a wrapper over a
//! `u64` mask supporting up to 64 labels. Set operations are exact.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::MaclError;

pub const MAX_LABELS: usize = 64;

/// A multi-hot set of label indices in `0..64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(u64);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);

    pub fn from_bits(bits: u64) -> Self {
        LabelSet(bits)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        let mut bits = 0u64;
        for idx in indices {
            assert!(idx < MAX_LABELS, "label index {idx} out of range");
            bits |= 1 << idx;
        }
        LabelSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, label: usize) -> bool {
        label < MAX_LABELS && self.0 & (1 << label) != 0
    }

    pub fn insert(&mut self, label: usize) {
        assert!(label < MAX_LABELS, "label index {label} out of range");
        self.0 |= 1 << label;
    }

    pub fn cardinality(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersection(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 & other.0)
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn is_subset_of(self, other: LabelSet) -> bool {
        self.0 & other.0 == self.0
    }

    /// Iterate over member label indices in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..MAX_LABELS).filter(move |i| bits & (1 << i) != 0)
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, idx) in self.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{idx}")?;
        }
        write!(f, "}}")
    }
}

/// Ordered, unique label names; the index of a name is stable for a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    names: Vec<String>,
}

impl LabelVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self, MaclError> {
        if names.len() > MAX_LABELS {
            return Err(MaclError::Vocabulary(format!(
                "vocabulary holds {} labels, maximum is {MAX_LABELS}",
                names.len()
            )));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(MaclError::Vocabulary(format!("duplicate label name `{a}`")));
            }
        }
        Ok(LabelVocabulary { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Jaccard overlap |a ∩ b| / |a ∪ b|.
///
/// Errors when both sets are empty; the ratio is undefined there.
pub fn jaccard_overlap(a: LabelSet, b: LabelSet) -> Result<f64, MaclError> {
    let union = a.union(b).cardinality();
    if union == 0 {
        return Err(MaclError::Statistics(
            "Jaccard undefined for two empty sets".into(),
        ));
    }
    Ok(a.intersection(b).cardinality() as f64 / union as f64)
}
