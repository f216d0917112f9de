//! Dataset ingestion, split generation, and synthetic multi-label data.
//!
//! Labels live in a CSV with header `id,<label_0>,...` and multi-hot 0/1
//! cells; features in a CSV with header `id,f0,...` and decimal floats.
//! Rows are joined by id; the label file fixes the sample order.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::MaclError;
use crate::labels::{LabelSet, LabelVocabulary, MAX_LABELS};
use crate::testutil::random_unit_vector;

/// An in-memory dataset: label sets and feature rows joined by id.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub vocabulary: LabelVocabulary,
    pub labels: Vec<LabelSet>,
    pub features: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn select(&self, indices: &[usize]) -> (Vec<Vec<f64>>, Vec<LabelSet>) {
        (
            indices.iter().map(|&i| self.features[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, MaclError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| MaclError::io(path.display().to_string(), e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Parse the labels CSV alone: ids, vocabulary, and label sets.
pub fn load_labels(path: &Path) -> Result<(Vec<String>, LabelVocabulary, Vec<LabelSet>), MaclError> {
    let lines = read_lines(path)?;
    if lines.is_empty() {
        return Err(MaclError::Parse {
            row: 0,
            column: 0,
            message: "labels file is empty".into(),
        });
    }
    let header: Vec<&str> = lines[0].split(',').collect();
    if header.len() < 2 || header[0] != "id" {
        return Err(MaclError::Parse {
            row: 0,
            column: 0,
            message: "labels header must be `id,<label names...>`".into(),
        });
    }
    let vocabulary = LabelVocabulary::new(header[1..].iter().map(|s| s.to_string()).collect())?;
    let num_labels = vocabulary.len();
    let mut ids = Vec::new();
    let mut seen = HashMap::new();
    let mut labels = Vec::new();
    for (row, line) in lines[1..].iter().enumerate() {
        let row = row + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != num_labels + 1 {
            return Err(MaclError::Parse {
                row,
                column: cells.len(),
                message: format!("expected {} cells, found {}", num_labels + 1, cells.len()),
            });
        }
        let id = cells[0].to_string();
        if seen.insert(id.clone(), row).is_some() {
            return Err(MaclError::Parse {
                row,
                column: 0,
                message: format!("duplicate id `{id}`"),
            });
        }
        let mut set = LabelSet::EMPTY;
        for (col, cell) in cells[1..].iter().enumerate() {
            match cell.trim() {
                "0" => {}
                "1" => set.insert(col),
                other => {
                    return Err(MaclError::Parse {
                        row,
                        column: col + 1,
                        message: format!("label cell must be 0 or 1, found `{other}`"),
                    })
                }
            }
        }
        if set.is_empty() {
            return Err(MaclError::Parse {
                row,
                column: 1,
                message: format!("empty label set at row {row}"),
            });
        }
        ids.push(id);
        labels.push(set);
    }
    if ids.is_empty() {
        return Err(MaclError::Parse {
            row: 1,
            column: 0,
            message: "labels file holds no data rows".into(),
        });
    }
    Ok((ids, vocabulary, labels))
}

fn load_features(path: &Path) -> Result<HashMap<String, Vec<f64>>, MaclError> {
    let lines = read_lines(path)?;
    if lines.is_empty() {
        return Err(MaclError::Parse {
            row: 0,
            column: 0,
            message: "features file is empty".into(),
        });
    }
    let header: Vec<&str> = lines[0].split(',').collect();
    if header.len() < 2 || header[0] != "id" {
        return Err(MaclError::Parse {
            row: 0,
            column: 0,
            message: "features header must be `id,f0,...`".into(),
        });
    }
    let dim = header.len() - 1;
    let mut rows = HashMap::new();
    for (row, line) in lines[1..].iter().enumerate() {
        let row = row + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dim + 1 {
            return Err(MaclError::Parse {
                row,
                column: cells.len(),
                message: format!("expected {} cells, found {}", dim + 1, cells.len()),
            });
        }
        let mut values = Vec::with_capacity(dim);
        for (col, cell) in cells[1..].iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| MaclError::Parse {
                row,
                column: col + 1,
                message: format!("not a decimal float: `{cell}`"),
            })?;
            values.push(v);
        }
        if rows.insert(cells[0].to_string(), values).is_some() {
            return Err(MaclError::Parse {
                row,
                column: 0,
                message: format!("duplicate id `{}`", cells[0]),
            });
        }
    }
    Ok(rows)
}

/// Load and join a labels/features CSV pair. Sample order follows the
/// label file.
pub fn load_dataset(labels_path: &Path, features_path: &Path) -> Result<Dataset, MaclError> {
    let (ids, vocabulary, labels) = load_labels(labels_path)?;
    let mut feature_rows = load_features(features_path)?;
    let mut features = Vec::with_capacity(ids.len());
    for (row, id) in ids.iter().enumerate() {
        let values = feature_rows.remove(id).ok_or_else(|| MaclError::Parse {
            row: row + 1,
            column: 0,
            message: format!("id `{id}` has no feature row"),
        })?;
        features.push(values);
    }
    Ok(Dataset {
        ids,
        vocabulary,
        labels,
        features,
    })
}

/// Write a dataset back to a labels/features CSV pair.
pub fn save_dataset(
    dataset: &Dataset,
    labels_path: &Path,
    features_path: &Path,
) -> Result<(), MaclError> {
    let mut labels_csv = String::from("id");
    for name in dataset.vocabulary.names() {
        labels_csv.push(',');
        labels_csv.push_str(name);
    }
    labels_csv.push('\n');
    for (id, set) in dataset.ids.iter().zip(&dataset.labels) {
        labels_csv.push_str(id);
        for col in 0..dataset.vocabulary.len() {
            labels_csv.push(',');
            labels_csv.push(if set.contains(col) { '1' } else { '0' });
        }
        labels_csv.push('\n');
    }
    std::fs::write(labels_path, labels_csv)
        .map_err(|e| MaclError::io(labels_path.display().to_string(), e))?;

    let dim = dataset.feature_dim();
    let mut features_csv = String::from("id");
    for i in 0..dim {
        features_csv.push_str(&format!(",f{i}"));
    }
    features_csv.push('\n');
    for (id, row) in dataset.ids.iter().zip(&dataset.features) {
        features_csv.push_str(id);
        for v in row {
            features_csv.push_str(&format!(",{v}"));
        }
        features_csv.push('\n');
    }
    std::fs::write(features_path, features_csv)
        .map_err(|e| MaclError::io(features_path.display().to_string(), e))
}

/// Disjoint train/val/test index sequences covering one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

/// Seeded uniform shuffle then contiguous cut. Counts are floor-based with
/// the remainder assigned to train.
pub fn make_splits(n: usize, ratios: [f64; 3], seed: u64) -> Result<SplitSpec, MaclError> {
    if n < 3 {
        return Err(MaclError::Config("dataset must hold at least 3 samples".into()));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(MaclError::Config(format!("split ratios sum to {sum}, expected 1")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5917_0000_0000_0001u64);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let n_val = (ratios[1] * n as f64).floor() as usize;
    let n_test = (ratios[2] * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;
    let train = order[..n_train].to_vec();
    let val = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..].to_vec();
    Ok(SplitSpec {
        train,
        val,
        test,
        seed,
        ratios,
    })
}

pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.70, 0.10, 0.20];

/// Marginal label-probability profile of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum MarginalProfile {
    /// p_j = base * rate^j, clamped to (0, 1); a long tail for rate < 1.
    Geometric { base: f64, rate: f64 },
    Explicit { probs: Vec<f64> },
}

impl MarginalProfile {
    fn probabilities(&self, num_labels: usize) -> Result<Vec<f64>, MaclError> {
        let probs = match self {
            MarginalProfile::Geometric { base, rate } => (0..num_labels)
                .map(|j| (base * rate.powi(j as i32)).clamp(1e-4, 1.0 - 1e-4))
                .collect::<Vec<f64>>(),
            MarginalProfile::Explicit { probs } => {
                if probs.len() != num_labels {
                    return Err(MaclError::Config(format!(
                        "profile has {} entries for {num_labels} labels",
                        probs.len()
                    )));
                }
                probs.clone()
            }
        };
        for &p in &probs {
            if !(0.0..1.0).contains(&p) || p == 0.0 {
                return Err(MaclError::Config(format!(
                    "marginal probability {p} outside (0, 1)"
                )));
            }
        }
        Ok(probs)
    }
}

/// Generator parameters for a synthetic multi-label dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_labels: usize,
    pub num_samples: usize,
    pub feature_dim: usize,
    pub profile: MarginalProfile,
    /// Symmetric pairwise coupling added to a label's draw probability per
    /// already-active coupled label. Empty means independent draws.
    #[serde(default)]
    pub coupling: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), MaclError> {
        if self.num_labels == 0 || self.num_labels > MAX_LABELS {
            return Err(MaclError::Config(format!(
                "num_labels must be in 1..={MAX_LABELS}"
            )));
        }
        if self.num_samples == 0 || self.feature_dim == 0 {
            return Err(MaclError::Config("num_samples and feature_dim must be >= 1".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(MaclError::Config("noise_sigma must be >= 0".into()));
        }
        if !self.coupling.is_empty() {
            if self.coupling.len() != self.num_labels
                || self.coupling.iter().any(|r| r.len() != self.num_labels)
            {
                return Err(MaclError::Config("coupling matrix must be L x L".into()));
            }
            for i in 0..self.num_labels {
                for j in 0..self.num_labels {
                    if (self.coupling[i][j] - self.coupling[j][i]).abs() > 1e-12 {
                        return Err(MaclError::Config("coupling matrix must be symmetric".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Draw a synthetic dataset: label sets from the marginal profile with
/// pairwise coupling, features as the sum of per-label prototype vectors
/// plus Gaussian noise. Deterministic for a fixed seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, MaclError> {
    spec.validate()?;
    let probs = spec.profile.probabilities(spec.num_labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5E5E_0000_0000_0002u64);
    let prototypes: Vec<Vec<f64>> = (0..spec.num_labels)
        .map(|_| random_unit_vector(&mut rng, spec.feature_dim))
        .collect();

    let mut labels = Vec::with_capacity(spec.num_samples);
    let mut features = Vec::with_capacity(spec.num_samples);
    let mut rejections = 0usize;
    let max_rejections = 100 * spec.num_samples.max(100);
    while labels.len() < spec.num_samples {
        let mut set = LabelSet::EMPTY;
        for j in 0..spec.num_labels {
            let mut p = probs[j];
            if !spec.coupling.is_empty() {
                for k in set.iter() {
                    p += spec.coupling[j][k];
                }
            }
            let p = p.clamp(1e-4, 1.0 - 1e-4);
            if rng.gen_bool(p) {
                set.insert(j);
            }
        }
        if set.is_empty() {
            rejections += 1;
            if rejections > max_rejections {
                return Err(MaclError::Config("infeasible label profile".into()));
            }
            continue;
        }
        let mut x = vec![0.0; spec.feature_dim];
        for l in set.iter() {
            for (xi, pi) in x.iter_mut().zip(&prototypes[l]) {
                *xi += pi;
            }
        }
        for xi in &mut x {
            let n: f64 = StandardNormal.sample(&mut rng);
            *xi += spec.noise_sigma * n;
        }
        labels.push(set);
        features.push(x);
    }

    let vocabulary = LabelVocabulary::new(
        (0..spec.num_labels).map(|j| format!("label_{j}")).collect(),
    )?;
    let ids = (0..spec.num_samples).map(|i| format!("s{i:05}")).collect();
    Ok(Dataset {
        ids,
        vocabulary,
        labels,
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn well_formed_pair_loads() {
        let dir = tempdir().unwrap();
        let lp = dir.path().join("labels.csv");
        let fp = dir.path().join("features.csv");
        std::fs::write(&lp, "id,road,water\na,1,0\nb,0,1\nc,1,1\n").unwrap();
        std::fs::write(&fp, "id,f0,f1\na,0.5,0.5\nb,1.0,0.0\nc,0.0,1.0\n").unwrap();
        let ds = load_dataset(&lp, &fp).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.vocabulary.names(), ["road", "water"]);
        assert_eq!(ds.labels[2], LabelSet::from_indices([0, 1]));
        assert_eq!(ds.features[1], vec![1.0, 0.0]);
    }

    #[test]
    fn empty_label_row_rejected_with_row_number() {
        let dir = tempdir().unwrap();
        let lp = dir.path().join("labels.csv");
        std::fs::write(&lp, "id,a,b\nx,1,0\ny,0,0\n").unwrap();
        let err = load_labels(&lp).unwrap_err();
        assert!(err.to_string().contains("empty label set at row 2"), "{err}");
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let dir = tempdir().unwrap();
        let lp = dir.path().join("labels.csv");
        std::fs::write(&lp, "id,a,b\nx,1,2\n").unwrap();
        let err = load_labels(&lp).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1") && msg.contains("column 2"), "{msg}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let dir = tempdir().unwrap();
        let lp = dir.path().join("labels.csv");
        std::fs::write(&lp, "id,a\nx,1\nx,1\n").unwrap();
        assert!(load_labels(&lp).unwrap_err().to_string().contains("duplicate id"));
    }

    #[test]
    fn missing_join_partner_rejected() {
        let dir = tempdir().unwrap();
        let lp = dir.path().join("labels.csv");
        let fp = dir.path().join("features.csv");
        std::fs::write(&lp, "id,a\nx,1\ny,1\n").unwrap();
        std::fs::write(&fp, "id,f0\nx,0.1\n").unwrap();
        let err = load_dataset(&lp, &fp).unwrap_err();
        assert!(err.to_string().contains("no feature row"));
    }

    #[test]
    fn splits_match_floor_arithmetic() {
        let s = make_splits(2100, DEFAULT_SPLIT_RATIOS, 1).unwrap();
        assert_eq!(s.train.len(), 1470);
        assert_eq!(s.val.len(), 210);
        assert_eq!(s.test.len(), 420);

        let s = make_splits(10, DEFAULT_SPLIT_RATIOS, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
    }

    #[test]
    fn splits_are_deterministic_disjoint_and_covering() {
        for seed in 0..20 {
            let n = 37 + seed as usize * 13;
            let a = make_splits(n, DEFAULT_SPLIT_RATIOS, seed).unwrap();
            let b = make_splits(n, DEFAULT_SPLIT_RATIOS, seed).unwrap();
            assert_eq!(a, b);
            let mut all: Vec<usize> = a
                .train
                .iter()
                .chain(&a.val)
                .chain(&a.test)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(make_splits(10, [0.5, 0.2, 0.2], 1).is_err());
        assert!(make_splits(2, DEFAULT_SPLIT_RATIOS, 1).is_err());
    }

    fn toy_spec() -> SyntheticSpec {
        SyntheticSpec {
            num_labels: 6,
            num_samples: 400,
            feature_dim: 8,
            profile: MarginalProfile::Geometric {
                base: 0.9,
                rate: 0.5,
            },
            coupling: Vec::new(),
            noise_sigma: 0.05,
            seed: 7,
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(&toy_spec()).unwrap();
        let b = generate_synthetic(&toy_spec()).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn uncoupled_flat_profile_matches_marginals() {
        let spec = SyntheticSpec {
            num_labels: 2,
            num_samples: 8000,
            feature_dim: 4,
            profile: MarginalProfile::Explicit {
                probs: vec![0.5, 0.5],
            },
            coupling: Vec::new(),
            noise_sigma: 0.0,
            seed: 3,
        };
        let ds = generate_synthetic(&spec).unwrap();
        // conditioned on non-empty rejection: P(label | non-empty) = 0.5/0.75
        let expected = 0.5 / 0.75;
        for j in 0..2 {
            let freq = ds.labels.iter().filter(|s| s.contains(j)).count() as f64
                / ds.len() as f64;
            assert!((freq - expected).abs() < 0.05, "label {j}: {freq}");
        }
    }

    #[test]
    fn zero_noise_single_label_samples_share_features() {
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            ..toy_spec()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let singles: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.labels[i].cardinality() == 1)
            .collect();
        for &i in &singles {
            for &j in &singles {
                if ds.labels[i] == ds.labels[j] {
                    assert_eq!(ds.features[i], ds.features[j]);
                }
            }
        }
    }

    #[test]
    fn geometric_profile_yields_long_tail() {
        let spec = SyntheticSpec {
            num_samples: 3000,
            ..toy_spec()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let counts: Vec<usize> = (0..6)
            .map(|j| ds.labels.iter().filter(|s| s.contains(j)).count())
            .collect();
        for w in counts.windows(2) {
            assert!(w[0] > w[1], "marginals not strictly decreasing: {counts:?}");
        }
    }

    #[test]
    fn infeasible_profile_rejected() {
        let spec = SyntheticSpec {
            num_labels: 1,
            num_samples: 50,
            feature_dim: 2,
            profile: MarginalProfile::Explicit { probs: vec![1e-4] },
            coupling: Vec::new(),
            noise_sigma: 0.0,
            seed: 1,
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn synthetic_round_trips_through_csv() {
        let dir = tempdir().unwrap();
        let spec = SyntheticSpec {
            num_samples: 50,
            ..toy_spec()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let lp = dir.path().join("labels.csv");
        let fp = dir.path().join("features.csv");
        save_dataset(&ds, &lp, &fp).unwrap();
        let loaded = load_dataset(&lp, &fp).unwrap();
        assert_eq!(loaded.labels, ds.labels);
        assert_eq!(loaded.ids, ds.ids);
        // shortest-roundtrip float formatting preserves the exact values
        assert_eq!(loaded.features, ds.features);
    }
}
