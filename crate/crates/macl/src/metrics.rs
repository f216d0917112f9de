//! Retrieval metrics over ranked galleries.
//!
//! Two families: cosine-similarity ranking metrics with shared-label
//! relevance, and Jaccard-relevance metrics with thresholded or graded
//! label overlap. All metrics are reported as percentages in [0, 100].
//!
//! The two graded metrics deliberately use different discount bases: the
//! cosine-side gain is discounted by ln(1 + rank) and the Jaccard-side gain
//! by log2(rank + 1). `DiscountBase` can unify them.

use serde::{Deserialize, Serialize};

use crate::error::MaclError;
use crate::labels::{jaccard_overlap, LabelSet};
use crate::loss::dot;

pub const JACCARD_THRESHOLD_EASY: f64 = 0.40;
pub const JACCARD_THRESHOLD_MEDIUM: f64 = 0.60;
pub const JACCARD_THRESHOLD_HARD: f64 = 0.80;

pub const DEFAULT_K_MAP: usize = 5000;
pub const DEFAULT_K_NDCG: usize = 100;

/// Logarithm base used in a DCG discount.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscountBase {
    Natural,
    Base2,
}

impl DiscountBase {
    fn discount(self, rank: usize) -> f64 {
        let x = (rank + 1) as f64;
        match self {
            DiscountBase::Natural => x.ln(),
            DiscountBase::Base2 => x.log2(),
        }
    }
}

/// Gallery indices for one query, sorted by descending cosine similarity
/// with ties broken by ascending index.
#[derive(Debug, Clone)]
pub struct RankedList {
    /// Index of the query within the shared label space, when the query is
    /// itself a gallery member (leave-one-out).
    pub query: Option<usize>,
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Rank every gallery row against the query embedding.
pub fn rank_gallery(
    query_embedding: &[f64],
    gallery: &[Vec<f64>],
) -> Result<RankedList, MaclError> {
    rank_excluding(None, query_embedding, gallery)
}

/// Leave-one-out ranking: gallery row `query` is excluded from its own list.
pub fn rank_leave_one_out(
    query: usize,
    embeddings: &[Vec<f64>],
) -> Result<RankedList, MaclError> {
    rank_excluding(Some(query), &embeddings[query].clone(), embeddings)
}

fn rank_excluding(
    exclude: Option<usize>,
    query_embedding: &[f64],
    gallery: &[Vec<f64>],
) -> Result<RankedList, MaclError> {
    let candidates: Vec<usize> = (0..gallery.len())
        .filter(|&i| Some(i) != exclude)
        .collect();
    if candidates.is_empty() {
        return Err(MaclError::Metric("empty gallery".into()));
    }
    let mut scored: Vec<(usize, f64)> = candidates
        .into_iter()
        .map(|i| (i, dot(query_embedding, &gallery[i])))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    Ok(RankedList {
        query: exclude,
        order: scored.iter().map(|(i, _)| *i).collect(),
        scores: scored.iter().map(|(_, s)| *s).collect(),
    })
}

/// Average precision over the top-k of one ranking, under an arbitrary
/// relevance indicator. Queries with no relevant item in the window score 0.
fn average_precision<F: Fn(usize) -> bool>(order: &[usize], k: usize, relevant: F) -> f64 {
    let k = k.min(order.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &idx) in order[..k].iter().enumerate() {
        if relevant(idx) {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

fn dcg_ratio(ranked_gains: &[f64], all_gains: &[f64], k: usize, base: DiscountBase) -> f64 {
    let k = k.min(ranked_gains.len());
    let dcg: f64 = ranked_gains[..k]
        .iter()
        .enumerate()
        .map(|(i, g)| ((2f64).powf(*g) - 1.0) / base.discount(i + 1))
        .sum();
    let mut ideal = all_gains.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let idcg: f64 = ideal[..k.min(ideal.len())]
        .iter()
        .enumerate()
        .map(|(i, g)| ((2f64).powf(*g) - 1.0) / base.discount(i + 1))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

fn mean_percent(values: impl Iterator<Item = f64>, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        100.0 * values.sum::<f64>() / count as f64
    }
}

/// mAP@k under the shared-label indicator.
pub fn map_sim_at_k(
    rankings: &[RankedList],
    query_labels: &[LabelSet],
    gallery_labels: &[LabelSet],
    k: usize,
) -> f64 {
    let aps = rankings.iter().zip(query_labels).map(|(r, &y_q)| {
        average_precision(&r.order, k, |i| {
            !y_q.intersection(gallery_labels[i]).is_empty()
        })
    });
    mean_percent(aps, rankings.len())
}

/// nDCG@k with gain |y_q ∩ y_i| and natural-log discount.
pub fn ndcg_sim_at_k(
    rankings: &[RankedList],
    query_labels: &[LabelSet],
    gallery_labels: &[LabelSet],
    k: usize,
) -> f64 {
    ndcg_sim_at_k_base(rankings, query_labels, gallery_labels, k, DiscountBase::Natural)
}

pub fn ndcg_sim_at_k_base(
    rankings: &[RankedList],
    query_labels: &[LabelSet],
    gallery_labels: &[LabelSet],
    k: usize,
    base: DiscountBase,
) -> f64 {
    let scores = rankings.iter().zip(query_labels).map(|(r, &y_q)| {
        let ranked: Vec<f64> = r
            .order
            .iter()
            .map(|&i| y_q.intersection(gallery_labels[i]).cardinality() as f64)
            .collect();
        dcg_ratio(&ranked, &ranked, k, base)
    });
    mean_percent(scores, rankings.len())
}

/// mAP@k under the thresholded-Jaccard indicator.
pub fn jaccard_map_at_threshold(
    rankings: &[RankedList],
    query_labels: &[LabelSet],
    gallery_labels: &[LabelSet],
    threshold: f64,
    k: usize,
) -> f64 {
    let aps = rankings.iter().zip(query_labels).map(|(r, &y_q)| {
        average_precision(&r.order, k, |i| {
            jaccard_overlap(y_q, gallery_labels[i]).unwrap_or(0.0) >= threshold
        })
    });
    mean_percent(aps, rankings.len())
}

/// nDCG@k with Jaccard gains and base-2 discount.
pub fn ndcg_jaccard_at_k(
    rankings: &[RankedList],
    query_labels: &[LabelSet],
    gallery_labels: &[LabelSet],
    k: usize,
) -> f64 {
    ndcg_jaccard_at_k_base(rankings, query_labels, gallery_labels, k, DiscountBase::Base2)
}

pub fn ndcg_jaccard_at_k_base(
    rankings: &[RankedList],
    query_labels: &[LabelSet],
    gallery_labels: &[LabelSet],
    k: usize,
    base: DiscountBase,
) -> f64 {
    let scores = rankings.iter().zip(query_labels).map(|(r, &y_q)| {
        let ranked: Vec<f64> = r
            .order
            .iter()
            .map(|&i| jaccard_overlap(y_q, gallery_labels[i]).unwrap_or(0.0))
            .collect();
        dcg_ratio(&ranked, &ranked, k, base)
    });
    mean_percent(scores, rankings.len())
}

/// wAP@k: average precision where each relevant rank contributes the running
/// mean of Jaccard similarity up to that rank.
pub fn wap_at_k(
    rankings: &[RankedList],
    query_labels: &[LabelSet],
    gallery_labels: &[LabelSet],
    k: usize,
) -> f64 {
    let scores = rankings.iter().zip(query_labels).map(|(r, &y_q)| {
        let k = k.min(r.order.len());
        let mut hits = 0usize;
        let mut jaccard_sum = 0.0;
        let mut acc = 0.0;
        for (rank0, &idx) in r.order[..k].iter().enumerate() {
            jaccard_sum += jaccard_overlap(y_q, gallery_labels[idx]).unwrap_or(0.0);
            if !y_q.intersection(gallery_labels[idx]).is_empty() {
                hits += 1;
                acc += jaccard_sum / (rank0 + 1) as f64;
            }
        }
        if hits == 0 {
            0.0
        } else {
            acc / hits as f64
        }
    });
    mean_percent(scores, rankings.len())
}

/// All seven retrieval metrics for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub map_sim_at_k: f64,
    pub ndcg_sim_at_k: f64,
    pub map_easy: f64,
    pub map_medium: f64,
    pub map_hard: f64,
    pub ndcg_jaccard_at_k: f64,
    pub wap_at_k: f64,
    pub k_map: usize,
    pub k_ndcg: usize,
    pub num_queries: usize,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MaclError> {
        serde_json::from_str(text)
            .map_err(|e| MaclError::Metric(format!("report parse failed: {e}")))
    }
}

/// Leave-one-out evaluation over one embedded test set: each row queries the
/// gallery of all remaining rows. `k` values are clipped to the gallery size.
pub fn evaluate_all(
    embeddings: &[Vec<f64>],
    labels: &[LabelSet],
    k_map: usize,
    k_ndcg: usize,
) -> Result<MetricReport, MaclError> {
    if embeddings.len() != labels.len() {
        return Err(MaclError::Metric(format!(
            "{} embeddings but {} label sets",
            embeddings.len(),
            labels.len()
        )));
    }
    if embeddings.len() < 2 {
        return Err(MaclError::Metric("need at least 2 samples for leave-one-out".into()));
    }
    let gallery_size = embeddings.len() - 1;
    let k_map = k_map.max(1).min(gallery_size);
    let k_ndcg = k_ndcg.max(1).min(gallery_size);
    let rankings: Vec<RankedList> = (0..embeddings.len())
        .map(|q| rank_leave_one_out(q, embeddings))
        .collect::<Result<_, _>>()?;
    Ok(MetricReport {
        map_sim_at_k: map_sim_at_k(&rankings, labels, labels, k_map),
        ndcg_sim_at_k: ndcg_sim_at_k(&rankings, labels, labels, k_ndcg),
        map_easy: jaccard_map_at_threshold(&rankings, labels, labels, JACCARD_THRESHOLD_EASY, k_map),
        map_medium: jaccard_map_at_threshold(
            &rankings,
            labels,
            labels,
            JACCARD_THRESHOLD_MEDIUM,
            k_map,
        ),
        map_hard: jaccard_map_at_threshold(&rankings, labels, labels, JACCARD_THRESHOLD_HARD, k_map),
        ndcg_jaccard_at_k: ndcg_jaccard_at_k(&rankings, labels, labels, k_ndcg),
        wap_at_k: wap_at_k(&rankings, labels, labels, k_ndcg),
        k_map,
        k_ndcg,
        num_queries: embeddings.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_unit_vector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(indices: &[usize]) -> LabelSet {
        LabelSet::from_indices(indices.iter().copied())
    }

    #[test]
    fn copy_of_query_ranks_first() {
        let q = vec![0.6, 0.8];
        let gallery = vec![vec![0.0, 1.0], q.clone(), vec![1.0, 0.0]];
        let ranked = rank_gallery(&q, &gallery).unwrap();
        assert_eq!(ranked.order[0], 1);
        assert!((ranked.scores[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_gallery_ties_break_by_index() {
        let q = vec![1.0, 0.0, 0.0];
        let gallery = vec![
            vec![0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, -1.0, 0.0],
        ];
        let ranked = rank_gallery(&q, &gallery).unwrap();
        assert_eq!(ranked.order, vec![0, 1, 2]);
        assert!(ranked.scores.iter().all(|s| s.abs() < 1e-12));
    }

    #[test]
    fn empty_gallery_rejected() {
        assert!(rank_gallery(&[1.0], &[]).is_err());
    }

    #[test]
    fn rank_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_unit_vector(&mut rng, 5);
        let gallery: Vec<Vec<f64>> =
            (0..50).map(|_| random_unit_vector(&mut rng, 5)).collect();
        let ranked = rank_gallery(&q, &gallery).unwrap();
        let mut oracle: Vec<usize> = (0..50).collect();
        oracle.sort_by(|&a, &b| {
            dot(&q, &gallery[b])
                .partial_cmp(&dot(&q, &gallery[a]))
                .unwrap()
                .then(a.cmp(&b))
        });
        assert_eq!(ranked.order, oracle);
    }

    fn trivial_ranking(order: Vec<usize>) -> RankedList {
        let scores = (0..order.len()).map(|i| 1.0 - i as f64 * 0.01).collect();
        RankedList {
            query: None,
            order,
            scores,
        }
    }

    #[test]
    fn map_all_relevant_is_hundred() {
        let rankings = vec![trivial_ranking(vec![0, 1, 2])];
        let labels = vec![set(&[1]), set(&[1]), set(&[1])];
        assert_eq!(map_sim_at_k(&rankings, &[set(&[1])], &labels, 3), 100.0);
    }

    #[test]
    fn map_hand_computed_example() {
        // [rel, irrel, rel] at k = 3: AP = (1/2)(1/1 + 2/3)
        let rankings = vec![trivial_ranking(vec![0, 1, 2])];
        let labels = vec![set(&[1]), set(&[2]), set(&[1])];
        let expected = 100.0 * 0.5 * (1.0 + 2.0 / 3.0);
        let got = map_sim_at_k(&rankings, &[set(&[1])], &labels, 3);
        assert!((got - expected).abs() < 1e-9, "{got}");
    }

    #[test]
    fn ndcg_ideal_order_is_hundred() {
        let rankings = vec![trivial_ranking(vec![0, 1, 2])];
        // gains 2, 1, 0 already descending
        let labels = vec![set(&[1, 2]), set(&[1]), set(&[3])];
        assert!(
            (ndcg_sim_at_k(&rankings, &[set(&[1, 2])], &labels, 3) - 100.0).abs() < 1e-9
        );
        assert!(
            (ndcg_jaccard_at_k(&rankings, &[set(&[1, 2])], &labels, 3) - 100.0).abs() < 1e-9
        );
    }

    #[test]
    fn zero_gain_queries_report_zero() {
        let rankings = vec![trivial_ranking(vec![0, 1])];
        let labels = vec![set(&[3]), set(&[4])];
        assert_eq!(ndcg_sim_at_k(&rankings, &[set(&[1])], &labels, 2), 0.0);
        assert_eq!(ndcg_jaccard_at_k(&rankings, &[set(&[1])], &labels, 2), 0.0);
        assert_eq!(wap_at_k(&rankings, &[set(&[1])], &labels, 2), 0.0);
    }

    #[test]
    fn jaccard_threshold_indicator() {
        let rankings = vec![trivial_ranking(vec![0])];
        // identical label sets: J = 1 >= 0.40
        assert_eq!(
            jaccard_map_at_threshold(&rankings, &[set(&[1, 2])], &[set(&[1, 2])], 0.40, 1),
            100.0
        );
        // J = 0.5 < 0.80
        assert_eq!(
            jaccard_map_at_threshold(&rankings, &[set(&[1, 2])], &[set(&[1])], 0.80, 1),
            0.0
        );
    }

    #[test]
    fn wap_saturated_case() {
        let rankings = vec![trivial_ranking(vec![0, 1])];
        let labels = vec![set(&[1, 2]), set(&[1, 2])];
        assert!((wap_at_k(&rankings, &[set(&[1, 2])], &labels, 2) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn evaluate_all_identical_pair_saturates() {
        let embeddings = vec![vec![0.6, 0.8], vec![0.6, 0.8]];
        let labels = vec![set(&[1, 2]), set(&[1, 2])];
        let report = evaluate_all(&embeddings, &labels, 5000, 100).unwrap();
        assert_eq!(report.map_sim_at_k, 100.0);
        assert_eq!(report.map_easy, 100.0);
        assert_eq!(report.map_medium, 100.0);
        assert_eq!(report.map_hard, 100.0);
        assert_eq!(report.num_queries, 2);
    }

    #[test]
    fn evaluate_all_disjoint_labels_zero() {
        let embeddings = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let labels = vec![set(&[1]), set(&[2]), set(&[3])];
        let report = evaluate_all(&embeddings, &labels, 5000, 100).unwrap();
        assert_eq!(report.map_sim_at_k, 0.0);
        assert_eq!(report.ndcg_sim_at_k, 0.0);
        assert_eq!(report.map_easy, 0.0);
        assert_eq!(report.ndcg_jaccard_at_k, 0.0);
        assert_eq!(report.wap_at_k, 0.0);
    }

    #[test]
    fn evaluate_all_rejects_count_mismatch() {
        let err = evaluate_all(&[vec![1.0], vec![1.0]], &[set(&[1])], 10, 10).unwrap_err();
        assert!(err.to_string().contains("label sets"));
    }

    #[test]
    fn report_round_trips_through_json() {
        let report = MetricReport {
            map_sim_at_k: 72.123456,
            ndcg_sim_at_k: 75.17,
            map_easy: 28.95,
            map_medium: 14.28,
            map_hard: 6.85,
            ndcg_jaccard_at_k: 73.92,
            wap_at_k: 16.13,
            k_map: 5000,
            k_ndcg: 100,
            num_queries: 411,
        };
        let parsed = MetricReport::from_json(&report.to_json()).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn rank_improvement_never_decreases_ap_or_dcg() {
        // swap a relevant item upward past an irrelevant one
        let labels = vec![set(&[2]), set(&[1]), set(&[1])];
        let q = [set(&[1])];
        let before = vec![trivial_ranking(vec![0, 1, 2])];
        let after = vec![trivial_ranking(vec![1, 0, 2])];
        assert!(map_sim_at_k(&after, &q, &labels, 3) >= map_sim_at_k(&before, &q, &labels, 3));
        assert!(
            ndcg_sim_at_k(&after, &q, &labels, 3) >= ndcg_sim_at_k(&before, &q, &labels, 3)
        );
    }
}
