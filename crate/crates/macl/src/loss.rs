//! The adaptive multi-label contrastive loss family.
//!
//! One engine computes six variants over a mini-batch of unit-norm
//! embeddings: the strict and inclusive single-set baselines, the label-wise
//! baseline with and without label-count weighting, and the adaptive loss
//! with and without label-count weighting. The adaptive variants draw their
//! pair weights and per-pair temperatures from [`CorpusLabelStats`].

use serde::{Deserialize, Serialize};

use crate::error::MaclError;
use crate::labels::{jaccard_overlap, LabelSet};
use crate::stats::CorpusLabelStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Positives are exact label-set matches; single contrastive term.
    SupConAll,
    /// Positives share at least one label; single contrastive term.
    SupConAny,
    /// One contrastive term per anchor label, uniform weights and temperature.
    MulSupCon,
    /// `MulSupCon` with each anchor's terms scaled by 1/|labels|.
    WgMulSupCon,
    /// Label-wise terms with adaptive pair weights and temperatures.
    Macl,
    /// `Macl` with each anchor's terms scaled by 1/|labels|.
    WgMacl,
}

impl LossVariant {
    pub fn is_adaptive(self) -> bool {
        matches!(self, LossVariant::Macl | LossVariant::WgMacl)
    }

    pub fn is_label_wise(self) -> bool {
        !matches!(self, LossVariant::SupConAll | LossVariant::SupConAny)
    }

    pub fn label_count_weighted(self) -> bool {
        matches!(self, LossVariant::WgMulSupCon | LossVariant::WgMacl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossHyperparams {
    pub variant: LossVariant,
    /// Semantic-emphasis coefficient in the temperature's overlap term.
    pub alpha: f64,
    /// Rarity coefficient in the temperature's anchor-rarity term.
    pub beta: f64,
    /// Stability constant guarding the log denominators.
    pub epsilon: f64,
    /// Global temperature for the non-adaptive variants.
    pub tau: f64,
    /// When set, each anchor's own row joins its comparison and positive
    /// sets. Off by default; the standard convention excludes the anchor.
    #[serde(default)]
    pub include_anchor: bool,
}

impl Default for LossHyperparams {
    fn default() -> Self {
        LossHyperparams {
            variant: LossVariant::Macl,
            alpha: 1.5,
            beta: 0.1,
            epsilon: 1e-8,
            tau: 0.3,
            include_anchor: false,
        }
    }
}

impl LossHyperparams {
    pub fn validate(&self) -> Result<(), MaclError> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(MaclError::Config("alpha and beta must be >= 0".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(MaclError::Config("epsilon must be > 0".into()));
        }
        if self.tau <= 0.0 {
            return Err(MaclError::Config("tau must be > 0".into()));
        }
        Ok(())
    }
}

/// Unit-norm embeddings plus label sets for one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchView {
    embeddings: Vec<Vec<f64>>,
    labels: Vec<LabelSet>,
}

pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

impl BatchView {
    pub fn new(embeddings: Vec<Vec<f64>>, labels: Vec<LabelSet>) -> Result<Self, MaclError> {
        if embeddings.len() != labels.len() {
            return Err(MaclError::Batch(format!(
                "{} embeddings but {} label sets",
                embeddings.len(),
                labels.len()
            )));
        }
        if embeddings.len() < 2 {
            return Err(MaclError::Batch("batch must hold at least 2 samples".into()));
        }
        let dim = embeddings[0].len();
        for (i, z) in embeddings.iter().enumerate() {
            if z.len() != dim {
                return Err(MaclError::Batch(format!(
                    "embedding {i} has dimension {} but expected {dim}",
                    z.len()
                )));
            }
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(MaclError::Batch("embeddings must be unit norm".into()));
            }
        }
        for (i, y) in labels.iter().enumerate() {
            if y.is_empty() {
                return Err(MaclError::Batch(format!("sample {i} has an empty label set")));
            }
        }
        Ok(BatchView { embeddings, labels })
    }

    /// Builds the view without the unit-norm check. Used by the
    /// finite-difference oracle, which perturbs raw coordinates.
    pub fn new_unchecked(embeddings: Vec<Vec<f64>>, labels: Vec<LabelSet>) -> Self {
        BatchView { embeddings, labels }
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, Vec::len)
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i]
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn label_set(&self, i: usize) -> LabelSet {
        self.labels[i]
    }

    pub fn labels(&self) -> &[LabelSet] {
        &self.labels
    }

    pub fn similarity(&self, i: usize, a: usize) -> f64 {
        dot(&self.embeddings[i], &self.embeddings[a])
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-pair weights and temperatures for one batch.
///
/// Weights are only meaningful for pairs that share a label; other cells
/// hold 1.0 and are never read by the loss.
#[derive(Debug, Clone)]
pub struct PairContext {
    pub weight: Vec<Vec<f64>>,
    pub temperature: Vec<Vec<f64>>,
}

impl PairContext {
    pub fn uniform(batch_size: usize, tau: f64) -> Self {
        PairContext {
            weight: vec![vec![1.0; batch_size]; batch_size],
            temperature: vec![vec![tau; batch_size]; batch_size],
        }
    }

    pub fn adaptive(
        batch: &BatchView,
        stats: &CorpusLabelStats,
        hyper: &LossHyperparams,
    ) -> Result<Self, MaclError> {
        let b = batch.len();
        let mut weight = vec![vec![1.0; b]; b];
        let mut temperature = vec![vec![1.0; b]; b];
        for i in 0..b {
            let y_i = batch.label_set(i);
            for a in 0..b {
                if a == i && !hyper.include_anchor {
                    continue;
                }
                let y_a = batch.label_set(a);
                temperature[i][a] =
                    pair_temperature(stats, y_i, y_a, hyper.alpha, hyper.beta, hyper.epsilon)?;
                if !y_i.intersection(y_a).is_empty() {
                    weight[i][a] = pair_weight(stats, y_i, y_a, hyper.epsilon)?;
                }
            }
        }
        Ok(PairContext { weight, temperature })
    }

    pub fn for_variant(
        batch: &BatchView,
        stats: Option<&CorpusLabelStats>,
        hyper: &LossHyperparams,
    ) -> Result<Self, MaclError> {
        if hyper.variant.is_adaptive() {
            let stats = stats.ok_or_else(|| {
                MaclError::Config("adaptive variants require corpus statistics".into())
            })?;
            PairContext::adaptive(batch, stats, hyper)
        } else {
            Ok(PairContext::uniform(batch.len(), hyper.tau))
        }
    }
}

/// Pair weight w = 1 / (ln(1 + f) + epsilon).
pub fn pair_weight(
    stats: &CorpusLabelStats,
    y_i: LabelSet,
    y_p: LabelSet,
    epsilon: f64,
) -> Result<f64, MaclError> {
    let f = stats.intersection_frequency(y_i, y_p)?;
    Ok(weight_from_frequency(f as f64, epsilon))
}

pub fn weight_from_frequency(f: f64, epsilon: f64) -> f64 {
    1.0 / ((1.0 + f).ln() + epsilon)
}

/// Pair temperature T = exp(-alpha J) + beta / (ln(1 + h) + epsilon).
pub fn pair_temperature(
    stats: &CorpusLabelStats,
    y_i: LabelSet,
    y_p: LabelSet,
    alpha: f64,
    beta: f64,
    epsilon: f64,
) -> Result<f64, MaclError> {
    let j = jaccard_overlap(y_i, y_p)?;
    let h = stats.marginal_frequency(y_i)?;
    Ok(temperature_from_parts(j, h, alpha, beta, epsilon))
}

pub fn temperature_from_parts(j: f64, h: f64, alpha: f64, beta: f64, epsilon: f64) -> f64 {
    (-alpha * j).exp() + beta / ((1.0 + h).ln() + epsilon)
}

/// One contrastive term: the positive set attached to an anchor label, or
/// the single variant-level set for the non-label-wise baselines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositiveTerm {
    pub label: Option<usize>,
    pub positives: Vec<usize>,
}

/// Indices compared against anchor `i` (all other rows; the anchor's own row
/// joins when `include_anchor` is set).
pub fn comparison_set(batch_size: usize, anchor: usize, include_anchor: bool) -> Vec<usize> {
    (0..batch_size)
        .filter(|&a| include_anchor || a != anchor)
        .collect()
}

/// Label-wise positive sets for one anchor: for each anchor label `j`,
/// the comparisons carrying `j`. Empty sets are retained and skipped
/// downstream.
pub fn build_positive_sets(
    batch: &BatchView,
    anchor: usize,
    include_anchor: bool,
) -> Vec<(usize, Vec<usize>)> {
    let y = batch.label_set(anchor);
    y.iter()
        .map(|label| {
            let members = comparison_set(batch.len(), anchor, include_anchor)
                .into_iter()
                .filter(|&m| batch.label_set(m).contains(label))
                .collect();
            (label, members)
        })
        .collect()
}

/// Positive terms for one anchor under the given variant.
pub fn positive_terms(
    batch: &BatchView,
    anchor: usize,
    variant: LossVariant,
    include_anchor: bool,
) -> Vec<PositiveTerm> {
    if variant.is_label_wise() {
        build_positive_sets(batch, anchor, include_anchor)
            .into_iter()
            .map(|(label, positives)| PositiveTerm {
                label: Some(label),
                positives,
            })
            .collect()
    } else {
        let y = batch.label_set(anchor);
        let positives = comparison_set(batch.len(), anchor, include_anchor)
            .into_iter()
            .filter(|&m| match variant {
                LossVariant::SupConAll => batch.label_set(m) == y,
                LossVariant::SupConAny => !batch.label_set(m).intersection(y).is_empty(),
                _ => unreachable!(),
            })
            .collect();
        vec![PositiveTerm {
            label: None,
            positives,
        }]
    }
}

/// Diagnostic decomposition of one batch loss evaluation.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    /// Mean of `per_anchor` over anchors with at least one non-empty
    /// positive set; 0.0 when no anchor contributes.
    pub total: f64,
    pub per_anchor: Vec<f64>,
    /// Per-anchor label terms `(label, value)`; `label` is `None` for the
    /// single-set baselines.
    pub per_anchor_per_label: Vec<Vec<(Option<usize>, f64)>>,
    /// Whether each anchor entered the batch mean.
    pub contributing: Vec<bool>,
}

/// Max-subtracted log-sum-exp over the scaled similarities of one anchor.
fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Evaluates one anchor's loss terms against a prepared pair context.
fn anchor_loss(
    batch: &BatchView,
    ctx: &PairContext,
    hyper: &LossHyperparams,
    anchor: usize,
) -> Vec<(Option<usize>, f64)> {
    let comparisons = comparison_set(batch.len(), anchor, hyper.include_anchor);
    let scaled: Vec<f64> = comparisons
        .iter()
        .map(|&a| batch.similarity(anchor, a) / ctx.temperature[anchor][a])
        .collect();
    let lse = log_sum_exp(&scaled);
    let wg_scale = if hyper.variant.label_count_weighted() {
        1.0 / batch.label_set(anchor).cardinality() as f64
    } else {
        1.0
    };
    positive_terms(batch, anchor, hyper.variant, hyper.include_anchor)
        .into_iter()
        .filter(|term| !term.positives.is_empty())
        .map(|term| {
            let sum: f64 = term
                .positives
                .iter()
                .map(|&p| {
                    let log_prob =
                        batch.similarity(anchor, p) / ctx.temperature[anchor][p] - lse;
                    ctx.weight[anchor][p] * log_prob
                })
                .sum();
            (term.label, -wg_scale * sum / term.positives.len() as f64)
        })
        .collect()
}

/// Full batch loss under any variant.
pub fn batch_loss(
    batch: &BatchView,
    stats: Option<&CorpusLabelStats>,
    hyper: &LossHyperparams,
) -> Result<LossBreakdown, MaclError> {
    hyper.validate()?;
    let ctx = PairContext::for_variant(batch, stats, hyper)?;
    Ok(batch_loss_with_context(batch, &ctx, hyper))
}

/// Batch loss against a caller-supplied pair context. Used by the reduction
/// checks, which pin the context to uniform weights and temperatures.
pub fn batch_loss_with_context(
    batch: &BatchView,
    ctx: &PairContext,
    hyper: &LossHyperparams,
) -> LossBreakdown {
    let b = batch.len();
    let mut per_anchor = vec![0.0; b];
    let mut per_anchor_per_label = Vec::with_capacity(b);
    let mut contributing = vec![false; b];
    for i in 0..b {
        let terms = anchor_loss(batch, ctx, hyper, i);
        contributing[i] = !terms.is_empty();
        per_anchor[i] = terms.iter().map(|(_, v)| v).sum();
        per_anchor_per_label.push(terms);
    }
    let n_contributing = contributing.iter().filter(|&&c| c).count();
    let total = if n_contributing == 0 {
        0.0
    } else {
        per_anchor
            .iter()
            .zip(&contributing)
            .filter(|(_, &c)| c)
            .map(|(v, _)| v)
            .sum::<f64>()
            / n_contributing as f64
    };
    LossBreakdown {
        total,
        per_anchor,
        per_anchor_per_label,
        contributing,
    }
}

/// |adaptive loss with pinned uniform context − label-wise baseline| for one
/// batch; zero up to round-off by construction.
pub fn reduction_gap(batch: &BatchView, hyper: &LossHyperparams) -> f64 {
    let ctx = PairContext::uniform(batch.len(), hyper.tau);
    let pinned = LossHyperparams {
        variant: LossVariant::Macl,
        ..*hyper
    };
    let macl = batch_loss_with_context(batch, &ctx, &pinned);
    let baseline_hyper = LossHyperparams {
        variant: LossVariant::MulSupCon,
        ..*hyper
    };
    let baseline = batch_loss_with_context(batch, &ctx, &baseline_hyper);
    (macl.total - baseline.total).abs()
}
