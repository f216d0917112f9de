//! Analytic gradients of the loss family, their attraction/repulsion
//! decomposition, and the finite-difference oracle used to validate them.
//!
//! Gradients are taken with respect to the raw anchor embedding, treating
//! every comparison embedding as a constant and applying no unit-norm
//! Jacobian; the trainer composes that Jacobian separately. The full
//! batch-level gradient (anchor plus comparison roles) lives in
//! [`batch_gradient`].

use crate::error::MaclError;
use crate::loss::{
    batch_loss_with_context, comparison_set, positive_terms, BatchView, LossHyperparams,
    PairContext,
};
use crate::stats::CorpusLabelStats;

/// How the repulsion vector is scaled when composing the total gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RepulsionScaling {
    /// Total positive weight: sum over non-empty label terms of the mean
    /// pair weight. Differentiates the implemented loss exactly, for any
    /// weights; coincides with `NonEmptyLabelCount` under uniform weights.
    #[default]
    PositiveWeightSum,
    /// Count of anchor labels whose positive set is non-empty.
    NonEmptyLabelCount,
    /// The anchor's full label cardinality, even when some label terms were
    /// skipped for emptiness.
    FullLabelCount,
}

/// Attraction/repulsion split of one anchor's gradient.
#[derive(Debug, Clone)]
pub struct GradientDecomposition {
    /// Per-label attraction vectors; only non-empty positive sets appear.
    /// `label` is `None` for the single-set baselines.
    pub attraction_per_label: Vec<(Option<usize>, Vec<f64>)>,
    /// The softmax-weighted repulsion vector, unscaled.
    pub repulsion: Vec<f64>,
    /// Scale applied to `repulsion` when composing `total`.
    pub repulsion_multiplier: f64,
    /// Softmax normalizer over the anchor's comparisons.
    pub normalizer: f64,
    /// Composed gradient: sum of attractions plus scaled repulsion.
    pub total: Vec<f64>,
    /// Set when every positive set was empty; the decomposition is zero.
    pub all_empty: bool,
}

pub fn analytic_gradient(
    batch: &BatchView,
    stats: Option<&CorpusLabelStats>,
    hyper: &LossHyperparams,
    anchor: usize,
) -> Result<GradientDecomposition, MaclError> {
    analytic_gradient_with(batch, stats, hyper, anchor, RepulsionScaling::default())
}

pub fn analytic_gradient_with(
    batch: &BatchView,
    stats: Option<&CorpusLabelStats>,
    hyper: &LossHyperparams,
    anchor: usize,
    scaling: RepulsionScaling,
) -> Result<GradientDecomposition, MaclError> {
    hyper.validate()?;
    if anchor >= batch.len() {
        return Err(MaclError::Gradient(format!(
            "anchor {anchor} out of range for batch of {}",
            batch.len()
        )));
    }
    let ctx = PairContext::for_variant(batch, stats, hyper)?;
    Ok(anchor_gradient(batch, &ctx, hyper, anchor, scaling))
}

/// One anchor's gradient decomposition against a prepared pair context.
pub fn anchor_gradient(
    batch: &BatchView,
    ctx: &PairContext,
    hyper: &LossHyperparams,
    anchor: usize,
    scaling: RepulsionScaling,
) -> GradientDecomposition {
    let dim = batch.dim();
    let comparisons = comparison_set(batch.len(), anchor, hyper.include_anchor);
    let wg_scale = if hyper.variant.label_count_weighted() {
        1.0 / batch.label_set(anchor).cardinality() as f64
    } else {
        1.0
    };

    let terms = positive_terms(batch, anchor, hyper.variant, hyper.include_anchor);
    let non_empty: Vec<_> = terms.iter().filter(|t| !t.positives.is_empty()).collect();
    if non_empty.is_empty() {
        return GradientDecomposition {
            attraction_per_label: Vec::new(),
            repulsion: vec![0.0; dim],
            repulsion_multiplier: 0.0,
            normalizer: softmax_normalizer(batch, ctx, anchor, &comparisons),
            total: vec![0.0; dim],
            all_empty: true,
        };
    }

    let mut attraction_per_label = Vec::with_capacity(non_empty.len());
    let mut weight_sum = 0.0;
    for term in &non_empty {
        let inv_size = 1.0 / term.positives.len() as f64;
        let mut vec_j = vec![0.0; dim];
        for &p in &term.positives {
            let coef = wg_scale * inv_size * ctx.weight[anchor][p] / ctx.temperature[anchor][p];
            weight_sum += wg_scale * inv_size * ctx.weight[anchor][p];
            axpy(&mut vec_j, -coef, batch.embedding(p));
        }
        attraction_per_label.push((term.label, vec_j));
    }

    // Softmax over scaled similarities, max-subtracted.
    let scaled: Vec<f64> = comparisons
        .iter()
        .map(|&a| batch.similarity(anchor, a) / ctx.temperature[anchor][a])
        .collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = scaled.iter().map(|x| (x - m).exp()).collect();
    let denom: f64 = shifted.iter().sum();
    let normalizer = m.exp() * denom;

    let mut repulsion = vec![0.0; dim];
    for (idx, &a) in comparisons.iter().enumerate() {
        let softmax = shifted[idx] / denom;
        axpy(&mut repulsion, softmax / ctx.temperature[anchor][a], batch.embedding(a));
    }

    let repulsion_multiplier = match scaling {
        RepulsionScaling::PositiveWeightSum => weight_sum,
        RepulsionScaling::NonEmptyLabelCount => wg_scale * non_empty.len() as f64,
        RepulsionScaling::FullLabelCount => {
            wg_scale
                * if hyper.variant.is_label_wise() {
                    batch.label_set(anchor).cardinality() as f64
                } else {
                    1.0
                }
        }
    };

    let mut total = vec![0.0; dim];
    for (_, vec_j) in &attraction_per_label {
        axpy(&mut total, 1.0, vec_j);
    }
    axpy(&mut total, repulsion_multiplier, &repulsion);

    GradientDecomposition {
        attraction_per_label,
        repulsion,
        repulsion_multiplier,
        normalizer,
        total,
        all_empty: false,
    }
}

fn softmax_normalizer(
    batch: &BatchView,
    ctx: &PairContext,
    anchor: usize,
    comparisons: &[usize],
) -> f64 {
    comparisons
        .iter()
        .map(|&a| (batch.similarity(anchor, a) / ctx.temperature[anchor][a]).exp())
        .sum()
}

fn axpy(acc: &mut [f64], scale: f64, v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

/// Total attraction coefficient that comparison `t` exerts on the anchor:
/// the factor multiplying `z_t` in the attraction part of the gradient.
pub fn shared_label_pull(
    batch: &BatchView,
    stats: Option<&CorpusLabelStats>,
    hyper: &LossHyperparams,
    anchor: usize,
    t: usize,
) -> Result<f64, MaclError> {
    if t == anchor {
        return Err(MaclError::Gradient("t must differ from the anchor".into()));
    }
    let shared = batch.label_set(anchor).intersection(batch.label_set(t));
    if shared.is_empty() {
        return Err(MaclError::Gradient(
            "no shared labels between anchor and t".into(),
        ));
    }
    let ctx = PairContext::for_variant(batch, stats, hyper)?;
    let wg_scale = if hyper.variant.label_count_weighted() {
        1.0 / batch.label_set(anchor).cardinality() as f64
    } else {
        1.0
    };
    let mut pull = 0.0;
    for term in positive_terms(batch, anchor, hyper.variant, hyper.include_anchor) {
        if term.positives.contains(&t) {
            pull -= wg_scale * ctx.weight[anchor][t]
                / (ctx.temperature[anchor][t] * term.positives.len() as f64);
        }
    }
    Ok(pull)
}

/// Central-difference gradient of the anchor's per-anchor loss term with
/// respect to its raw embedding. Perturbed coordinates are not
/// re-normalized.
pub fn finite_difference_gradient(
    batch: &BatchView,
    stats: Option<&CorpusLabelStats>,
    hyper: &LossHyperparams,
    anchor: usize,
    step: f64,
) -> Result<Vec<f64>, MaclError> {
    if step <= 0.0 {
        return Err(MaclError::Gradient("step must be positive".into()));
    }
    let ctx = PairContext::for_variant(batch, stats, hyper)?;
    let mut grad = vec![0.0; batch.dim()];
    for coord in 0..batch.dim() {
        let eval = |delta: f64| {
            let mut embeddings: Vec<Vec<f64>> =
                batch.embeddings().iter().cloned().collect();
            embeddings[anchor][coord] += delta;
            let perturbed =
                BatchView::new_unchecked(embeddings, batch.labels().to_vec());
            batch_loss_with_context(&perturbed, &ctx, hyper).per_anchor[anchor]
        };
        grad[coord] = (eval(step) - eval(-step)) / (2.0 * step);
    }
    Ok(grad)
}

/// Gradient of the batch-mean loss with respect to every embedding,
/// including each embedding's role as a comparison in other anchors' terms.
/// This is what the trainer backpropagates.
pub fn batch_gradient(
    batch: &BatchView,
    stats: Option<&CorpusLabelStats>,
    hyper: &LossHyperparams,
) -> Result<Vec<Vec<f64>>, MaclError> {
    if hyper.include_anchor {
        return Err(MaclError::Gradient(
            "batch gradient requires the anchor-exclusion convention".into(),
        ));
    }
    hyper.validate()?;
    let ctx = PairContext::for_variant(batch, stats, hyper)?;
    let b = batch.len();
    let dim = batch.dim();
    let mut grads = vec![vec![0.0; dim]; b];

    // Count contributing anchors first; the mean denominator depends on it.
    let decomps: Vec<GradientDecomposition> = (0..b)
        .map(|i| anchor_gradient(batch, &ctx, hyper, i, RepulsionScaling::PositiveWeightSum))
        .collect();
    let n_contributing = decomps.iter().filter(|d| !d.all_empty).count();
    if n_contributing == 0 {
        return Ok(grads);
    }
    let inv_n = 1.0 / n_contributing as f64;

    for (i, decomp) in decomps.iter().enumerate() {
        if decomp.all_empty {
            continue;
        }
        axpy(&mut grads[i], inv_n, &decomp.total);

        // Comparison-side contributions: z_m appears in anchor i's
        // attraction (when positive) and in its softmax denominator.
        let comparisons = comparison_set(b, i, false);
        let scaled: Vec<f64> = comparisons
            .iter()
            .map(|&a| batch.similarity(i, a) / ctx.temperature[i][a])
            .collect();
        let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = scaled.iter().map(|x| (x - m).exp()).collect();
        let denom: f64 = shifted.iter().sum();

        let wg_scale = if hyper.variant.label_count_weighted() {
            1.0 / batch.label_set(i).cardinality() as f64
        } else {
            1.0
        };
        let terms = positive_terms(batch, i, hyper.variant, hyper.include_anchor);
        for (idx, &a) in comparisons.iter().enumerate() {
            let mut coef = 0.0;
            for term in &terms {
                if term.positives.contains(&a) {
                    coef -= wg_scale * ctx.weight[i][a]
                        / (ctx.temperature[i][a] * term.positives.len() as f64);
                }
            }
            let softmax = shifted[idx] / denom;
            coef += decomp.repulsion_multiplier * softmax / ctx.temperature[i][a];
            axpy(&mut grads[a], inv_n * coef, batch.embedding(i));
        }
    }
    Ok(grads)
}
