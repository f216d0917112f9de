//! Desk-scale embedding trainer.
//!
//! A linear or two-layer rectifier encoder maps precomputed feature vectors
//! to unit-norm embeddings, trained under any loss variant with an
//! adaptive-moment optimizer, decoupled weight decay, global gradient-norm
//! clipping, and a windowed cosine learning-rate schedule. The whole loop is
//! single-threaded and bit-reproducible for a fixed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::MaclError;
use crate::grad::batch_gradient;
use crate::labels::LabelSet;
use crate::loss::{batch_loss, BatchView, LossHyperparams};
use crate::stats::CorpusLabelStats;

pub const CHECKPOINT_VERSION: &str = "macl-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub input_dim: usize,
    /// Hidden width of the rectifier layer; `None` selects a linear map.
    pub hidden_dim: Option<usize>,
    pub output_dim: usize,
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<(), MaclError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dim == Some(0) {
            return Err(MaclError::Config("encoder dimensions must be >= 1".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        match self.hidden_dim {
            None => self.output_dim * self.input_dim + self.output_dim,
            Some(h) => {
                h * self.input_dim + h + self.output_dim * h + self.output_dim
            }
        }
    }
}

/// Encoder parameters stored flat: `W1 | b1 | (W2 | b2)` with weights in
/// row-major output-by-input order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Encoder {
    pub spec: EncoderSpec,
    pub params: Vec<f64>,
}

impl Encoder {
    /// Seeded uniform fan-in initialization.
    pub fn init(spec: EncoderSpec, seed: u64) -> Result<Self, MaclError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E3779B97F4A7C15));
        let mut params = Vec::with_capacity(spec.param_count());
        let fill_layer = |rng: &mut ChaCha8Rng, params: &mut Vec<f64>, out: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..out * fan_in + out {
                params.push(rng.gen_range(-bound..bound));
            }
        };
        match spec.hidden_dim {
            None => fill_layer(&mut rng, &mut params, spec.output_dim, spec.input_dim),
            Some(h) => {
                fill_layer(&mut rng, &mut params, h, spec.input_dim);
                fill_layer(&mut rng, &mut params, spec.output_dim, h);
            }
        }
        Ok(Encoder { spec, params })
    }

    /// Identity-initialized linear encoder for square specs. Test helper.
    pub fn identity(dim: usize) -> Self {
        let spec = EncoderSpec {
            input_dim: dim,
            hidden_dim: None,
            output_dim: dim,
        };
        let mut params = vec![0.0; spec.param_count()];
        for i in 0..dim {
            params[i * dim + i] = 1.0;
        }
        Encoder { spec, params }
    }

    fn layer_slices(&self) -> LayerView<'_> {
        LayerView::over(&self.spec, &self.params)
    }

    /// Raw (pre-normalization) output for one feature row, plus the hidden
    /// activations needed by the backward pass.
    fn forward_raw(&self, x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        let view = self.layer_slices();
        match self.spec.hidden_dim {
            None => {
                let u = affine(view.w1, view.b1, x, self.spec.output_dim);
                (u, None)
            }
            Some(h) => {
                let mut hidden = affine(view.w1, view.b1, x, h);
                for v in &mut hidden {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                let u = affine(
                    view.w2.unwrap(),
                    view.b2.unwrap(),
                    &hidden,
                    self.spec.output_dim,
                );
                (u, Some(hidden))
            }
        }
    }

    /// Encode feature rows to unit-norm embeddings.
    pub fn encode(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, MaclError> {
        features
            .iter()
            .enumerate()
            .map(|(row, x)| {
                if x.len() != self.spec.input_dim {
                    return Err(MaclError::Training(format!(
                        "feature row {row} has width {} but encoder expects {}",
                        x.len(),
                        self.spec.input_dim
                    )));
                }
                let (u, _) = self.forward_raw(x);
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < 1e-12 {
                    return Err(MaclError::Training(format!(
                        "degenerate embedding: row {row} maps to the zero vector"
                    )));
                }
                Ok(u.into_iter().map(|v| v / norm).collect())
            })
            .collect()
    }

    /// Accumulate parameter gradients for a batch given dL/d(normalized
    /// embedding) per row. Applies the unit-norm Jacobian, then
    /// backpropagates through the layers.
    fn accumulate_gradients(
        &self,
        features: &[Vec<f64>],
        grad_embeddings: &[Vec<f64>],
        grads: &mut [f64],
    ) -> Result<(), MaclError> {
        let spec = &self.spec;
        for (x, g_y) in features.iter().zip(grad_embeddings) {
            let (u, hidden) = self.forward_raw(x);
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(MaclError::Training("degenerate embedding in backward".into()));
            }
            let y: Vec<f64> = u.iter().map(|v| v / norm).collect();
            let dot_gy: f64 = g_y.iter().zip(&y).map(|(a, b)| a * b).sum();
            // d(normalize)/du = (I - y y^T) / ||u||
            let g_u: Vec<f64> = g_y
                .iter()
                .zip(&y)
                .map(|(g, yi)| (g - dot_gy * yi) / norm)
                .collect();
            match spec.hidden_dim {
                None => {
                    backprop_affine(grads, 0, &g_u, x, spec.output_dim, spec.input_dim);
                }
                Some(h) => {
                    let hidden = hidden.unwrap();
                    let off2 = h * spec.input_dim + h;
                    backprop_affine(grads, off2, &g_u, &hidden, spec.output_dim, h);
                    // dL/dhidden = W2^T g_u, masked by the rectifier
                    let w2 = &self.params[off2..off2 + spec.output_dim * h];
                    let mut g_h = vec![0.0; h];
                    for o in 0..spec.output_dim {
                        for k in 0..h {
                            g_h[k] += w2[o * h + k] * g_u[o];
                        }
                    }
                    for (gh, hv) in g_h.iter_mut().zip(&hidden) {
                        if *hv == 0.0 {
                            *gh = 0.0;
                        }
                    }
                    backprop_affine(grads, 0, &g_h, x, h, spec.input_dim);
                }
            }
        }
        Ok(())
    }
}

struct LayerView<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: Option<&'a [f64]>,
    b2: Option<&'a [f64]>,
}

impl<'a> LayerView<'a> {
    fn over(spec: &EncoderSpec, params: &'a [f64]) -> Self {
        match spec.hidden_dim {
            None => {
                let nw = spec.output_dim * spec.input_dim;
                LayerView {
                    w1: &params[..nw],
                    b1: &params[nw..nw + spec.output_dim],
                    w2: None,
                    b2: None,
                }
            }
            Some(h) => {
                let nw1 = h * spec.input_dim;
                let nw2 = spec.output_dim * h;
                LayerView {
                    w1: &params[..nw1],
                    b1: &params[nw1..nw1 + h],
                    w2: Some(&params[nw1 + h..nw1 + h + nw2]),
                    b2: Some(&params[nw1 + h + nw2..]),
                }
            }
        }
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: usize) -> Vec<f64> {
    let fan_in = x.len();
    (0..out)
        .map(|o| {
            b[o] + w[o * fan_in..(o + 1) * fan_in]
                .iter()
                .zip(x)
                .map(|(wi, xi)| wi * xi)
                .sum::<f64>()
        })
        .collect()
}

fn backprop_affine(
    grads: &mut [f64],
    offset: usize,
    g_out: &[f64],
    input: &[f64],
    out: usize,
    fan_in: usize,
) {
    for o in 0..out {
        for i in 0..fan_in {
            grads[offset + o * fan_in + i] += g_out[o] * input[i];
        }
        grads[offset + out * fan_in + o] += g_out[o];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_max_norm: f64,
    /// Multiplicative decay applied over each schedule window.
    pub schedule_decay: f64,
    /// Window length of the cosine schedule, in epochs.
    pub schedule_period: usize,
    pub seed: u64,
    /// Two noisy feature views per sample when set.
    pub augment: bool,
    pub noise_sigma: f64,
    pub loss: LossHyperparams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            learning_rate: 0.001,
            weight_decay: 0.0005,
            clip_max_norm: 1.0,
            schedule_decay: 0.8,
            schedule_period: 15,
            seed: 0,
            augment: false,
            noise_sigma: 0.05,
            loss: LossHyperparams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MaclError> {
        if self.epochs == 0 {
            return Err(MaclError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(MaclError::Config("batch_size must be >= 2".into()));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(MaclError::Config("learning_rate must be >= 0".into()));
        }
        if self.clip_max_norm <= 0.0 {
            return Err(MaclError::Config("clip_max_norm must be > 0".into()));
        }
        if self.schedule_period == 0 || !(0.0..=1.0).contains(&self.schedule_decay) {
            return Err(MaclError::Config("invalid schedule descriptor".into()));
        }
        self.loss.validate()
    }
}

/// Learning rate for an epoch: a cosine arc inside each window, calibrated
/// so every window ends at `schedule_decay` times its start.
pub fn lr_schedule(config: &TrainConfig, epoch: usize) -> f64 {
    let period = config.schedule_period as f64;
    let window = (epoch / config.schedule_period) as u32;
    let t = (epoch % config.schedule_period) as f64;
    let window_start = config.learning_rate * config.schedule_decay.powi(window as i32);
    let mid = (1.0 + config.schedule_decay) / 2.0;
    let half_span = (1.0 - config.schedule_decay) / 2.0;
    window_start * (mid + half_span * (std::f64::consts::PI * t / period).cos())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    pub encoder: Encoder,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step: u64,
    /// Epoch-mean losses, one entry per completed epoch.
    pub loss_curve: Vec<f64>,
}

/// Serialized training artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub encoder_spec: EncoderSpec,
    pub params: Vec<f64>,
    pub config: TrainConfig,
    pub final_epoch: usize,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, config: &TrainConfig) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            encoder_spec: state.encoder.spec.clone(),
            params: state.encoder.params.clone(),
            config: config.clone(),
            final_epoch: state.loss_curve.len(),
        }
    }

    pub fn into_encoder(self) -> Result<Encoder, MaclError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(MaclError::Config(format!(
                "unsupported checkpoint version `{}`",
                self.version
            )));
        }
        if self.params.len() != self.encoder_spec.param_count() {
            return Err(MaclError::Config("checkpoint parameter count mismatch".into()));
        }
        Ok(Encoder {
            spec: self.encoder_spec,
            params: self.params,
        })
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Clip the gradient to a maximum global Euclidean norm; returns the
/// pre-clip norm.
fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

fn adam_step(state: &mut TrainState, grads: &[f64], lr: f64, weight_decay: f64) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in state
        .encoder
        .params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.adam_m)
        .zip(&mut state.adam_v)
    {
        // decoupled weight decay
        *p -= lr * weight_decay * *p;
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// One optimization step over a prepared view batch. Exposed for the
/// instrumented clip and backward tests.
pub fn train_step(
    state: &mut TrainState,
    features: &[Vec<f64>],
    labels: &[LabelSet],
    stats: Option<&CorpusLabelStats>,
    config: &TrainConfig,
    lr: f64,
) -> Result<f64, MaclError> {
    let embeddings = state.encoder.encode(features)?;
    let batch = BatchView::new(embeddings, labels.to_vec())?;
    let breakdown = batch_loss(&batch, stats, &config.loss)?;
    if !breakdown.total.is_finite() {
        return Err(MaclError::Training(format!(
            "non-finite loss {}; batch labels: {:?}",
            breakdown.total,
            labels.iter().map(|l| l.to_string()).collect::<Vec<_>>()
        )));
    }
    let grad_z = batch_gradient(&batch, stats, &config.loss)?;
    let mut grads = vec![0.0; state.encoder.params.len()];
    state
        .encoder
        .accumulate_gradients(features, &grad_z, &mut grads)?;
    clip_global_norm(&mut grads, config.clip_max_norm);
    adam_step(state, &grads, lr, config.weight_decay);
    Ok(breakdown.total)
}

/// Full training run over a dataset of feature rows and label sets.
pub fn train(
    features: &[Vec<f64>],
    labels: &[LabelSet],
    stats: &CorpusLabelStats,
    encoder_spec: EncoderSpec,
    config: &TrainConfig,
) -> Result<TrainState, MaclError> {
    config.validate()?;
    encoder_spec.validate()?;
    if features.len() != labels.len() {
        return Err(MaclError::Training(format!(
            "{} feature rows but {} label sets",
            features.len(),
            labels.len()
        )));
    }
    if features.len() < config.batch_size {
        return Err(MaclError::Training(format!(
            "dataset of {} samples is smaller than batch_size {}",
            features.len(),
            config.batch_size
        )));
    }
    let encoder = Encoder::init(encoder_spec, config.seed)?;
    let n_params = encoder.params.len();
    let mut state = TrainState {
        encoder,
        adam_m: vec![0.0; n_params],
        adam_v: vec![0.0; n_params],
        step: 0,
        loss_curve: Vec::with_capacity(config.epochs),
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5AFE_C0DE_0000_0001u64);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0a0a_0a0a_0a0a_0a0au64);
    let mut order: Vec<usize> = (0..features.len()).collect();
    for epoch in 0..config.epochs {
        let lr = lr_schedule(config, epoch);
        seeded_shuffle(&mut order, &mut shuffle_rng);
        let mut epoch_losses = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (view_features, view_labels) =
                build_views(features, labels, chunk, config, &mut noise_rng);
            let loss = train_step(&mut state, &view_features, &view_labels, Some(stats), config, lr)?;
            epoch_losses.push(loss);
        }
        let mean = epoch_losses.iter().sum::<f64>() / epoch_losses.len().max(1) as f64;
        state.loss_curve.push(mean);
    }
    Ok(state)
}

fn build_views(
    features: &[Vec<f64>],
    labels: &[LabelSet],
    chunk: &[usize],
    config: &TrainConfig,
    noise_rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, Vec<LabelSet>) {
    let mut view_features = Vec::new();
    let mut view_labels = Vec::new();
    for &idx in chunk {
        if config.augment {
            for _ in 0..2 {
                let noisy = features[idx]
                    .iter()
                    .map(|&x| {
                        let n: f64 = StandardNormal.sample(noise_rng);
                        x + config.noise_sigma * n
                    })
                    .collect();
                view_features.push(noisy);
                view_labels.push(labels[idx]);
            }
        } else {
            view_features.push(features[idx].clone());
            view_labels.push(labels[idx]);
        }
    }
    (view_features, view_labels)
}

fn seeded_shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    order.shuffle(rng);
}

pub fn save_checkpoint(path: &std::path::Path, checkpoint: &Checkpoint) -> Result<(), MaclError> {
    let json = serde_json::to_string_pretty(checkpoint)
        .map_err(|e| MaclError::Config(format!("checkpoint serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| MaclError::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Checkpoint, MaclError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| MaclError::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| MaclError::Config(format!("checkpoint parse failed: {e}")))
}
