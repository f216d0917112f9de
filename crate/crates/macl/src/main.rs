//! Command-line workbench: corpus statistics, training, evaluation,
//! gradient checking, hyperparameter sweeps, and synthetic data generation.
//!
//! Exit codes: 0 on success, 1 on a numerical or runtime failure, 2 on a
//! usage or input-parsing error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use macl::data::{
    generate_synthetic, load_dataset, load_labels, make_splits, save_dataset, SplitSpec,
    SyntheticSpec, DEFAULT_SPLIT_RATIOS,
};
use macl::grad::{analytic_gradient, finite_difference_gradient};
use macl::loss::{LossHyperparams, LossVariant};
use macl::metrics::{evaluate_all, DEFAULT_K_MAP, DEFAULT_K_NDCG};
use macl::stats::CorpusLabelStats;
use macl::testutil::{random_batch, random_stats};
use macl::train::{
    load_checkpoint, save_checkpoint, train, Checkpoint, EncoderSpec, TrainConfig,
};
use macl::{LabelSet, MaclError};

#[derive(Parser)]
#[command(name = "macl", version, about = "Multi-label adaptive contrastive learning workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize a labels file: per-label counts and frequent label pairs.
    Stats {
        /// Labels CSV with header `id,<label names...>`.
        labels: PathBuf,
    },
    /// Train an encoder and write a checkpoint plus a loss curve.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        /// Number of random batches to check.
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Train and evaluate across a grid of one hyperparameter.
    Sweep(SweepArgs),
    /// Generate a synthetic dataset from a generator spec.
    Synth {
        /// JSON generator spec.
        #[arg(long)]
        spec: PathBuf,
        /// Output prefix; writes `<prefix>.labels.csv` and `<prefix>.features.csv`.
        #[arg(long)]
        out_prefix: String,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// JSON run configuration; omitted fields fall back to defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output prefix; writes `<prefix>.checkpoint.json` and `<prefix>.loss.csv`.
    #[arg(long, default_value = "run")]
    out_prefix: String,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Which split to evaluate: train, val, test, or all.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = DEFAULT_K_MAP)]
    k_map: usize,
    #[arg(long, default_value_t = DEFAULT_K_NDCG)]
    k_ndcg: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hyperparameter to sweep: alpha, beta, tau, or lr.
    #[arg(long)]
    param: String,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

/// Command-line overrides applied on top of the JSON run configuration.
#[derive(Args, Default)]
struct ConfigOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Loss variant: sup_con_all, sup_con_any, mul_sup_con, wg_mul_sup_con,
    /// macl, or wg_macl.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    augment: Option<bool>,
}

/// Flat run configuration as read from `--config`. Every field is optional;
/// defaults follow the standard training recipe.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    clip_max_norm: Option<f64>,
    schedule_decay: Option<f64>,
    schedule_period: Option<usize>,
    seed: Option<u64>,
    augment: Option<bool>,
    noise_sigma: Option<f64>,
    variant: Option<String>,
    alpha: Option<f64>,
    beta: Option<f64>,
    epsilon: Option<f64>,
    tau: Option<f64>,
    embedding_dim: Option<usize>,
    hidden_dim: Option<usize>,
}

fn parse_variant(name: &str) -> Result<LossVariant, MaclError> {
    match name {
        "sup_con_all" => Ok(LossVariant::SupConAll),
        "sup_con_any" => Ok(LossVariant::SupConAny),
        "mul_sup_con" => Ok(LossVariant::MulSupCon),
        "wg_mul_sup_con" => Ok(LossVariant::WgMulSupCon),
        "macl" => Ok(LossVariant::Macl),
        "wg_macl" => Ok(LossVariant::WgMacl),
        other => Err(MaclError::Config(format!("unknown loss variant `{other}`"))),
    }
}

/// Resolved run settings: trainer config plus encoder shape.
struct ResolvedRun {
    config: TrainConfig,
    embedding_dim: usize,
    hidden_dim: Option<usize>,
}

fn resolve_run(
    config_path: Option<&Path>,
    overrides: &ConfigOverrides,
) -> Result<ResolvedRun, MaclError> {
    let file: RunConfig = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| MaclError::io(path.display().to_string(), e))?;
            serde_json::from_str(&text)
                .map_err(|e| MaclError::Config(format!("run config parse failed: {e}")))?
        }
        None => RunConfig::default(),
    };
    let defaults = TrainConfig::default();
    let variant_name = overrides
        .variant
        .clone()
        .or(file.variant)
        .unwrap_or_else(|| "macl".into());
    let loss = LossHyperparams {
        variant: parse_variant(&variant_name)?,
        alpha: overrides.alpha.or(file.alpha).unwrap_or(defaults.loss.alpha),
        beta: overrides.beta.or(file.beta).unwrap_or(defaults.loss.beta),
        epsilon: file.epsilon.unwrap_or(defaults.loss.epsilon),
        tau: overrides.tau.or(file.tau).unwrap_or(defaults.loss.tau),
        include_anchor: false,
    };
    let config = TrainConfig {
        epochs: overrides.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        batch_size: overrides
            .batch_size
            .or(file.batch_size)
            .unwrap_or(defaults.batch_size),
        learning_rate: overrides
            .learning_rate
            .or(file.learning_rate)
            .unwrap_or(defaults.learning_rate),
        weight_decay: overrides
            .weight_decay
            .or(file.weight_decay)
            .unwrap_or(defaults.weight_decay),
        clip_max_norm: file.clip_max_norm.unwrap_or(defaults.clip_max_norm),
        schedule_decay: file.schedule_decay.unwrap_or(defaults.schedule_decay),
        schedule_period: file.schedule_period.unwrap_or(defaults.schedule_period),
        seed: overrides.seed.or(file.seed).unwrap_or(defaults.seed),
        augment: overrides.augment.or(file.augment).unwrap_or(defaults.augment),
        noise_sigma: file.noise_sigma.unwrap_or(defaults.noise_sigma),
        loss,
    };
    Ok(ResolvedRun {
        config,
        embedding_dim: overrides.embedding_dim.or(file.embedding_dim).unwrap_or(32),
        hidden_dim: overrides.hidden_dim.or(file.hidden_dim),
    })
}

fn cmd_stats(labels_path: &Path) -> Result<(), MaclError> {
    let (_, vocabulary, labels) = load_labels(labels_path)?;
    let stats = CorpusLabelStats::build(&labels)?;
    let counts: Vec<serde_json::Value> = (0..vocabulary.len())
        .map(|j| {
            serde_json::json!({
                "label": vocabulary.name(j),
                "count": stats.per_label_count(j),
            })
        })
        .collect();
    let mut pairs = Vec::new();
    for j in 0..vocabulary.len() {
        for k in j + 1..vocabulary.len() {
            let key = LabelSet::from_indices([j, k]);
            let f = stats.intersection_frequency(key, key)?;
            if f > 0 {
                pairs.push((j, k, f));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let top_pairs: Vec<serde_json::Value> = pairs
        .iter()
        .take(10)
        .map(|&(j, k, f)| {
            serde_json::json!({
                "labels": [vocabulary.name(j), vocabulary.name(k)],
                "count": f,
            })
        })
        .collect();
    let out = serde_json::json!({
        "num_samples": stats.sample_count(),
        "num_labels": vocabulary.len(),
        "per_label": counts,
        "top_pairs": top_pairs,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("stats serialize"));
    Ok(())
}

fn split_of<'a>(spec: &'a SplitSpec, name: &str, n: usize) -> Result<Vec<usize>, MaclError> {
    match name {
        "train" => Ok(spec.train.clone()),
        "val" => Ok(spec.val.clone()),
        "test" => Ok(spec.test.clone()),
        "all" => Ok((0..n).collect()),
        other => Err(MaclError::Config(format!(
            "unknown split `{other}`; expected train, val, test, or all"
        ))),
    }
}

fn cmd_train(args: &TrainArgs) -> Result<(), MaclError> {
    let run = resolve_run(args.config.as_deref(), &args.overrides)?;
    let dataset = load_dataset(&args.labels, &args.features)?;
    let splits = make_splits(dataset.len(), DEFAULT_SPLIT_RATIOS, run.config.seed)?;
    let (features, labels) = dataset.select(&splits.train);
    let stats = CorpusLabelStats::build(&labels)?;
    let spec = EncoderSpec {
        input_dim: dataset.feature_dim(),
        hidden_dim: run.hidden_dim,
        output_dim: run.embedding_dim,
    };
    let state = train(&features, &labels, &stats, spec, &run.config)?;

    let ckpt_path = PathBuf::from(format!("{}.checkpoint.json", args.out_prefix));
    save_checkpoint(&ckpt_path, &Checkpoint::from_state(&state, &run.config))?;
    let curve_path = PathBuf::from(format!("{}.loss.csv", args.out_prefix));
    let mut curve = String::from("epoch,mean_loss\n");
    for (epoch, loss) in state.loss_curve.iter().enumerate() {
        curve.push_str(&format!("{},{}\n", epoch + 1, loss));
    }
    std::fs::write(&curve_path, curve)
        .map_err(|e| MaclError::io(curve_path.display().to_string(), e))?;
    eprintln!(
        "trained {} epochs over {} samples; final mean loss {:.6}",
        run.config.epochs,
        splits.train.len(),
        state.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    eprintln!("wrote {} and {}", ckpt_path.display(), curve_path.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), MaclError> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let seed = checkpoint.config.seed;
    let encoder = checkpoint.into_encoder()?;
    let dataset = load_dataset(&args.labels, &args.features)?;
    let indices = if args.split == "all" && dataset.len() < 3 {
        (0..dataset.len()).collect()
    } else {
        let splits = make_splits(dataset.len(), DEFAULT_SPLIT_RATIOS, seed)?;
        split_of(&splits, &args.split, dataset.len())?
    };
    if indices.len() < 2 {
        return Err(MaclError::Metric(format!(
            "split `{}` holds {} samples; need at least 2",
            args.split,
            indices.len()
        )));
    }
    let (features, labels) = dataset.select(&indices);
    let embeddings = encoder.encode(&features)?;
    let report = evaluate_all(&embeddings, &labels, args.k_map, args.k_ndcg)?;
    println!("{}", report.to_json());
    Ok(())
}

fn cmd_gradcheck(trials: u64, seed: u64, tolerance: f64) -> Result<(), MaclError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x6AD0_0000_0000_0003);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let batch_size = rng.gen_range(3..=16);
        let dim = rng.gen_range(2..=8);
        let num_labels = rng.gen_range(2..=5);
        let batch = random_batch(seed.wrapping_add(trial), batch_size, dim, num_labels);
        let stats = random_stats(seed.wrapping_add(trial) ^ 0xF00D, 80, num_labels);
        let hyper = LossHyperparams::default();
        for anchor in 0..batch.len() {
            let analytic = analytic_gradient(&batch, Some(&stats), &hyper, anchor)?;
            if analytic.all_empty {
                continue;
            }
            let fd = finite_difference_gradient(&batch, Some(&stats), &hyper, anchor, 1e-5)?;
            for (g, f) in analytic.total.iter().zip(&fd) {
                let err = (g - f).abs() / f.abs().max(1e-9);
                worst = worst.max(err);
            }
        }
    }
    println!("gradcheck: {trials} trials, max relative error {worst:.3e}");
    if worst > tolerance {
        return Err(MaclError::Gradient(format!(
            "max relative error {worst:.3e} exceeds tolerance {tolerance:.1e}"
        )));
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), MaclError> {
    if args.values.is_empty() {
        return Err(MaclError::Config("sweep needs at least one value".into()));
    }
    let base = resolve_run(args.config.as_deref(), &args.overrides)?;
    let dataset = load_dataset(&args.labels, &args.features)?;
    let splits = make_splits(dataset.len(), DEFAULT_SPLIT_RATIOS, base.config.seed)?;
    let (train_features, train_labels) = dataset.select(&splits.train);
    let eval_split = if splits.test.len() >= 2 { &splits.test } else { &splits.train };
    let (eval_features, eval_labels) = dataset.select(eval_split);
    let stats = CorpusLabelStats::build(&train_labels)?;
    let spec = EncoderSpec {
        input_dim: dataset.feature_dim(),
        hidden_dim: base.hidden_dim,
        output_dim: base.embedding_dim,
    };

    let run_one = |config: &TrainConfig| -> Result<(f64, macl::metrics::MetricReport), MaclError> {
        let state = train(&train_features, &train_labels, &stats, spec.clone(), config)?;
        let encoder = state.encoder;
        let embeddings = encoder.encode(&eval_features)?;
        let report = evaluate_all(&embeddings, &eval_labels, DEFAULT_K_MAP, DEFAULT_K_NDCG)?;
        Ok((state.loss_curve.last().copied().unwrap_or(f64::NAN), report))
    };

    println!("param,value,final_loss,map_sim_at_k,ndcg_sim_at_k,map_easy,map_medium,map_hard,ndcg_jaccard_at_k,wap_at_k");
    for &value in &args.values {
        let mut config = base.config.clone();
        match args.param.as_str() {
            "alpha" => config.loss.alpha = value,
            "beta" => config.loss.beta = value,
            "tau" => config.loss.tau = value,
            "lr" => config.learning_rate = value,
            other => {
                return Err(MaclError::Config(format!(
                    "unknown sweep parameter `{other}`; expected alpha, beta, tau, or lr"
                )))
            }
        }
        let (loss, r) = run_one(&config)?;
        println!(
            "{},{},{:.6},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            args.param,
            value,
            loss,
            r.map_sim_at_k,
            r.ndcg_sim_at_k,
            r.map_easy,
            r.map_medium,
            r.map_hard,
            r.ndcg_jaccard_at_k,
            r.wap_at_k
        );
    }

    // Reference comparison at the base settings: adaptive vs uniform
    // label-wise loss.
    for variant in [LossVariant::Macl, LossVariant::MulSupCon] {
        let mut config = base.config.clone();
        config.loss.variant = variant;
        let (loss, r) = run_one(&config)?;
        eprintln!(
            "baseline {:?}: final_loss {:.6}, map_sim_at_k {:.4}, ndcg_jaccard_at_k {:.4}",
            variant, loss, r.map_sim_at_k, r.ndcg_jaccard_at_k
        );
    }
    Ok(())
}

fn cmd_synth(spec_path: &Path, out_prefix: &str) -> Result<(), MaclError> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| MaclError::io(spec_path.display().to_string(), e))?;
    let spec: SyntheticSpec = serde_json::from_str(&text)
        .map_err(|e| MaclError::Config(format!("generator spec parse failed: {e}")))?;
    let dataset = generate_synthetic(&spec)?;
    let labels_path = PathBuf::from(format!("{out_prefix}.labels.csv"));
    let features_path = PathBuf::from(format!("{out_prefix}.features.csv"));
    save_dataset(&dataset, &labels_path, &features_path)?;
    eprintln!(
        "wrote {} samples to {} and {}",
        dataset.len(),
        labels_path.display(),
        features_path.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), MaclError> {
    match &cli.command {
        Command::Stats { labels } => cmd_stats(labels),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck {
            trials,
            seed,
            tolerance,
        } => cmd_gradcheck(*trials, *seed, *tolerance),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Synth { spec, out_prefix } => cmd_synth(spec, out_prefix),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                MaclError::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
