//! `reslt` — reproducible long-tailed classification experiments.
//!
//! Subcommands: `make-data` (synthesize or ingest a dataset), `train` (one
//! run: checkpoint + metrics + report + manifest), `gradcheck` (verify the
//! full objective against finite differences), `ablate` (paired-seed
//! variant comparison).
//!
//! Exit codes: 0 success, 1 failed check or internal error, 2 usage or
//! parameter error, 3 missing input file, 4 training divergence.

mod manifest;

use clap::{Args, Parser, Subcommand};
use manifest::{data_ref, RunManifest};
use reslt_core::data::{
    load_dataset, load_idx, longtail_counts, nested_sample_masks, save_dataset, subsample_longtail,
    synth_gaussian, LongTailDataset, SplitMode,
};
use reslt_core::gradcheck::{grad_check, EvalMode};
use reslt_core::loss::total_loss;
use reslt_core::model::{save_checkpoint, ModelDims, ResLTModel};
use reslt_core::report::{emit_report, ReportFormat};
use reslt_core::rng::derive_rng;
use reslt_core::schedule::Schedule;
use reslt_core::tape::Tape;
use reslt_core::tensor::Tensor2D;
use reslt_core::trainer::{
    ablation_csv, run_ablation_suite, train, write_metrics_csv, TrainConfig, VariantKind,
};
use reslt_core::Error as CoreError;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_MISSING_INPUT: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn missing(path: &Path) -> Self {
        CliError {
            code: EXIT_MISSING_INPUT,
            message: format!("input file not found: {}", path.display()),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        let code = match &err {
            CoreError::Parameter(_) | CoreError::Capacity { .. } => EXIT_USAGE,
            CoreError::Diverged { .. } => EXIT_DIVERGED,
            _ => EXIT_FAILURE,
        };
        CliError {
            code,
            message: err.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "reslt", version, about = "Residual-fusion long-tailed classification lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a long-tailed training set and a balanced test set
    MakeData(MakeDataArgs),
    /// Train one model and write checkpoint, metrics, report, and manifest
    Train(TrainArgs),
    /// Check analytic gradients of the full objective against finite differences
    Gradcheck(GradcheckArgs),
    /// Train the variant suite under paired seeds and tabulate accuracies
    Ablate(AblateArgs),
}

#[derive(Args)]
struct MakeDataArgs {
    /// Draw a synthetic Gaussian-mixture task
    #[arg(long)]
    synth: bool,
    /// Number of classes (synthetic mode)
    #[arg(long)]
    k: Option<usize>,
    /// Feature dimensionality (synthetic mode)
    #[arg(long)]
    dims: Option<usize>,
    /// Most-frequent class size
    #[arg(long)]
    nmax: Option<u32>,
    /// Imbalance factor in (0, 1]
    #[arg(long)]
    beta: Option<f64>,
    /// Class-mean separation (synthetic mode)
    #[arg(long)]
    sep: Option<f64>,
    /// Balanced test-set size per class
    #[arg(long, default_value_t = 200)]
    test_per_class: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// IDX3 image file (ingestion mode)
    #[arg(long)]
    idx_images: Option<PathBuf>,
    /// IDX1 label file (ingestion mode)
    #[arg(long)]
    idx_labels: Option<PathBuf>,
    /// Output directory (default: runs/<timestamp>-s<seed>)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file mirroring the training config fields; flags override
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named preset: "desk" (60 epochs) or "long" (200 epochs)
    #[arg(long)]
    preset: Option<String>,
    /// Experiment arm: reslt, no_specialization, no_shortcut, baseline1,
    /// baseline2, baseline3, ce, disjoint_plus_all
    #[arg(long)]
    variant: Option<String>,
    /// Branch-loss weight in [0, 1]
    #[arg(long, value_parser = parse_alpha)]
    alpha: Option<f64>,
    /// Number of branch groups
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Base learning rate
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden layer widths, comma separated (empty string for none)
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Trunk feature width
    #[arg(long)]
    feature_width: Option<usize>,
    /// Schedule kind: warmup_step or cosine
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    /// Decay epochs, comma separated
    #[arg(long, value_delimiter = ',')]
    milestones: Option<Vec<usize>>,
    /// Multiplier applied at each milestone
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    cosine_start: Option<f64>,
    #[arg(long)]
    cosine_end: Option<f64>,
    /// Split mode: fixed or threshold
    #[arg(long)]
    split_mode: Option<String>,
    /// Threshold-mode many-shot lower bound (exclusive)
    #[arg(long)]
    many_above: Option<u32>,
    /// Threshold-mode few-shot upper bound (exclusive)
    #[arg(long)]
    few_below: Option<u32>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset file (RLTD)
    #[arg(long)]
    train_file: PathBuf,
    /// Balanced test dataset file (RLTD)
    #[arg(long)]
    test_file: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory (default: runs/<timestamp>-s<seed>)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    input_dim: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [16usize])]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 12)]
    feature_width: usize,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 3)]
    groups: usize,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    /// Branch-loss weights to test, comma separated
    #[arg(long, value_delimiter = ',', value_parser = parse_alpha, default_values_t = [0.0, 0.5, 0.995, 1.0])]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-3)]
    threshold: f64,
    /// Seed for both the weights and the probe batch. Finite differences
    /// report spurious errors when a ReLU pre-activation sits within epsilon
    /// of zero; the default is chosen clear of that for the default geometry.
    #[arg(long, default_value_t = 13)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    train_file: PathBuf,
    #[arg(long)]
    test_file: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Paired seeds, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    seeds: Vec<u64>,
    /// Variants to run (default: the full ablation set)
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Worker threads for independent runs
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Output directory (default: runs/<timestamp>-s<first seed>)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("alpha must be in [0, 1], got {v}"))
    }
}

/// Partial config file; every field optional, unknown fields rejected.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    alpha: Option<f64>,
    groups: Option<usize>,
    variant: Option<VariantKind>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    base_lr: Option<f64>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    schedule: Option<Schedule>,
    seed: Option<u64>,
    hidden_dims: Option<Vec<usize>>,
    feature_width: Option<usize>,
    split_mode: Option<SplitMode>,
}

impl ConfigArgs {
    /// preset -> config file -> flags, later sources winning.
    fn resolve(&self) -> CliResult<TrainConfig> {
        let mut config = match self.preset.as_deref() {
            None | Some("desk") => TrainConfig::desk_preset(),
            Some("long") => TrainConfig::long_preset(),
            Some(other) => return Err(CliError::usage(format!("unknown preset {other:?}"))),
        };

        if let Some(path) = &self.config {
            if !path.exists() {
                return Err(CliError::missing(path));
            }
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
            let file: ConfigFile = serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("bad config file {}: {e}", path.display())))?;
            if let Some(v) = file.alpha {
                config.alpha = v;
            }
            if let Some(v) = file.groups {
                config.groups = v;
            }
            if let Some(v) = file.variant {
                config.variant = v;
            }
            if let Some(v) = file.epochs {
                config.epochs = v;
            }
            if let Some(v) = file.batch_size {
                config.batch_size = v;
            }
            if let Some(v) = file.base_lr {
                config.base_lr = v;
            }
            if let Some(v) = file.momentum {
                config.momentum = v;
            }
            if let Some(v) = file.weight_decay {
                config.weight_decay = v;
            }
            if let Some(v) = file.schedule {
                config.schedule = v;
            }
            if let Some(v) = file.seed {
                config.seed = v;
            }
            if let Some(v) = file.hidden_dims {
                config.hidden_dims = v;
            }
            if let Some(v) = file.feature_width {
                config.feature_width = v;
            }
            if let Some(v) = file.split_mode {
                config.split_mode = v;
            }
        }

        if let Some(v) = &self.variant {
            config.variant = VariantKind::parse_flexible(v).map_err(CliError::from)?;
        }
        if let Some(v) = self.alpha {
            config.alpha = v;
        }
        if let Some(v) = self.groups {
            config.groups = v;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.lr {
            config.base_lr = v;
        }
        if let Some(v) = self.momentum {
            config.momentum = v;
        }
        if let Some(v) = self.weight_decay {
            config.weight_decay = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = &self.hidden {
            config.hidden_dims = v.clone();
        }
        if let Some(v) = self.feature_width {
            config.feature_width = v;
        }

        match self.schedule.as_deref() {
            None => {}
            Some("warmup_step") => {
                config.schedule = Schedule::WarmupStep {
                    warmup_epochs: 5,
                    milestones: vec![],
                    decay: 0.1,
                }
            }
            Some("cosine") => {
                config.schedule = Schedule::Cosine {
                    start: config.base_lr,
                    end: 0.0,
                }
            }
            Some(other) => return Err(CliError::usage(format!("unknown schedule {other:?}"))),
        }
        if let Schedule::WarmupStep {
            warmup_epochs,
            milestones,
            decay,
        } = &mut config.schedule
        {
            if let Some(v) = self.warmup_epochs {
                *warmup_epochs = v;
            }
            if let Some(v) = &self.milestones {
                *milestones = v.clone();
            }
            if let Some(v) = self.decay {
                *decay = v;
            }
        }
        if let Schedule::Cosine { start, end } = &mut config.schedule {
            if let Some(v) = self.cosine_start {
                *start = v;
            }
            if let Some(v) = self.cosine_end {
                *end = v;
            }
        }

        match self.split_mode.as_deref() {
            None => {}
            Some("fixed") | Some("fixed_fractions") => config.split_mode = SplitMode::FixedFractions,
            Some("threshold") => {
                config.split_mode = SplitMode::Threshold {
                    many_above: self.many_above.unwrap_or(100),
                    few_below: self.few_below.unwrap_or(20),
                }
            }
            Some(other) => return Err(CliError::usage(format!("unknown split mode {other:?}"))),
        }
        if let Schedule::WarmupStep { .. } = config.schedule {}
        if let SplitMode::Threshold {
            many_above,
            few_below,
        } = &mut config.split_mode
        {
            if let Some(v) = self.many_above {
                *many_above = v;
            }
            if let Some(v) = self.few_below {
                *few_below = v;
            }
        }

        config.validate().map_err(CliError::from)?;
        Ok(config)
    }
}

fn default_out_dir(seed: u64) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    PathBuf::from("runs").join(format!("{stamp}-s{seed}"))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError {
        code: EXIT_FAILURE,
        message: format!("cannot create {}: {e}", dir.display()),
    })
}

fn load_existing(path: &Path) -> CliResult<LongTailDataset> {
    if !path.exists() {
        return Err(CliError::missing(path));
    }
    Ok(load_dataset(path)?)
}

fn cmd_make_data(args: MakeDataArgs) -> CliResult<u8> {
    let out_dir = args.out_dir.clone().unwrap_or_else(|| default_out_dir(args.seed));
    ensure_dir(&out_dir)?;

    let (train, test) = if args.synth {
        let need = |name: &str, missing: bool| -> CliResult<()> {
            if missing {
                Err(CliError::usage(format!("--{name} is required with --synth")))
            } else {
                Ok(())
            }
        };
        need("k", args.k.is_none())?;
        need("dims", args.dims.is_none())?;
        need("nmax", args.nmax.is_none())?;
        need("beta", args.beta.is_none())?;
        need("sep", args.sep.is_none())?;
        let counts = longtail_counts(args.nmax.unwrap(), args.k.unwrap(), args.beta.unwrap())?;
        let pair = synth_gaussian(
            args.dims.unwrap(),
            &counts,
            args.sep.unwrap(),
            args.test_per_class,
            args.seed,
        )?;
        (pair.train, pair.test)
    } else if let (Some(images), Some(labels)) = (&args.idx_images, &args.idx_labels) {
        if !images.exists() {
            return Err(CliError::missing(images));
        }
        if !labels.exists() {
            return Err(CliError::missing(labels));
        }
        let full = load_idx(images, labels)?;
        split_idx_dataset(&full, &args)?
    } else {
        return Err(CliError::usage(
            "either --synth or --idx-images/--idx-labels is required",
        ));
    };

    let train_path = out_dir.join("train.rltd");
    let test_path = out_dir.join("test.rltd");
    save_dataset(&train, &train_path)?;
    save_dataset(&test, &test_path)?;

    println!("classes: {}", train.num_classes());
    println!("counts: {:?}", train.class_counts());
    println!("beta: {}", train.beta());
    println!("train: {} ({} samples)", train_path.display(), train.len());
    println!("test: {} ({} samples)", test_path.display(), test.len());
    Ok(0)
}

/// Reserves a balanced test set out of an ingested dataset, then subsamples
/// the remainder to the requested long-tail profile (when given).
fn split_idx_dataset(
    full: &LongTailDataset,
    args: &MakeDataArgs,
) -> CliResult<(LongTailDataset, LongTailDataset)> {
    use rand::seq::SliceRandom;
    let k = full.num_classes();
    let dim = full.dim();
    let mut rng = derive_rng(args.seed, "idx/test-split");

    let mut test_features = Vec::new();
    let mut test_labels = Vec::new();
    let mut pool_features = Vec::new();
    let mut pool_labels = Vec::new();
    for class in 0..k as u32 {
        let mut rows: Vec<usize> = full
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        rows.shuffle(&mut rng);
        let reserve = (args.test_per_class as usize).min(rows.len().saturating_sub(1));
        let (test_rows, pool_rows) = rows.split_at(reserve);
        let mut test_rows = test_rows.to_vec();
        let mut pool_rows = pool_rows.to_vec();
        test_rows.sort_unstable();
        pool_rows.sort_unstable();
        for &r in &test_rows {
            test_features.extend_from_slice(full.feature_row(r));
            test_labels.push(class);
        }
        for &r in &pool_rows {
            pool_features.extend_from_slice(full.feature_row(r));
            pool_labels.push(class);
        }
    }
    let pool = LongTailDataset::from_sorted_parts(pool_features, pool_labels, dim)?;
    let test = LongTailDataset::from_unsorted_parts(test_features, test_labels, dim)?;

    let train = match (args.nmax, args.beta) {
        (Some(nmax), Some(beta)) => {
            let requested = longtail_counts(nmax, k, beta)?;
            subsample_longtail(&pool, &requested, args.seed)?
        }
        (None, None) => pool,
        _ => {
            return Err(CliError::usage(
                "--nmax and --beta must be given together in IDX mode",
            ))
        }
    };
    Ok((train, test))
}

fn cmd_train(args: TrainArgs) -> CliResult<u8> {
    let config = args.config.resolve()?;
    let train_set = load_existing(&args.train_file)?;
    let test_set = load_existing(&args.test_file)?;
    let out_dir = args.out_dir.clone().unwrap_or_else(|| default_out_dir(config.seed));
    ensure_dir(&out_dir)?;

    let outcome = train(&train_set, &test_set, &config)?;

    let checkpoint_path = out_dir.join("checkpoint.rltm");
    let metrics_path = out_dir.join("metrics.csv");
    let report_json = out_dir.join("report.json");
    let report_csv = out_dir.join("report.csv");
    save_checkpoint(&outcome.model, &checkpoint_path)?;
    write_metrics_csv(&outcome.history, &metrics_path)?;
    emit_report(&outcome.final_report, &report_json, ReportFormat::Json)?;
    emit_report(&outcome.final_report, &report_csv, ReportFormat::Csv)?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "train".to_string(),
        seed: config.seed,
        config: config.clone(),
        train_data: data_ref(&args.train_file)?,
        test_data: data_ref(&args.test_file)?,
        outputs: vec![
            checkpoint_path.display().to_string(),
            metrics_path.display().to_string(),
            report_json.display().to_string(),
            report_csv.display().to_string(),
        ],
    };
    manifest.write(&out_dir.join("manifest.json"))?;

    let report = &outcome.final_report;
    println!("variant: {}", config.variant);
    println!("acc_all: {:.4}", report.acc_all);
    println!(
        "acc_many/medium/few: {} / {} / {}",
        report.acc_many.map_or("NA".into(), |v| format!("{v:.4}")),
        report.acc_medium.map_or("NA".into(), |v| format!("{v:.4}")),
        report.acc_few.map_or("NA".into(), |v| format!("{v:.4}")),
    );
    println!("artifacts: {}", out_dir.display());
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> CliResult<u8> {
    if args.classes < 2 || args.groups < 1 || args.batch < 1 {
        return Err(CliError::usage("need at least 2 classes, 1 group, 1 sample"));
    }
    if args.classes < args.groups {
        return Err(CliError::usage("need at least as many classes as groups"));
    }
    let counts = longtail_counts(100, args.classes, 0.1)?;
    let assignment = if args.groups == 1 {
        reslt_core::data::GroupAssignment::single_group(args.classes)
    } else {
        reslt_core::data::partition_groups(&counts, args.groups)?
    };

    let mut rng = derive_rng(args.seed, "gradcheck/batch");
    use rand::Rng;
    let features = Tensor2D::from_values(
        args.batch,
        args.input_dim,
        (0..args.batch * args.input_dim)
            .map(|_| rng.gen_range(-1.5..1.5))
            .collect(),
    )
    .expect("batch shape");
    let labels: Vec<usize> = (0..args.batch).map(|_| rng.gen_range(0..args.classes)).collect();
    let masks = nested_sample_masks(&labels, &assignment);

    let dims = ModelDims {
        input: args.input_dim,
        hidden: args.hidden.clone(),
        feature: args.feature_width,
        classes: args.classes,
    };

    let mut worst = 0.0f64;
    for &alpha in &args.alphas {
        let mut model = ResLTModel::init(dims.clone(), args.groups, args.seed)?;
        let loss_fn = |model: &mut ResLTModel, mode: EvalMode| -> reslt_core::Result<f64> {
            use reslt_core::gradcheck::Parameterized;
            let mut tape = Tape::new();
            let x = tape.constant(features.clone());
            let graph = model.forward(&mut tape, x, true)?;
            let loss = total_loss(&mut tape, &graph.branch_logits, &labels, &masks, alpha)?;
            if mode == EvalMode::WithGradients {
                tape.backward(loss.total)?;
                tape.export_grads(&graph.bindings, &mut model.parameters_mut());
            }
            Ok(loss.breakdown.total)
        };
        let err = grad_check(&mut model, loss_fn, args.epsilon)?;
        println!("alpha {alpha}: max relative error {err:.3e}");
        worst = worst.max(err);
    }

    println!("max relative error: {worst:.3e} (threshold {})", args.threshold);
    if worst < args.threshold {
        println!("gradcheck: PASS");
        Ok(0)
    } else {
        println!("gradcheck: FAIL");
        Ok(EXIT_FAILURE)
    }
}

fn cmd_ablate(args: AblateArgs) -> CliResult<u8> {
    let config = args.config.resolve()?;
    let train_set = load_existing(&args.train_file)?;
    let test_set = load_existing(&args.test_file)?;
    if args.seeds.is_empty() {
        return Err(CliError::usage("need at least one seed"));
    }

    let variants: Vec<VariantKind> = match &args.variants {
        None => VariantKind::ABLATION_SET.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| VariantKind::parse_flexible(n).map_err(CliError::from))
            .collect::<CliResult<_>>()?,
    };

    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| default_out_dir(args.seeds[0]));
    ensure_dir(&out_dir)?;

    let table = run_ablation_suite(
        &train_set,
        &test_set,
        &config,
        &variants,
        &args.seeds,
        args.threads,
    )?;

    let csv_path = out_dir.join("ablation.csv");
    std::fs::write(&csv_path, ablation_csv(&table.rows)).map_err(|e| CliError {
        code: EXIT_FAILURE,
        message: format!("cannot write {}: {e}", csv_path.display()),
    })?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "ablate".to_string(),
        seed: args.seeds[0],
        config: config.clone(),
        train_data: data_ref(&args.train_file)?,
        test_data: data_ref(&args.test_file)?,
        outputs: vec![csv_path.display().to_string()],
    };
    manifest.write(&out_dir.join("manifest.json"))?;

    println!("{:<20} {:>5} {:>9} {:>8} {:>9} {:>8}", "variant", "seeds", "acc_all", "std", "acc_few", "std");
    for s in &table.summaries {
        println!(
            "{:<20} {:>5} {:>9.4} {:>8.4} {:>9} {:>8}",
            s.variant.to_string(),
            s.seeds,
            s.mean_acc_all,
            s.std_acc_all,
            s.mean_acc_few.map_or("NA".into(), |v| format!("{v:.4}")),
            s.std_acc_few.map_or("NA".into(), |v| format!("{v:.4}")),
        );
    }
    println!("rows: {} -> {}", table.rows.len(), csv_path.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeData(args) => cmd_make_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
