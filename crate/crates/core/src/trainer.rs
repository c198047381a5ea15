//! End-to-end training: uniform batch sampling, schedules, the variant zoo,
//! and paired-seed ablation runs.

use crate::data::{
    disjoint_sample_masks, eval_split, nested_sample_masks, EvalSplit, GroupAssignment,
    LongTailDataset, SplitMode,
};
use crate::error::{Error, Result};
use crate::loss::{baseline_loss, total_loss, TotalLoss};
use crate::model::{AssignmentScheme, ModelDims, ResLTModel, VariantConfig};
use crate::report::{evaluate, EvalReport};
use crate::rng::{derive_rng, derive_seed};
use crate::schedule::Schedule;
use crate::tape::Tape;
use crate::tensor::sgd_step;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Named experiment arms.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// Nested branches, additive shortcut, specialized transforms.
    Reslt,
    /// Same losses, one shared transform replicated across branches.
    NoSpecialization,
    /// Nested branch losses only; inference from the main branch.
    NoShortcut,
    /// Disjoint branches, elementwise-max fusion at inference.
    Baseline1,
    /// Disjoint branches, logit-sum fusion at inference.
    Baseline2,
    /// Disjoint branches, softmax-sum fusion at inference.
    Baseline3,
    /// Plain cross-entropy: one branch group, one transform.
    CrossEntropy,
    /// Disjoint branch losses combined with the fused objective.
    DisjointPlusAll,
}

impl VariantKind {
    pub const ABLATION_SET: [VariantKind; 7] = [
        VariantKind::Reslt,
        VariantKind::NoSpecialization,
        VariantKind::NoShortcut,
        VariantKind::Baseline1,
        VariantKind::Baseline2,
        VariantKind::Baseline3,
        VariantKind::CrossEntropy,
    ];

    pub fn config(&self) -> VariantConfig {
        use crate::model::FusionRule::*;
        match self {
            VariantKind::Reslt | VariantKind::CrossEntropy => VariantConfig::reslt(),
            VariantKind::NoSpecialization => VariantConfig {
                specialization: false,
                ..VariantConfig::reslt()
            },
            VariantKind::NoShortcut => VariantConfig {
                shortcut: false,
                ..VariantConfig::reslt()
            },
            VariantKind::Baseline1 => VariantConfig {
                assignment: AssignmentScheme::Disjoint,
                shortcut: true,
                specialization: true,
                fusion_rule: ElementwiseMax,
            },
            VariantKind::Baseline2 => VariantConfig {
                assignment: AssignmentScheme::Disjoint,
                shortcut: true,
                specialization: true,
                fusion_rule: LogitSum,
            },
            VariantKind::Baseline3 => VariantConfig {
                assignment: AssignmentScheme::Disjoint,
                shortcut: true,
                specialization: true,
                fusion_rule: SoftmaxSum,
            },
            VariantKind::DisjointPlusAll => VariantConfig {
                assignment: AssignmentScheme::DisjointPlusAll,
                shortcut: true,
                specialization: true,
                fusion_rule: ResidualSum,
            },
        }
    }

    /// The plain cross-entropy arm collapses to a single branch group.
    pub fn effective_groups(&self, configured: usize) -> usize {
        match self {
            VariantKind::CrossEntropy => 1,
            _ => configured,
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            VariantKind::Reslt => "reslt",
            VariantKind::NoSpecialization => "no_specialization",
            VariantKind::NoShortcut => "no_shortcut",
            VariantKind::Baseline1 => "baseline1",
            VariantKind::Baseline2 => "baseline2",
            VariantKind::Baseline3 => "baseline3",
            VariantKind::CrossEntropy => "ce",
            VariantKind::DisjointPlusAll => "disjoint_plus_all",
        };
        f.write_str(name)
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reslt" => Ok(VariantKind::Reslt),
            "no_specialization" => Ok(VariantKind::NoSpecialization),
            "no_shortcut" => Ok(VariantKind::NoShortcut),
            "baseline1" => Ok(VariantKind::Baseline1),
            "baseline2" => Ok(VariantKind::Baseline2),
            "baseline3" => Ok(VariantKind::Baseline3),
            "ce" => Ok(VariantKind::CrossEntropy),
            "disjoint_plus_all" => Ok(VariantKind::DisjointPlusAll),
            other => Err(Error::parameter(format!("unknown variant {other:?}"))),
        }
    }
}

/// JSON-serializable variant names for config files; `ce` maps to
/// `cross_entropy` through serde's snake_case, so accept both.
impl VariantKind {
    pub fn parse_flexible(s: &str) -> Result<Self> {
        VariantKind::from_str(s).or_else(|_| match s {
            "cross_entropy" => Ok(VariantKind::CrossEntropy),
            other => Err(Error::parameter(format!("unknown variant {other:?}"))),
        })
    }
}

/// The complete description of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub groups: usize,
    pub variant: VariantKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    pub feature_width: usize,
    pub split_mode: SplitMode,
}

impl TrainConfig {
    /// 60-epoch preset sized for the synthetic task: warmup 5, decay 0.1 at
    /// epochs 45 and 55.
    pub fn desk_preset() -> Self {
        TrainConfig {
            alpha: 0.995,
            groups: 3,
            variant: VariantKind::Reslt,
            epochs: 60,
            batch_size: 128,
            base_lr: 0.03,
            momentum: 0.9,
            weight_decay: 0.0,
            schedule: Schedule::WarmupStep {
                warmup_epochs: 5,
                milestones: vec![45, 55],
                decay: 0.1,
            },
            seed: 1,
            hidden_dims: vec![32],
            feature_width: 16,
            split_mode: SplitMode::FixedFractions,
        }
    }

    /// The full-length 200-epoch recipe: initial rate 0.1 with warmup 5,
    /// decayed by 0.1 at epochs 160 and 180.
    pub fn long_preset() -> Self {
        TrainConfig {
            epochs: 200,
            base_lr: 0.1,
            schedule: Schedule::WarmupStep {
                warmup_epochs: 5,
                milestones: vec![160, 180],
                decay: 0.1,
            },
            ..TrainConfig::desk_preset()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::parameter(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.epochs < 1 {
            return Err(Error::parameter("epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::parameter("batch_size must be at least 1"));
        }
        if self.groups < 1 {
            return Err(Error::parameter("groups must be at least 1"));
        }
        if self.feature_width < 1 {
            return Err(Error::parameter("feature_width must be at least 1"));
        }
        if let Schedule::WarmupStep { milestones, .. } = &self.schedule {
            for pair in milestones.windows(2) {
                if pair[1] <= pair[0] {
                    return Err(Error::parameter("milestones must be strictly increasing"));
                }
            }
            if milestones.iter().any(|&m| m >= self.epochs) {
                return Err(Error::parameter("milestones must come before the last epoch"));
            }
        }
        Ok(())
    }
}

/// One row of the metrics history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub fusion_loss: f64,
    pub branch_loss_sum: f64,
    pub test_acc_all: f64,
    pub test_acc_many: Option<f64>,
    pub test_acc_medium: Option<f64>,
    pub test_acc_few: Option<f64>,
}

/// A finished run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: ResLTModel,
    pub history: Vec<EpochRecord>,
    pub final_report: EvalReport,
    pub assignment: GroupAssignment,
    pub split: EvalSplit,
}

fn opt_field(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

pub const METRICS_HEADER: &str =
    "epoch,lr,train_loss,fusion_loss,branch_loss_sum,test_acc_all,test_acc_many,test_acc_medium,test_acc_few";

pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.lr,
            r.train_loss,
            r.fusion_loss,
            r.branch_loss_sum,
            r.test_acc_all,
            opt_field(r.test_acc_many),
            opt_field(r.test_acc_medium),
            opt_field(r.test_acc_few),
        ));
    }
    out
}

pub fn write_metrics_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(history)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reorders the epoch's sample indices in place; every epoch visits every
/// sample exactly once.
fn shuffle_epoch(indices: &mut [usize], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::seq::SliceRandom;
    indices.shuffle(rng);
}

/// Builds the group assignment a config implies for a dataset.
pub fn group_assignment_for(train: &LongTailDataset, config: &TrainConfig) -> Result<GroupAssignment> {
    let groups = config.variant.effective_groups(config.groups);
    if groups == 1 {
        Ok(GroupAssignment::single_group(train.num_classes()))
    } else {
        crate::data::partition_groups(train.class_counts(), groups)
    }
}

/// Trains one model. Deterministic given (datasets, config): per-epoch
/// shuffles, weight init, and batch order all derive from `config.seed`.
pub fn train(
    train_set: &LongTailDataset,
    test_set: &LongTailDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.dim() != test_set.dim() {
        return Err(Error::parameter("train and test dimensionality differ"));
    }
    if test_set.num_classes() > train_set.num_classes() {
        return Err(Error::parameter("test set has classes the train set lacks"));
    }

    let variant = config.variant.config();
    let assignment = group_assignment_for(train_set, config)?;
    let split = eval_split(train_set.class_counts(), config.split_mode);

    // Removing the shortcut removes the fused objective: only the branch
    // losses train the network, which is the alpha = 1 endpoint.
    let alpha = if variant.shortcut { config.alpha } else { 1.0 };

    let dims = ModelDims {
        input: train_set.dim(),
        hidden: config.hidden_dims.clone(),
        feature: config.feature_width,
        classes: train_set.num_classes(),
    };
    let mut model = ResLTModel::init(dims, assignment.num_groups, derive_seed(config.seed, "init"))?;

    let n = train_set.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let mut shuffle_rng = derive_rng(config.seed, "shuffle");
    let mut indices: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        shuffle_epoch(&mut indices, &mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut fusion_sum = 0.0;
        let mut branch_sum = 0.0;
        let epoch_lr = config
            .schedule
            .lr_at(config.base_lr, epoch, 0, steps_per_epoch, config.epochs);

        for (step, chunk) in indices.chunks(config.batch_size).enumerate() {
            let (x, labels) = train_set.batch(chunk);
            let masks = match variant.assignment {
                AssignmentScheme::Nested => nested_sample_masks(&labels, &assignment),
                AssignmentScheme::Disjoint | AssignmentScheme::DisjointPlusAll => {
                    disjoint_sample_masks(&labels, &assignment)
                }
            };

            let mut tape = Tape::new();
            let input = tape.constant(x);
            let graph = model.forward(&mut tape, input, variant.specialization)?;
            let loss: TotalLoss = match variant.assignment {
                AssignmentScheme::Disjoint => {
                    baseline_loss(&mut tape, &graph.branch_logits, &labels, &masks)?
                }
                _ => total_loss(&mut tape, &graph.branch_logits, &labels, &masks, alpha)?,
            };

            if !loss.breakdown.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: loss.breakdown.total,
                });
            }

            tape.backward(loss.total)?;
            {
                use crate::gradcheck::Parameterized;
                let mut params = model.parameters_mut();
                tape.export_grads(&graph.bindings, &mut params);
                if config.weight_decay > 0.0 {
                    for p in params.iter_mut() {
                        p.tensor.add_scaled_values_to_grad(config.weight_decay);
                    }
                }
                let lr = config.schedule.lr_at(
                    config.base_lr,
                    epoch,
                    step,
                    steps_per_epoch,
                    config.epochs,
                );
                sgd_step(&mut params, lr, config.momentum);
            }

            let weight = chunk.len() as f64 / n as f64;
            loss_sum += loss.breakdown.total * weight;
            fusion_sum += loss.breakdown.fusion * weight;
            branch_sum += loss.breakdown.branch_terms.iter().sum::<f64>() * weight;
        }

        let report = evaluate(&model, test_set, &split, &variant)?;
        history.push(EpochRecord {
            epoch,
            lr: epoch_lr,
            train_loss: loss_sum,
            fusion_loss: fusion_sum,
            branch_loss_sum: branch_sum,
            test_acc_all: report.acc_all,
            test_acc_many: report.acc_many,
            test_acc_medium: report.acc_medium,
            test_acc_few: report.acc_few,
        });
    }

    let final_report = evaluate(&model, test_set, &split, &variant)?;
    Ok(TrainOutcome {
        model,
        history,
        final_report,
        assignment,
        split,
    })
}

/// One evaluated run inside an ablation table.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: VariantKind,
    pub seed: u64,
    pub report: EvalReport,
}

/// Mean and sample standard deviation per variant.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationSummary {
    pub variant: VariantKind,
    pub seeds: usize,
    pub mean_acc_all: f64,
    pub std_acc_all: f64,
    pub mean_acc_few: Option<f64>,
    pub std_acc_few: Option<f64>,
}

pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub summaries: Vec<AblationSummary>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every (variant, seed) pair under the shared base config. Seeds are
/// paired: each variant sees exactly the listed seeds. Runs may fan out over
/// `threads` workers; each run is fully isolated, so the output is identical
/// regardless of the worker count.
pub fn run_ablation_suite(
    train_set: &LongTailDataset,
    test_set: &LongTailDataset,
    base: &TrainConfig,
    variants: &[VariantKind],
    seeds: &[u64],
    threads: usize,
) -> Result<AblationTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::parameter("need at least one variant and one seed"));
    }
    let jobs: Vec<(VariantKind, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();

    let slots: Vec<Mutex<Option<Result<AblationRow>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let cursor = AtomicUsize::new(0);
    let workers = threads.max(1).min(jobs.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let (variant, seed) = jobs[i];
                let config = TrainConfig {
                    variant,
                    seed,
                    ..base.clone()
                };
                let row = train(train_set, test_set, &config).map(|outcome| AblationRow {
                    variant,
                    seed,
                    report: outcome.final_report,
                });
                *slots[i].lock().unwrap() = Some(row);
            });
        }
    });

    let mut rows = Vec::with_capacity(jobs.len());
    for slot in slots {
        rows.push(slot.into_inner().unwrap().expect("worker filled slot")?);
    }

    let mut summaries = Vec::new();
    for &variant in variants {
        let group: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == variant).collect();
        let (mean_all, std_all) =
            mean_std(&group.iter().map(|r| r.report.acc_all).collect::<Vec<_>>());
        let few: Option<Vec<f64>> = group.iter().map(|r| r.report.acc_few).collect();
        let (mean_few, std_few) = match few {
            Some(values) => {
                let (m, s) = mean_std(&values);
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        summaries.push(AblationSummary {
            variant,
            seeds: group.len(),
            mean_acc_all: mean_all,
            std_acc_all: std_all,
            mean_acc_few: mean_few,
            std_acc_few: std_few,
        });
    }
    Ok(AblationTable { rows, summaries })
}

pub const ABLATION_HEADER: &str = "variant,seed,acc_all,acc_many,acc_medium,acc_few";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant,
            r.seed,
            r.report.acc_all,
            opt_field(r.report.acc_many),
            opt_field(r.report.acc_medium),
            opt_field(r.report.acc_few),
        ));
    }
    out
}
