//! End-to-end training behavior: chance-level floors, the balanced-task
//! regression anchor, checkpoint determinism, and evaluation consistency.

use reslt_core::data::{eval_split, longtail_counts, synth_gaussian, SplitMode};
use reslt_core::model::{predict, save_checkpoint, VariantConfig};
use reslt_core::report::evaluate;
use reslt_core::schedule::Schedule;
use reslt_core::trainer::{metrics_csv, train, TrainConfig, VariantKind};

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 64,
        hidden_dims: vec![16],
        feature_width: 8,
        schedule: Schedule::WarmupStep {
            warmup_epochs: 2,
            milestones: vec![],
            decay: 0.1,
        },
        ..TrainConfig::desk_preset()
    }
}

/// With zero class separation the classes are indistinguishable; a trained
/// model can do no better than chance on the balanced test set.
#[test]
fn zero_separation_trains_to_chance() {
    let counts = [60u32, 40, 25, 15];
    let pair = synth_gaussian(8, &counts, 0.0, 100, 3).unwrap();
    let mut config = quick_config(10);
    config.variant = VariantKind::CrossEntropy;
    config.seed = 5;
    let outcome = train(&pair.train, &pair.test, &config).unwrap();
    let acc = outcome.final_report.acc_all;
    assert!((acc - 0.25).abs() <= 0.05, "accuracy {acc} should be ~1/K");
}

/// Regression anchor: a balanced, well-separated nine-class task trained
/// with plain cross-entropy clears 95% test accuracy.
#[test]
fn separated_balanced_task_exceeds_95_percent() {
    let pair = synth_gaussian(16, &[100; 9], 6.0, 50, 7).unwrap();
    let mut config = TrainConfig::desk_preset();
    config.epochs = 30;
    config.schedule = Schedule::WarmupStep {
        warmup_epochs: 2,
        milestones: vec![20],
        decay: 0.1,
    };
    config.variant = VariantKind::CrossEntropy;
    config.seed = 2;
    let outcome = train(&pair.train, &pair.test, &config).unwrap();
    assert!(
        outcome.final_report.acc_all > 0.95,
        "accuracy {}",
        outcome.final_report.acc_all
    );
}

#[test]
fn checkpoints_and_metrics_are_bit_identical_across_runs() {
    let counts = longtail_counts(60, 5, 0.1).unwrap();
    let pair = synth_gaussian(6, &counts, 3.0, 20, 13).unwrap();
    let config = quick_config(4);

    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let outcome = train(&pair.train, &pair.test, &config).unwrap();
        let path = dir.path().join(format!("{tag}.rltm"));
        save_checkpoint(&outcome.model, &path).unwrap();
        (std::fs::read(&path).unwrap(), metrics_csv(&outcome.history))
    };
    let (bytes_a, csv_a) = run("a");
    let (bytes_b, csv_b) = run("b");
    assert_eq!(bytes_a, bytes_b);
    assert_eq!(csv_a, csv_b);
}

/// Fused prediction with zeroed residual branches equals the main branch's
/// solo prediction, and evaluation scores agree with an explicit
/// confusion-matrix count.
#[test]
fn evaluation_matches_explicit_counts_and_fusion_identity() {
    let counts = longtail_counts(40, 6, 0.1).unwrap();
    let pair = synth_gaussian(5, &counts, 3.0, 25, 23).unwrap();
    let mut config = quick_config(3);
    config.groups = 3;
    config.seed = 31;
    let outcome = train(&pair.train, &pair.test, &config).unwrap();

    let variant = VariantConfig::reslt();
    let split = eval_split(pair.train.class_counts(), SplitMode::FixedFractions);
    let report = evaluate(&outcome.model, &pair.test, &split, &variant).unwrap();

    // Explicit count oracle over the whole test set.
    let indices: Vec<usize> = (0..pair.test.len()).collect();
    let (x, labels) = pair.test.batch(&indices);
    let preds = predict(&outcome.model, &x, &variant).unwrap();
    let k = pair.test.num_classes();
    let mut correct = vec![0u64; k];
    let mut total = vec![0u64; k];
    for (p, l) in preds.iter().zip(&labels) {
        total[*l] += 1;
        if p == l {
            correct[*l] += 1;
        }
    }
    let acc_all = correct.iter().sum::<u64>() as f64 / total.iter().sum::<u64>() as f64;
    assert_eq!(report.acc_all, acc_all);
    for c in 0..k {
        assert_eq!(report.per_class_acc[c], correct[c] as f64 / total[c] as f64);
    }

    // Split accuracies recombine into the overall count.
    let split_correct = |classes: &[usize]| classes.iter().map(|&c| correct[c]).sum::<u64>();
    let split_total = |classes: &[usize]| classes.iter().map(|&c| total[c]).sum::<u64>();
    let recombined = split_correct(&split.many) + split_correct(&split.medium) + split_correct(&split.few);
    assert_eq!(recombined, correct.iter().sum::<u64>());
    for (acc, classes) in [
        (report.acc_many, &split.many),
        (report.acc_medium, &split.medium),
        (report.acc_few, &split.few),
    ] {
        let expected = split_correct(classes) as f64 / split_total(classes) as f64;
        assert_eq!(acc.unwrap(), expected);
    }

    // Fusion identity at the prediction level.
    let mut stripped = outcome.model.clone();
    stripped.zero_residual_branches();
    let fused_pred = predict(&stripped, &x, &variant).unwrap();
    let main_only = VariantConfig {
        shortcut: false,
        ..variant
    };
    let main_pred = predict(&stripped, &x, &main_only).unwrap();
    assert_eq!(fused_pred, main_pred);
}

/// Hand-built models with known behavior give exact accuracies: an identity
/// pipeline over one-hot features is a perfect predictor, a zeroed
/// classifier always predicts class 0.
#[test]
fn perfect_and_constant_predictors_score_exactly() {
    use reslt_core::model::{ModelDims, ResLTModel};
    use reslt_core::tensor::Tensor2D;

    let k = 4;
    let per_class = 5;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for class in 0..k as u32 {
        for _ in 0..per_class {
            let mut row = vec![0.0f32; k];
            row[class as usize] = 1.0;
            features.extend(row);
            labels.push(class);
        }
    }
    let test =
        reslt_core::data::LongTailDataset::from_sorted_parts(features, labels, k).unwrap();
    let split = eval_split(test.class_counts(), SplitMode::FixedFractions);

    let dims = ModelDims {
        input: k,
        hidden: vec![],
        feature: k,
        classes: k,
    };
    let mut model = ResLTModel::init(dims, 3, 1).unwrap();
    model.backbone.layers[0].weight.tensor = Tensor2D::identity(k);
    model.backbone.layers[0].bias.tensor = Tensor2D::zeros(1, k);
    model.head.branch_transforms[0].weight.tensor = Tensor2D::identity(k);
    model.head.branch_transforms[0].bias.tensor = Tensor2D::zeros(1, k);
    model.zero_residual_branches();
    model.head.classifier.tensor = Tensor2D::identity(k);

    let report = evaluate(&model, &test, &split, &VariantConfig::reslt()).unwrap();
    assert_eq!(report.acc_all, 1.0);
    assert!(report.per_class_acc.iter().all(|&a| a == 1.0));
    assert!(report.per_branch[0].acc_all == 1.0);

    // Zero classifier: logits are all zero, ties resolve to class 0.
    model.head.classifier.tensor = Tensor2D::zeros(k, k);
    let report = evaluate(&model, &test, &split, &VariantConfig::reslt()).unwrap();
    assert_eq!(report.acc_all, 1.0 / k as f64);
    assert_eq!(report.per_class_acc[0], 1.0);
    assert!(report.per_class_acc[1..].iter().all(|&a| a == 0.0));
}

/// Threshold-mode evaluation with no medium or few classes reports NA.
#[test]
fn empty_splits_evaluate_to_na() {
    let pair = synth_gaussian(4, &[150, 140, 120], 3.0, 10, 41).unwrap();
    let mut config = quick_config(2);
    config.split_mode = SplitMode::Threshold {
        many_above: 100,
        few_below: 20,
    };
    config.variant = VariantKind::CrossEntropy;
    let outcome = train(&pair.train, &pair.test, &config).unwrap();
    assert!(outcome.final_report.acc_many.is_some());
    assert!(outcome.final_report.acc_medium.is_none());
    assert!(outcome.final_report.acc_few.is_none());
    let last = outcome.history.last().unwrap();
    assert!(last.test_acc_medium.is_none());
}
