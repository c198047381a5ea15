//! Training objectives: the fused all-class loss, the nested per-branch
//! losses, their weighted combination, and the disjoint per-branch loss used
//! by the naive baselines.
//!
//! Branch terms are masked means over the samples each branch is
//! responsible for; an empty selection contributes exactly zero. Softmax in
//! every term spans all K classes: the classifier is shared, masks select
//! samples, never output classes.

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};

fn masked_in_counts(masks: &[Vec<bool>]) -> Vec<usize> {
    masks
        .iter()
        .map(|m| m.iter().filter(|&&b| b).count())
        .collect()
}

/// Scalar values of one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub fusion: f64,
    pub branch_terms: Vec<f64>,
    pub total: f64,
    pub masked_in_counts: Vec<usize>,
}

/// Node handles of a combined objective on a tape.
#[derive(Debug)]
pub struct TotalLoss {
    pub total: NodeId,
    pub fusion: NodeId,
    pub branch_terms: Vec<NodeId>,
    pub breakdown: LossBreakdown,
}

/// Cross-entropy of the summed branch logits against the targets, over the
/// whole batch.
pub fn fusion_loss(tape: &mut Tape, branch_logits: &[NodeId], targets: &[usize]) -> Result<NodeId> {
    let fused = tape.sum_nodes(branch_logits)?;
    let mask = vec![true; targets.len()];
    tape.softmax_cross_entropy(fused, targets, &mask)
}

/// Per-branch masked-mean cross-entropy terms; `masks[g]` selects the
/// samples branch g is trained on.
pub fn branch_loss(
    tape: &mut Tape,
    branch_logits: &[NodeId],
    targets: &[usize],
    masks: &[Vec<bool>],
) -> Result<Vec<NodeId>> {
    if branch_logits.len() != masks.len() {
        return Err(Error::parameter(format!(
            "{} branches but {} masks",
            branch_logits.len(),
            masks.len()
        )));
    }
    branch_logits
        .iter()
        .zip(masks)
        .map(|(&logits, mask)| tape.softmax_cross_entropy(logits, targets, mask))
        .collect()
}

/// The combined objective
/// total = (1 - alpha) * fusion + alpha * sum(branch terms),
/// with gradients flowing through both paths.
pub fn total_loss(
    tape: &mut Tape,
    branch_logits: &[NodeId],
    targets: &[usize],
    masks: &[Vec<bool>],
    alpha: f64,
) -> Result<TotalLoss> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::parameter(format!(
            "alpha must be in [0, 1], got {alpha}"
        )));
    }
    let fusion = fusion_loss(tape, branch_logits, targets)?;
    let terms = branch_loss(tape, branch_logits, targets, masks)?;
    let branch_sum = tape.sum_nodes(&terms)?;
    let scaled_fusion = tape.scale(fusion, 1.0 - alpha);
    let scaled_branch = tape.scale(branch_sum, alpha);
    let total = tape.add(scaled_fusion, scaled_branch)?;

    let breakdown = LossBreakdown {
        fusion: tape.scalar(fusion),
        branch_terms: terms.iter().map(|&t| tape.scalar(t)).collect(),
        total: tape.scalar(total),
        masked_in_counts: masked_in_counts(masks),
    };
    Ok(TotalLoss {
        total,
        fusion,
        branch_terms: terms,
        breakdown,
    })
}

/// Naive-baseline objective: each branch sees only its own group's samples,
/// and the total is the unweighted sum of the per-branch masked means. The
/// fused cross-entropy is still evaluated (forward only) for reporting; it
/// receives no gradient because it is not connected to the returned total.
pub fn baseline_loss(
    tape: &mut Tape,
    branch_logits: &[NodeId],
    targets: &[usize],
    disjoint_masks: &[Vec<bool>],
) -> Result<TotalLoss> {
    let fusion = fusion_loss(tape, branch_logits, targets)?;
    let terms = branch_loss(tape, branch_logits, targets, disjoint_masks)?;
    let total = tape.sum_nodes(&terms)?;
    let breakdown = LossBreakdown {
        fusion: tape.scalar(fusion),
        branch_terms: terms.iter().map(|&t| tape.scalar(t)).collect(),
        total: tape.scalar(total),
        masked_in_counts: masked_in_counts(disjoint_masks),
    };
    Ok(TotalLoss {
        total,
        fusion,
        branch_terms: terms,
        breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use crate::tensor::Tensor2D;
    use rand::Rng;

    fn random_logits(tape: &mut Tape, n: usize, k: usize, seed: u64) -> NodeId {
        let mut rng = derive_rng(seed, "loss/test");
        let t = Tensor2D::from_values(n, k, (0..n * k).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .unwrap();
        tape.constant(t)
    }

    #[test]
    fn fusion_loss_of_uniform_logits_is_ln_k() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor2D::zeros(3, 10));
        let b = tape.constant(Tensor2D::zeros(3, 10));
        let loss = fusion_loss(&mut tape, &[a, b], &[0, 5, 9]).unwrap();
        assert!((tape.scalar(loss) - (10.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn fusion_loss_with_zero_residuals_equals_plain_ce() {
        let mut tape = Tape::new();
        let main = random_logits(&mut tape, 4, 5, 1);
        let zero_a = tape.constant(Tensor2D::zeros(4, 5));
        let zero_b = tape.constant(Tensor2D::zeros(4, 5));
        let targets = [0, 2, 4, 1];
        let fused = fusion_loss(&mut tape, &[main, zero_a, zero_b], &targets).unwrap();
        let mask = vec![true; 4];
        let plain = tape.softmax_cross_entropy(main, &targets, &mask).unwrap();
        assert_eq!(tape.scalar(fused), tape.scalar(plain));
    }

    #[test]
    fn alpha_endpoints_are_exact() {
        let mut tape = Tape::new();
        let logits: Vec<NodeId> = (0..3).map(|g| random_logits(&mut tape, 5, 4, g)).collect();
        let targets = [0, 1, 2, 3, 0];
        let masks = vec![
            vec![true; 5],
            vec![true, false, true, false, true],
            vec![false, false, true, false, false],
        ];
        let at_zero = total_loss(&mut tape, &logits, &targets, &masks, 0.0).unwrap();
        assert_eq!(at_zero.breakdown.total, at_zero.breakdown.fusion);

        let at_one = total_loss(&mut tape, &logits, &targets, &masks, 1.0).unwrap();
        let sum: f64 = at_one.breakdown.branch_terms.iter().sum();
        assert_eq!(at_one.breakdown.total, sum);
    }

    #[test]
    fn total_is_affine_in_alpha() {
        let mut tape = Tape::new();
        let logits: Vec<NodeId> = (0..3).map(|g| random_logits(&mut tape, 6, 4, 10 + g)).collect();
        let targets = [0, 1, 2, 3, 0, 2];
        let masks = vec![
            vec![true; 6],
            vec![true, true, false, true, false, true],
            vec![false, true, false, false, false, true],
        ];
        let total_at = |tape: &mut Tape, a: f64| {
            total_loss(tape, &logits, &targets, &masks, a)
                .unwrap()
                .breakdown
                .total
        };
        let at0 = total_at(&mut tape, 0.0);
        let at1 = total_at(&mut tape, 1.0);
        for &alpha in &[0.25, 0.5, 0.75, 0.995] {
            let expected = (1.0 - alpha) * at0 + alpha * at1;
            let actual = total_at(&mut tape, alpha);
            assert!(
                (actual - expected).abs() < 1e-12,
                "alpha={alpha}: {actual} vs {expected}"
            );
        }
    }

    #[test]
    fn branch_terms_zero_iff_mask_empty() {
        let mut tape = Tape::new();
        let logits: Vec<NodeId> = (0..2).map(|g| random_logits(&mut tape, 3, 4, 20 + g)).collect();
        let masks = vec![vec![true; 3], vec![false; 3]];
        let result = total_loss(&mut tape, &logits, &[0, 1, 2], &masks, 0.5).unwrap();
        assert_eq!(result.breakdown.branch_terms[1], 0.0);
        assert_eq!(result.breakdown.masked_in_counts, vec![3, 0]);
        assert!(result.breakdown.branch_terms[0] != 0.0);
    }

    #[test]
    fn alpha_out_of_range_is_rejected() {
        let mut tape = Tape::new();
        let l = random_logits(&mut tape, 2, 3, 30);
        let err = total_loss(&mut tape, &[l], &[0, 1], &[vec![true, true]], 1.2).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn baseline_with_one_group_is_plain_ce() {
        let mut tape = Tape::new();
        let l = random_logits(&mut tape, 4, 3, 40);
        let targets = [0, 1, 2, 1];
        let result = baseline_loss(&mut tape, &[l], &targets, &[vec![true; 4]]).unwrap();
        let plain = tape.softmax_cross_entropy(l, &targets, &[true; 4]).unwrap();
        assert_eq!(result.breakdown.total, tape.scalar(plain));
    }

    #[test]
    fn baseline_single_group_batch_activates_one_term() {
        let mut tape = Tape::new();
        let logits: Vec<NodeId> = (0..3).map(|g| random_logits(&mut tape, 3, 6, 50 + g)).collect();
        // All samples belong to group 1.
        let masks = vec![vec![false; 3], vec![true; 3], vec![false; 3]];
        let result = baseline_loss(&mut tape, &logits, &[2, 3, 2], &masks).unwrap();
        assert_eq!(result.breakdown.branch_terms[0], 0.0);
        assert_eq!(result.breakdown.branch_terms[2], 0.0);
        assert_eq!(result.breakdown.total, result.breakdown.branch_terms[1]);
    }

    #[test]
    fn masked_mean_equals_physically_filtered_mean() {
        let mut tape = Tape::new();
        let n = 7;
        let k = 5;
        let mut rng = derive_rng(99, "loss/filter");
        let values: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();

        let full = tape.constant(Tensor2D::from_values(n, k, values.clone()).unwrap());
        let masked = tape.softmax_cross_entropy(full, &targets, &mask).unwrap();

        // Physically filter the batch down to the masked-in rows.
        let mut sub_values = Vec::new();
        let mut sub_targets = Vec::new();
        for i in 0..n {
            if mask[i] {
                sub_values.extend_from_slice(&values[i * k..(i + 1) * k]);
                sub_targets.push(targets[i]);
            }
        }
        let m = sub_targets.len();
        let sub = tape.constant(Tensor2D::from_values(m, k, sub_values).unwrap());
        let filtered = tape
            .softmax_cross_entropy(sub, &sub_targets, &vec![true; m])
            .unwrap();
        assert!((tape.scalar(masked) - tape.scalar(filtered)).abs() < 1e-12);
    }
}
