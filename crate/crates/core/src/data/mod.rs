//! Long-tailed dataset construction and class grouping.
//!
//! Classes are always stored sorted by descending sample count, so class 0
//! is the most frequent everywhere downstream. Feature values are kept as
//! `f32` (the on-disk precision) and widened to `f64` when batches are
//! assembled, which makes file round-trips bit-exact.

mod idx;
mod io;

pub use idx::load_idx;
pub use io::{load_dataset, save_dataset};

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::tensor::Tensor2D;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Feature matrix plus labels for a frequency-sorted classification task.
#[derive(Clone, Debug, PartialEq)]
pub struct LongTailDataset {
    features: Vec<f32>,
    labels: Vec<u32>,
    class_counts: Vec<u32>,
    dim: usize,
}

impl LongTailDataset {
    /// Builds a dataset whose labels are already sorted by descending
    /// class frequency (ties must not be broken upward).
    pub fn from_sorted_parts(features: Vec<f32>, labels: Vec<u32>, dim: usize) -> Result<Self> {
        let counts = count_labels(&labels)?;
        for w in counts.windows(2) {
            if w[1] > w[0] {
                return Err(Error::parameter(
                    "class counts must be non-increasing in class index",
                ));
            }
        }
        Self::checked(features, labels, counts, dim)
    }

    /// Builds a dataset from arbitrary labels, relabeling classes into
    /// descending-count order (ties keep their original relative order).
    pub fn from_unsorted_parts(features: Vec<f32>, labels: Vec<u32>, dim: usize) -> Result<Self> {
        let counts = count_labels(&labels)?;
        let k = counts.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&c| (std::cmp::Reverse(counts[c]), c));
        let mut new_label = vec![0u32; k];
        for (new, &old) in order.iter().enumerate() {
            new_label[old] = new as u32;
        }
        let relabeled: Vec<u32> = labels.iter().map(|&l| new_label[l as usize]).collect();
        let sorted_counts: Vec<u32> = order.iter().map(|&c| counts[c]).collect();
        Self::checked(features, relabeled, sorted_counts, dim)
    }

    fn checked(features: Vec<f32>, labels: Vec<u32>, counts: Vec<u32>, dim: usize) -> Result<Self> {
        if features.len() != labels.len() * dim {
            return Err(Error::parameter(format!(
                "feature buffer of length {} does not hold {} rows of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        if counts.contains(&0) {
            return Err(Error::parameter("every class needs at least one sample"));
        }
        Ok(LongTailDataset {
            features,
            labels,
            class_counts: counts,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn class_counts(&self) -> &[u32] {
        &self.class_counts
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn feature_row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Imbalance factor: least-frequent count over most-frequent count.
    pub fn beta(&self) -> f64 {
        let max = self.class_counts[0] as f64;
        let min = *self.class_counts.last().expect("at least one class") as f64;
        min / max
    }

    /// Assembles the rows at `indices` into an f64 batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor2D, Vec<usize>) {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend(self.feature_row(i).iter().map(|&v| f64::from(v)));
            labels.push(self.labels[i] as usize);
        }
        let tensor = Tensor2D::from_values(indices.len(), self.dim, values).expect("batch shape");
        (tensor, labels)
    }
}

fn count_labels(labels: &[u32]) -> Result<Vec<u32>> {
    let k = labels.iter().max().map_or(0, |&m| m as usize + 1);
    if k == 0 {
        return Err(Error::parameter("dataset has no samples"));
    }
    let mut counts = vec![0u32; k];
    for &l in labels {
        counts[l as usize] += 1;
    }
    Ok(counts)
}

/// Per-class sample counts for the exponential long-tail profile
/// n_i = round(n_max * beta^(i / (K-1))).
pub fn longtail_counts(n_max: u32, k: usize, beta: f64) -> Result<Vec<u32>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::parameter(format!(
            "imbalance factor must be in (0, 1], got {beta}"
        )));
    }
    if k < 2 {
        return Err(Error::parameter("need at least two classes"));
    }
    if n_max < 1 {
        return Err(Error::parameter("n_max must be at least 1"));
    }
    Ok((0..k)
        .map(|i| {
            let exponent = i as f64 / (k - 1) as f64;
            (f64::from(n_max) * beta.powf(exponent)).round() as u32
        })
        .collect())
}

/// Contiguous assignment of frequency-sorted classes to G branch groups,
/// with the nested class masks ({all}, {groups >= 1}, ..., {last group}).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub num_groups: usize,
    pub group_of_class: Vec<usize>,
    /// nested_masks[g][c] is true iff class c belongs to a group >= g.
    pub nested_masks: Vec<Vec<bool>>,
}

impl GroupAssignment {
    /// Builds the assignment from group sizes (one per group, all nonzero).
    fn from_sizes(sizes: &[usize]) -> Self {
        let k: usize = sizes.iter().sum();
        let g = sizes.len();
        let mut group_of_class = Vec::with_capacity(k);
        for (group, &size) in sizes.iter().enumerate() {
            group_of_class.extend(std::iter::repeat_n(group, size));
        }
        let nested_masks = (0..g)
            .map(|level| group_of_class.iter().map(|&gc| gc >= level).collect())
            .collect();
        GroupAssignment {
            num_groups: g,
            group_of_class,
            nested_masks,
        }
    }

    /// The degenerate single-group assignment used by plain-classifier runs.
    pub fn single_group(k: usize) -> Self {
        GroupAssignment::from_sizes(&[k])
    }

    pub fn num_classes(&self) -> usize {
        self.group_of_class.len()
    }
}

/// Spread between the largest and smallest per-group log imbalance; the
/// quantity the partition search minimizes.
fn log_imbalance_spread(counts: &[u32], sizes: &[usize]) -> f64 {
    let mut start = 0;
    let mut spread = 0.0f64;
    let mut logs = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let end = start + size - 1;
        logs.push((f64::from(counts[end]) / f64::from(counts[start])).ln());
        start = end + 1;
    }
    for i in 0..logs.len() {
        for j in (i + 1)..logs.len() {
            let diff = (logs[i] - logs[j]).abs();
            if diff > spread {
                spread = diff;
            }
        }
    }
    spread
}

/// Partitions frequency-sorted classes into G contiguous groups whose
/// per-group imbalance factors are as equal as possible, measured by the
/// maximum pairwise difference of log(min/max) within each group. Ties go
/// to the partition with the most equal group sizes, then to the earliest
/// boundaries.
pub fn partition_groups(counts: &[u32], num_groups: usize) -> Result<GroupAssignment> {
    let k = counts.len();
    if num_groups < 2 {
        return Err(Error::parameter("need at least two groups"));
    }
    if k < num_groups {
        return Err(Error::parameter(format!(
            "cannot split {k} classes into {num_groups} groups"
        )));
    }

    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    let mut sizes = vec![1usize; num_groups];
    // Enumerate boundary vectors in lexicographic order so the first
    // partition achieving the best key wins the final tie-break.
    enumerate_sizes(k, num_groups, &mut sizes, 0, &mut |sizes| {
        let objective = log_imbalance_spread(counts, sizes);
        let size_spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
        let better = match &best {
            None => true,
            Some((obj, spread, _)) => {
                objective < *obj || (objective == *obj && size_spread < *spread)
            }
        };
        if better {
            best = Some((objective, size_spread, sizes.to_vec()));
        }
    });

    let (_, _, sizes) = best.expect("at least one contiguous partition exists");
    Ok(GroupAssignment::from_sizes(&sizes))
}

/// Visits every composition of `k` into `g` positive parts. Compositions are
/// produced in the lexicographic order of their boundary positions.
fn enumerate_sizes(
    k: usize,
    g: usize,
    sizes: &mut Vec<usize>,
    depth: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    let used: usize = sizes[..depth].iter().sum();
    if depth == g - 1 {
        sizes[depth] = k - used;
        visit(sizes);
        return;
    }
    let remaining_groups = g - depth - 1;
    for size in 1..=(k - used - remaining_groups) {
        sizes[depth] = size;
        enumerate_sizes(k, g, sizes, depth + 1, visit);
    }
}

/// Per-sample nested masks: mask_g[i] is true iff sample i's class lies in
/// a group >= g. mask_0 is always all-true.
pub fn nested_sample_masks(labels: &[usize], assignment: &GroupAssignment) -> Vec<Vec<bool>> {
    (0..assignment.num_groups)
        .map(|g| {
            labels
                .iter()
                .map(|&l| assignment.group_of_class[l] >= g)
                .collect()
        })
        .collect()
}

/// Per-sample disjoint masks: mask_g[i] is true iff sample i's class lies in
/// exactly group g.
pub fn disjoint_sample_masks(labels: &[usize], assignment: &GroupAssignment) -> Vec<Vec<bool>> {
    (0..assignment.num_groups)
        .map(|g| {
            labels
                .iter()
                .map(|&l| assignment.group_of_class[l] == g)
                .collect()
        })
        .collect()
}

/// How classes are partitioned into many/medium/few-shot evaluation splits.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Count thresholds: many > `many_above`, few < `few_below`.
    Threshold { many_above: u32, few_below: u32 },
    /// Fixed index ranges: 3/3/4 for K=10, 35/35/30 for K=100, otherwise
    /// equal thirds with the remainder going to the few split.
    FixedFractions,
}

impl Default for SplitMode {
    fn default() -> Self {
        SplitMode::Threshold {
            many_above: 100,
            few_below: 20,
        }
    }
}

/// Class sets for split-wise evaluation. Splits may be empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub many: Vec<usize>,
    pub medium: Vec<usize>,
    pub few: Vec<usize>,
}

impl EvalSplit {
    /// Split id (0 = many, 1 = medium, 2 = few) per class.
    pub fn split_of_class(&self, k: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; k];
        for &c in &self.many {
            out[c] = 0;
        }
        for &c in &self.medium {
            out[c] = 1;
        }
        for &c in &self.few {
            out[c] = 2;
        }
        debug_assert!(out.iter().all(|&s| s != usize::MAX));
        out
    }
}

/// Derives the many/medium/few-shot evaluation split from training counts.
pub fn eval_split(counts: &[u32], mode: SplitMode) -> EvalSplit {
    let k = counts.len();
    match mode {
        SplitMode::Threshold {
            many_above,
            few_below,
        } => {
            let mut split = EvalSplit {
                many: Vec::new(),
                medium: Vec::new(),
                few: Vec::new(),
            };
            for (c, &count) in counts.iter().enumerate() {
                if count > many_above {
                    split.many.push(c);
                } else if count < few_below {
                    split.few.push(c);
                } else {
                    split.medium.push(c);
                }
            }
            split
        }
        SplitMode::FixedFractions => {
            let (n_many, n_medium) = match k {
                10 => (3, 3),
                100 => (35, 35),
                _ => (k / 3, k / 3),
            };
            EvalSplit {
                many: (0..n_many).collect(),
                medium: (n_many..n_many + n_medium).collect(),
                few: (n_many + n_medium..k).collect(),
            }
        }
    }
}

/// A generated train/test pair sharing the same class means.
#[derive(Clone, Debug)]
pub struct SynthPair {
    pub train: LongTailDataset,
    pub test: LongTailDataset,
}

/// Draws a Gaussian-mixture classification task: class c is an isotropic
/// unit-variance Gaussian centered at `separation` times a random unit
/// direction. The held-out test set is balanced at `test_per_class` and
/// drawn from the same means. Feature values are rounded through f32 so
/// they survive the on-disk format bit-exactly.
pub fn synth_gaussian(
    dim: usize,
    counts: &[u32],
    separation: f64,
    test_per_class: u32,
    seed: u64,
) -> Result<SynthPair> {
    let k = counts.len();
    if k == 0 || dim == 0 {
        return Err(Error::parameter("need at least one class and one dimension"));
    }
    for w in counts.windows(2) {
        if w[1] > w[0] {
            return Err(Error::parameter("counts must be non-increasing"));
        }
    }

    let mut means_rng = derive_rng(seed, "synth/means");
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let raw: Vec<f64> = (0..dim).map(|_| means_rng.sample(StandardNormal)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            raw.iter().map(|v| v / norm * separation).collect()
        })
        .collect();

    let draw = |rng: &mut rand_chacha::ChaCha8Rng, class: usize| -> Vec<f32> {
        (0..dim)
            .map(|j| {
                let noise: f64 = rng.sample(StandardNormal);
                (means[class][j] + noise) as f32
            })
            .collect()
    };

    let mut train_rng = derive_rng(seed, "synth/train");
    let mut train_features = Vec::with_capacity(counts.iter().sum::<u32>() as usize * dim);
    let mut train_labels = Vec::new();
    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            train_features.extend(draw(&mut train_rng, class));
            train_labels.push(class as u32);
        }
    }

    let mut test_rng = derive_rng(seed, "synth/test");
    let mut test_features = Vec::with_capacity(k * test_per_class as usize * dim);
    let mut test_labels = Vec::new();
    for class in 0..k {
        for _ in 0..test_per_class {
            test_features.extend(draw(&mut test_rng, class));
            test_labels.push(class as u32);
        }
    }

    Ok(SynthPair {
        train: LongTailDataset::from_sorted_parts(train_features, train_labels, dim)?,
        test: LongTailDataset::from_sorted_parts(test_features, test_labels, dim)?,
    })
}

/// Uniformly subsamples a dataset without replacement down to the requested
/// per-class counts, then relabels classes into descending-count order.
/// Feature rows are copied bit-exactly.
pub fn subsample_longtail(
    source: &LongTailDataset,
    requested: &[u32],
    seed: u64,
) -> Result<LongTailDataset> {
    let k = source.num_classes();
    if requested.len() != k {
        return Err(Error::parameter(format!(
            "requested counts cover {} classes, dataset has {k}",
            requested.len()
        )));
    }
    for (class, (&want, &have)) in requested.iter().zip(source.class_counts()).enumerate() {
        if want > have {
            return Err(Error::Capacity {
                class,
                requested: want as usize,
                available: have as usize,
            });
        }
        if want == 0 {
            return Err(Error::parameter(format!(
                "requested zero samples for class {class}"
            )));
        }
    }

    let mut rows_by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (row, &label) in source.labels().iter().enumerate() {
        rows_by_class[label as usize].push(row);
    }

    // New class order: descending requested count, original index as the
    // stable tie-break.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(requested[c]), c));

    let mut rng = derive_rng(seed, "subsample");
    let dim = source.dim();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (new_class, &old_class) in order.iter().enumerate() {
        let mut pool = rows_by_class[old_class].clone();
        pool.shuffle(&mut rng);
        pool.truncate(requested[old_class] as usize);
        pool.sort_unstable();
        for row in pool {
            features.extend_from_slice(source.feature_row(row));
            labels.push(new_class as u32);
        }
    }
    LongTailDataset::from_sorted_parts(features, labels, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_flat_profile_at_beta_one() {
        assert_eq!(longtail_counts(500, 4, 1.0).unwrap(), vec![500; 4]);
    }

    #[test]
    fn counts_match_direct_formula() {
        let counts = longtail_counts(5000, 10, 0.01).unwrap();
        assert_eq!(counts[0], 5000);
        assert_eq!(counts[9], 50);
    }

    #[test]
    fn counts_two_class_geometric() {
        assert_eq!(longtail_counts(100, 2, 0.5).unwrap(), vec![100, 50]);
    }

    #[test]
    fn counts_reject_bad_beta() {
        assert!(longtail_counts(100, 4, 0.0).is_err());
        assert!(longtail_counts(100, 4, 1.5).is_err());
    }

    #[test]
    fn exponential_nine_classes_split_evenly() {
        let counts = longtail_counts(600, 9, 0.02).unwrap();
        let assignment = partition_groups(&counts, 3).unwrap();
        assert_eq!(assignment.group_of_class, vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn constant_counts_tie_break_to_equal_sizes() {
        let assignment = partition_groups(&[7; 10], 3).unwrap();
        let sizes: Vec<usize> = (0..3)
            .map(|g| assignment.group_of_class.iter().filter(|&&x| x == g).count())
            .collect();
        assert_eq!(sizes, vec![3, 3, 4]);
    }

    #[test]
    fn partition_rejects_more_groups_than_classes() {
        assert!(partition_groups(&[5, 4], 3).is_err());
    }

    #[test]
    fn nested_masks_are_nested_and_universal_at_level_zero() {
        let counts = longtail_counts(100, 6, 0.1).unwrap();
        let assignment = partition_groups(&counts, 3).unwrap();
        assert!(assignment.nested_masks[0].iter().all(|&m| m));
        for g in 1..assignment.num_groups {
            for c in 0..assignment.num_classes() {
                if assignment.nested_masks[g][c] {
                    assert!(assignment.nested_masks[g - 1][c]);
                }
            }
        }
    }

    #[test]
    fn head_only_batch_masks_empty_above_level_zero() {
        let assignment = GroupAssignment::from_sizes(&[2, 2, 2]);
        let masks = nested_sample_masks(&[0, 1, 0], &assignment);
        assert!(masks[0].iter().all(|&m| m));
        assert!(masks[1].iter().all(|&m| !m));
        assert!(masks[2].iter().all(|&m| !m));
    }

    #[test]
    fn tail_only_batch_masks_all_true() {
        let assignment = GroupAssignment::from_sizes(&[2, 2, 2]);
        let masks = nested_sample_masks(&[4, 5], &assignment);
        for mask in masks {
            assert!(mask.iter().all(|&m| m));
        }
    }

    #[test]
    fn fixed_split_k10_is_cifar_convention() {
        let split = eval_split(&[10; 10], SplitMode::FixedFractions);
        assert_eq!(split.many, vec![0, 1, 2]);
        assert_eq!(split.medium, vec![3, 4, 5]);
        assert_eq!(split.few, vec![6, 7, 8, 9]);
    }

    #[test]
    fn fixed_split_k100_is_cifar_convention() {
        let split = eval_split(&[10; 100], SplitMode::FixedFractions);
        assert_eq!(split.many.len(), 35);
        assert_eq!(split.medium, (35..70).collect::<Vec<_>>());
        assert_eq!(split.few.len(), 30);
    }

    #[test]
    fn threshold_split_with_all_large_counts() {
        let split = eval_split(&[900, 500, 200], SplitMode::default());
        assert_eq!(split.many, vec![0, 1, 2]);
        assert!(split.medium.is_empty());
        assert!(split.few.is_empty());
    }

    #[test]
    fn synth_is_deterministic() {
        let counts = longtail_counts(40, 3, 0.25).unwrap();
        let a = synth_gaussian(5, &counts, 3.0, 8, 7).unwrap();
        let b = synth_gaussian(5, &counts, 3.0, 8, 7).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn subsample_exact_sizes() {
        let counts = [3u32, 3];
        let pair = synth_gaussian(4, &counts, 2.0, 2, 3).unwrap();
        let sub = subsample_longtail(&pair.train, &[2, 1], 9).unwrap();
        assert_eq!(sub.class_counts(), &[2, 1]);
        assert!((sub.beta() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn subsample_capacity_error_names_class() {
        let counts = [3u32, 2];
        let pair = synth_gaussian(4, &counts, 2.0, 2, 3).unwrap();
        let err = subsample_longtail(&pair.train, &[3, 5], 9).unwrap_err();
        assert!(matches!(err, Error::Capacity { class: 1, .. }));
    }

    #[test]
    fn subsample_full_counts_preserves_rows() {
        let counts = [4u32, 2];
        let pair = synth_gaussian(3, &counts, 2.0, 2, 5).unwrap();
        let sub = subsample_longtail(&pair.train, &[4, 2], 1).unwrap();
        // Same sizes and exact same feature rows per class, possibly reordered.
        assert_eq!(sub.class_counts(), pair.train.class_counts());
        let rows = |ds: &LongTailDataset, class: u32| -> Vec<Vec<u32>> {
            let mut rows: Vec<Vec<u32>> = ds
                .labels()
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == class)
                .map(|(i, _)| ds.feature_row(i).iter().map(|v| v.to_bits()).collect())
                .collect();
            rows.sort();
            rows
        };
        for class in 0..2 {
            assert_eq!(rows(&sub, class), rows(&pair.train, class));
        }
    }

    #[test]
    fn unsorted_parts_get_relabeled() {
        // Class 1 is most frequent; it must become class 0.
        let features = vec![0.0f32; 5];
        let labels = vec![1, 1, 0, 1, 2];
        let ds = LongTailDataset::from_unsorted_parts(features, labels, 1).unwrap();
        assert_eq!(ds.class_counts(), &[3, 1, 1]);
        assert_eq!(ds.labels(), &[0, 0, 1, 0, 2]);
    }
}
