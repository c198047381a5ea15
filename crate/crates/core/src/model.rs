//! Backbone, multi-branch head with shared classifier, and logit fusion.
//!
//! The head realizes one grouped transform as G independent c -> c linear
//! maps over the pooled trunk feature; every branch is scored by the same
//! bias-free classifier weight [K x c], and branch logits are aggregated at
//! inference by the variant's fusion rule.

use crate::error::{Error, Result};
use crate::gradcheck::Parameterized;
use crate::rng::derive_rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Parameter, Tensor2D};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// How branch sample masks are assigned during training.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentScheme {
    /// Branch g trains on samples of groups >= g: {all}, {m+t}, {t}.
    Nested,
    /// Branch g trains on samples of group g only; no fusion objective.
    Disjoint,
    /// Disjoint branch masks combined with the fused all-class objective.
    DisjointPlusAll,
}

/// How branch logits are combined into the final prediction.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionRule {
    /// Elementwise sum; the additive shortcut.
    ResidualSum,
    /// Per-entry maximum over branches.
    ElementwiseMax,
    /// Elementwise sum of raw logits (identical arithmetic to ResidualSum,
    /// kept distinct because it names a different baseline).
    LogitSum,
    /// Row softmax per branch, then elementwise sum.
    SoftmaxSum,
}

/// The head/loss wiring of one experiment arm.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub assignment: AssignmentScheme,
    pub shortcut: bool,
    pub specialization: bool,
    pub fusion_rule: FusionRule,
}

impl VariantConfig {
    /// The full residual-fusion configuration.
    pub fn reslt() -> Self {
        VariantConfig {
            assignment: AssignmentScheme::Nested,
            shortcut: true,
            specialization: true,
            fusion_rule: FusionRule::ResidualSum,
        }
    }
}

/// One linear layer, weight [in x out] with bias [1 x out].
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = Tensor2D::from_values(
            input,
            output,
            (0..input * output).map(|_| rng.gen_range(-bound..=bound)).collect(),
        )
        .expect("weight shape");
        let bias = Tensor2D::from_values(
            1,
            output,
            (0..output).map(|_| rng.gen_range(-bound..=bound)).collect(),
        )
        .expect("bias shape");
        Linear {
            weight: Parameter::new(weight),
            bias: Parameter::new(bias),
        }
    }

    pub fn zero(&mut self) {
        self.weight.tensor.fill(0.0);
        self.bias.tensor.fill(0.0);
    }
}

/// Shared trunk: an MLP with ReLU after every layer (possibly zero hidden
/// layers, i.e. a single linear map into feature space).
#[derive(Clone, Debug)]
pub struct Backbone {
    pub layers: Vec<Linear>,
}

/// Branch transforms plus the single classifier weight shared by all of them.
#[derive(Clone, Debug)]
pub struct ResLTHead {
    pub branch_transforms: Vec<Linear>,
    /// Shared classifier weight, [K x c], no bias.
    pub classifier: Parameter,
}

/// Layer widths of the full model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub feature: usize,
    pub classes: usize,
}

#[derive(Clone, Debug)]
pub struct ResLTModel {
    pub dims: ModelDims,
    pub backbone: Backbone,
    pub head: ResLTHead,
}

/// Node handles produced by a taped forward pass.
pub struct ForwardGraph {
    /// One logits node per branch, each [n x K].
    pub branch_logits: Vec<NodeId>,
    /// (param node, parameter index) pairs for gradient export.
    pub bindings: Vec<(NodeId, usize)>,
}

impl ResLTModel {
    /// Initializes all weights with fan-in scaled uniform draws,
    /// bound = 1/sqrt(fan_in). Deterministic under the seed; each tensor
    /// draws from its own named stream.
    pub fn init(dims: ModelDims, groups: usize, seed: u64) -> Result<Self> {
        if groups == 0 {
            return Err(Error::parameter("need at least one branch group"));
        }
        if dims.feature == 0 || dims.classes == 0 || dims.input == 0 {
            return Err(Error::parameter("model dimensions must be nonzero"));
        }
        let mut layers = Vec::new();
        let mut widths = vec![dims.input];
        widths.extend(&dims.hidden);
        widths.push(dims.feature);
        for (i, pair) in widths.windows(2).enumerate() {
            let mut rng = derive_rng(seed, &format!("backbone/{i}"));
            layers.push(Linear::init(pair[0], pair[1], &mut rng));
        }
        let branch_transforms = (0..groups)
            .map(|g| {
                let mut rng = derive_rng(seed, &format!("branch/{g}"));
                Linear::init(dims.feature, dims.feature, &mut rng)
            })
            .collect();
        let bound = 1.0 / (dims.feature as f64).sqrt();
        let mut rng = derive_rng(seed, "classifier");
        let classifier = Tensor2D::from_values(
            dims.classes,
            dims.feature,
            (0..dims.classes * dims.feature)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect(),
        )
        .expect("classifier shape");
        Ok(ResLTModel {
            dims,
            backbone: Backbone { layers },
            head: ResLTHead {
                branch_transforms,
                classifier: Parameter::new(classifier),
            },
        })
    }

    pub fn num_groups(&self) -> usize {
        self.head.branch_transforms.len()
    }

    /// Zeroes the branch transforms at indices >= 1, leaving only the main
    /// branch contributing to fused logits.
    pub fn zero_residual_branches(&mut self) {
        for transform in self.head.branch_transforms.iter_mut().skip(1) {
            transform.zero();
        }
    }

    /// Runs the trunk and head on the tape, registering every parameter
    /// (used or not) so gradient export stays aligned with
    /// `parameters_mut()` order.
    pub fn forward(&self, tape: &mut Tape, x: NodeId, specialization: bool) -> Result<ForwardGraph> {
        if tape.value(x).cols() != self.dims.input {
            return Err(Error::ShapeMismatch {
                context: "backbone_forward",
                left_rows: tape.value(x).rows(),
                left_cols: tape.value(x).cols(),
                right_rows: self.dims.input,
                right_cols: self.dims.feature,
            });
        }

        let mut bindings = Vec::new();
        let mut param_index = 0usize;
        let mut bind = |tape: &mut Tape, p: &Parameter| -> NodeId {
            let node = tape.param(p);
            bindings.push((node, param_index));
            param_index += 1;
            node
        };

        let mut h = x;
        for layer in &self.backbone.layers {
            let w = bind(tape, &layer.weight);
            let b = bind(tape, &layer.bias);
            let lin = tape.matmul(h, w)?;
            let biased = tape.add_bias(lin, b)?;
            h = tape.relu(biased);
        }

        let groups = self.num_groups();
        let mut transform_nodes = Vec::with_capacity(groups);
        for transform in &self.head.branch_transforms {
            let w = bind(tape, &transform.weight);
            let b = bind(tape, &transform.bias);
            transform_nodes.push((w, b));
        }
        let classifier = bind(tape, &self.head.classifier);

        let branch_feature = |tape: &mut Tape, (w, b): (NodeId, NodeId)| -> Result<NodeId> {
            let lin = tape.matmul(h, w)?;
            tape.add_bias(lin, b)
        };

        let branch_logits = if specialization {
            let mut logits = Vec::with_capacity(groups);
            for &nodes in &transform_nodes {
                let feature = branch_feature(tape, nodes)?;
                logits.push(tape.matmul_nt(feature, classifier)?);
            }
            logits
        } else {
            // Without parameter specialization every branch shares the first
            // transform; the same logits node is replicated G times.
            let feature = branch_feature(tape, transform_nodes[0])?;
            let logits = tape.matmul_nt(feature, classifier)?;
            vec![logits; groups]
        };

        Ok(ForwardGraph {
            branch_logits,
            bindings,
        })
    }

    /// Inference-only branch logits for a batch.
    pub fn branch_logit_values(&self, x: &Tensor2D, specialization: bool) -> Result<Vec<Tensor2D>> {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let graph = self.forward(&mut tape, input, specialization)?;
        Ok(graph
            .branch_logits
            .iter()
            .map(|&id| tape.value(id).clone())
            .collect())
    }
}

impl Parameterized for ResLTModel {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut params = Vec::new();
        for layer in &mut self.backbone.layers {
            params.push(&mut layer.weight);
            params.push(&mut layer.bias);
        }
        for transform in &mut self.head.branch_transforms {
            params.push(&mut transform.weight);
            params.push(&mut transform.bias);
        }
        params.push(&mut self.head.classifier);
        params
    }
}

/// Combines branch logits into final scores under the given rule.
pub fn fuse(branch_logits: &[Tensor2D], rule: FusionRule) -> Result<Tensor2D> {
    let (first, rest) = branch_logits
        .split_first()
        .ok_or_else(|| Error::parameter("fuse needs at least one branch"))?;
    for b in rest {
        if b.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                context: "fuse",
                left_rows: first.rows(),
                left_cols: first.cols(),
                right_rows: b.rows(),
                right_cols: b.cols(),
            });
        }
    }
    match rule {
        FusionRule::ResidualSum | FusionRule::LogitSum => {
            let mut out = first.clone();
            for b in rest {
                for (o, v) in out.values_mut().iter_mut().zip(b.values()) {
                    *o += v;
                }
            }
            Ok(out)
        }
        FusionRule::ElementwiseMax => {
            let mut out = first.clone();
            for b in rest {
                for (o, &v) in out.values_mut().iter_mut().zip(b.values()) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
            Ok(out)
        }
        FusionRule::SoftmaxSum => {
            let (n, k) = first.shape();
            let mut out = Tensor2D::zeros(n, k);
            for b in branch_logits {
                for i in 0..n {
                    let row = b.row(i);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
                    for (j, &x) in row.iter().enumerate() {
                        let v = out.get(i, j) + (x - max).exp() / denom;
                        out.set(i, j, v);
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Row argmax with ties broken toward the smaller class index.
pub fn argmax_rows(scores: &Tensor2D) -> Vec<usize> {
    (0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Predicted labels for a batch under the variant's inference rule: fused
/// logits, or the main branch alone when the shortcut is disabled.
pub fn predict(model: &ResLTModel, x: &Tensor2D, variant: &VariantConfig) -> Result<Vec<usize>> {
    let branch_logits = model.branch_logit_values(x, variant.specialization)?;
    if variant.shortcut {
        Ok(argmax_rows(&fuse(&branch_logits, variant.fusion_rule)?))
    } else {
        Ok(argmax_rows(&branch_logits[0]))
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"RLTM";
const CHECKPOINT_VERSION: u32 = 1;

/// Serializes the model: magic "RLTM", version, dims, G, then every
/// parameter tensor in declaration order as (rows u32, cols u32, f64 LE
/// values). Lossless round-trip.
pub fn save_checkpoint(model: &ResLTModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.dims.input as u32).to_le_bytes());
    buf.extend_from_slice(&(model.dims.hidden.len() as u32).to_le_bytes());
    for &h in &model.dims.hidden {
        buf.extend_from_slice(&(h as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(model.dims.feature as u32).to_le_bytes());
    buf.extend_from_slice(&(model.dims.classes as u32).to_le_bytes());
    buf.extend_from_slice(&(model.num_groups() as u32).to_le_bytes());

    let mut clone = model.clone();
    let params = clone.parameters_mut();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.tensor.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(p.tensor.cols() as u32).to_le_bytes());
        for &v in p.tensor.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))
}

struct CheckpointCursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: String,
}

impl<'a> CheckpointCursor<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset: self.offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(self.fail(format!("truncated: {n} more bytes expected")));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn read_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ResLTModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut cur = CheckpointCursor {
        bytes: &bytes,
        offset: 0,
        path: path.display().to_string(),
    };

    if cur.take(4)? != CHECKPOINT_MAGIC {
        cur.offset = 0;
        return Err(cur.fail("bad magic, expected RLTM"));
    }
    let version = cur.read_u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(cur.fail(format!("unsupported version {version}")));
    }
    let input = cur.read_u32()? as usize;
    let n_hidden = cur.read_u32()? as usize;
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(cur.read_u32()? as usize);
    }
    let feature = cur.read_u32()? as usize;
    let classes = cur.read_u32()? as usize;
    let groups = cur.read_u32()? as usize;
    let dims = ModelDims {
        input,
        hidden,
        feature,
        classes,
    };

    let mut model = ResLTModel::init(dims, groups, 0)?;
    let n_tensors = cur.read_u32()? as usize;
    {
        let mut params = model.parameters_mut();
        if n_tensors != params.len() {
            return Err(Error::Format {
                path: path.display().to_string(),
                offset: cur.offset as u64,
                message: format!("expected {} tensors, file has {n_tensors}", params.len()),
            });
        }
        for p in params.iter_mut() {
            let rows = cur.read_u32()? as usize;
            let cols = cur.read_u32()? as usize;
            if (rows, cols) != p.tensor.shape() {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    offset: cur.offset as u64,
                    message: format!(
                        "tensor shape {rows}x{cols} does not match expected {}x{}",
                        p.tensor.rows(),
                        p.tensor.cols()
                    ),
                });
            }
            let raw = cur.take(rows * cols * 8)?;
            for (slot, chunk) in p.tensor.values_mut().iter_mut().zip(raw.chunks_exact(8)) {
                *slot = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
    }
    if cur.offset != bytes.len() {
        let remaining = bytes.len() - cur.offset;
        return Err(cur.fail(format!("{remaining} trailing bytes")));
    }
    Ok(model)
}
