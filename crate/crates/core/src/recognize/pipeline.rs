//! Full-pipeline plumbing shared by training and evaluation: the model
//! bundle, the parameter-free data preparation (restore, decompose, finite
//! differences), and the trainable tail graph (dynamics, fusion, classifier).

use crate::complete::{apply_mask, complete, CompletionModel, MaskKind, MaskStrategy, SkeletonBank};
use crate::decompose::{decompose_with, AugmentSpec};
use crate::dynamics::{
    fusion_graph, physics_graph, pseudo_acceleration_flat, velocity_flat, DynamicsModel,
    DynamicsVars, FusionParams, FusionVars,
};
use crate::error::Result;
use crate::nn::{concat, Lifter, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::skeleton::{coco17_topology, SkeletonSequence, SkeletonTopology, NUM_JOINTS};

use super::gcn::{classify_graph, GcnModel, GcnVars};

/// Fixed inference prompt: the prior plus one seed-chosen demonstration pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSet {
    pub prior: SkeletonSequence,
    pub context: SkeletonSequence,
    pub masked_context: SkeletonSequence,
}

impl PromptSet {
    /// Picks the demonstration sequence by seed and masks its middle half.
    pub fn from_bank(bank: &SkeletonBank, seed: u64) -> Result<PromptSet> {
        let mut rng = Rng::from_seed_and_stream(seed, 0x9107);
        let context = bank.get(rng.below(bank.len())).clone();
        let strategy = MaskStrategy::new(MaskKind::Middle, 0.5, rng.next_u64())?;
        let masked_context = apply_mask(&context, &strategy, None)?;
        Ok(PromptSet {
            prior: bank.build_prior(),
            context,
            masked_context,
        })
    }
}

/// Everything the pipeline needs at inference time.
#[derive(Clone, Debug)]
pub struct PipelineModels {
    pub completion: CompletionModel,
    pub dynamics: DynamicsModel,
    pub fusion: FusionParams,
    pub gcn: GcnModel,
    pub prompt: PromptSet,
}

impl PipelineModels {
    /// Training-time initialization: the physics estimators and the
    /// classification head start at zero, so the first forward pass fuses a
    /// zero physics estimate (an exact pseudo-acceleration passthrough) into
    /// uniform logits and the spec'd learning-rate range is stable. The
    /// fusion maps stay randomly initialized so gradient reaches the
    /// estimators from the first step.
    pub fn stabilize_for_training(&mut self) {
        self.dynamics.zero_output_layers();
        self.gcn.zero_head();
    }
}

/// Labeled clean sequences with a held-out validation split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<SkeletonSequence>,
    pub val: Vec<SkeletonSequence>,
}

/// One variant's parameter-free tensors.
struct VariantData {
    pos: Tensor,
    vel: Tensor,
    pseudo: Tensor,
}

/// The parameter-free part of one sample's pipeline: restored, decomposed,
/// differentiated. Reusable across epochs when the corruption is fixed.
pub struct SampleData {
    pub label: Option<usize>,
    /// Fused position sequence, [T, K, 2].
    pub pred_pos: Tensor,
    variants: [VariantData; 3],
}

/// Subtracts each joint's temporal mean: the classifier sees motion relative
/// to the sequence's mean pose, not absolute image coordinates.
pub fn center_positions(pos: &Tensor) -> Tensor {
    let (t, k) = (pos.shape()[0], pos.shape()[1]);
    let mut out = pos.data().to_vec();
    for joint in 0..k {
        for axis in 0..2 {
            let mut mean = 0.0;
            for frame in 0..t {
                mean += out[(frame * k + joint) * 2 + axis];
            }
            mean /= t as f64;
            for frame in 0..t {
                out[(frame * k + joint) * 2 + axis] -= mean;
            }
        }
    }
    Tensor::new(pos.shape(), out)
}

/// Restores a (possibly corrupted) sequence and decomposes it.
/// `decompose_seed` drives the augmentation streams.
pub fn prepare_sample(
    models: &PipelineModels,
    topo: &SkeletonTopology,
    seq: &SkeletonSequence,
    decompose_seed: u64,
) -> Result<SampleData> {
    let restored = if seq.fully_valid_mask() {
        seq.clone()
    } else {
        complete(
            &models.completion,
            seq,
            &models.prompt.prior,
            (&models.prompt.context, &models.prompt.masked_context),
        )?
    };
    let dec = decompose_with(
        &restored,
        topo,
        &AugmentSpec::strong(0),
        &AugmentSpec::weak(0),
        decompose_seed,
    )?;
    let variant = |s: &SkeletonSequence| {
        let pos = s.to_flat_tensor();
        let vel = velocity_flat(&pos);
        let pseudo = pseudo_acceleration_flat(&pos).reshaped(&[s.len(), NUM_JOINTS, 2]);
        VariantData { pos, vel, pseudo }
    };
    Ok(SampleData {
        label: seq.label,
        pred_pos: center_positions(&dec.pred.to_tensor()),
        variants: [variant(&dec.base), variant(&dec.dyna), variant(&dec.stat)],
    })
}

impl SampleData {
    /// The classifier input this sample produces when the physics estimate
    /// is zero (fusion passes the pseudo-acceleration through): positions
    /// stacked with the mean pseudo-acceleration, [T, K, 4]. Used to
    /// calibrate the classifier's standardization buffers.
    pub fn classifier_input_at_zero_physics(&self) -> Tensor {
        let shape = self.pred_pos.shape().to_vec();
        let (t, k) = (shape[0], shape[1]);
        let mut acc = vec![0.0; t * k * 2];
        for v in &self.variants {
            for (a, &p) in acc.iter_mut().zip(v.pseudo.data()) {
                *a += p / 3.0;
            }
        }
        let mut out = Vec::with_capacity(t * k * 4);
        for i in 0..t * k {
            out.extend_from_slice(&self.pred_pos.data()[i * 2..(i + 1) * 2]);
            out.extend_from_slice(&acc[i * 2..(i + 1) * 2]);
        }
        Tensor::new(&[t, k, 4], out)
    }
}

/// The trainable tail of one sample's graph.
pub struct SampleGraph<'t> {
    /// [1, C] class logits.
    pub logits: Var<'t>,
    /// Scalar acceleration-consistency loss over the three variants.
    pub acc_loss: Var<'t>,
    /// [T, K, 4] classifier input (positions and fused acceleration).
    pub classifier_input: Var<'t>,
}

/// Builds dynamics + fusion + classification for one prepared sample on the
/// given tape.
pub fn sample_graph<'t>(
    tape: &'t Tape,
    dvars: &DynamicsVars<'t>,
    fvars: &FusionVars<'t>,
    gvars: &GcnVars<'t>,
    data: &SampleData,
) -> SampleGraph<'t> {
    let mut fused = Vec::with_capacity(3);
    let mut acc_terms = Vec::with_capacity(3);
    for v in &data.variants {
        let physics = physics_graph(tape, dvars, &v.pos, &v.vel).accel;
        let pseudo = tape.constant(v.pseudo.clone());
        let a = fusion_graph(fvars, pseudo, physics);
        acc_terms.push(a.mse(pseudo));
        fused.push(a);
    }
    let acc_loss = acc_terms[0]
        .add(acc_terms[1])
        .add(acc_terms[2])
        .scale(1.0 / 3.0);
    let a_pred = fused[0].add(fused[1]).add(fused[2]).scale(1.0 / 3.0);
    let pos = tape.constant(data.pred_pos.clone());
    let x = concat(&[pos, a_pred], 2);
    let logits = classify_graph(gvars, x);
    SampleGraph {
        logits,
        acc_loss,
        classifier_input: x,
    }
}

/// Class probabilities for one prepared sample under the current parameters.
pub fn classify_sample(models: &PipelineModels, data: &SampleData) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let mut lifter = Lifter::new(&tape, false);
    let dvars = models.dynamics.lift(&mut lifter);
    let fvars = models.fusion.lift(&mut lifter);
    let gvars = models.gcn.lift(&mut lifter);
    let graph = sample_graph(&tape, &dvars, &fvars, &gvars, data);
    let probs = graph.logits.softmax(1).value();
    if !probs.is_finite() {
        return Err(crate::error::Error::Numeric(
            "non-finite class probabilities".into(),
        ));
    }
    Ok(probs.into_data())
}

/// Convenience: the standard topology used throughout the pipeline.
pub fn pipeline_topology() -> SkeletonTopology {
    coco17_topology()
}
