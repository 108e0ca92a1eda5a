//! Context-aware sequence completion.
//!
//! A corrupted query is paired with the bank prior, a clean bank sequence
//! with a masked copy of itself, and all four segments are pushed through one
//! mixer network; the frames it writes at the masked slots are the
//! restorations. Non-learned restoration baselines live in [`baseline`].

mod baseline;
mod mask;
mod model;
mod pretrain;

pub use baseline::{baseline_restore, RestoreMethod};
pub use mask::{apply_mask, MaskKind, MaskStrategy};
pub use model::{
    encode_batch, icl_graph,
    icl_forward, positional_encoding, CompletionModel, CompletionVars, MixerBlock, INPUT_DIM,
    OUTPUT_DIM, PE_DIM,
};
pub use pretrain::{pretrain_completion, PretrainConfig};

use crate::error::{Error, Result};
use crate::skeleton::{resample_frames, SkeletonSequence, NUM_JOINTS};

/// Clean sequences resampled to a common length; the source of priors and
/// demonstration pairs.
#[derive(Clone, Debug)]
pub struct SkeletonBank {
    sequences: Vec<SkeletonSequence>,
    seq_len: usize,
}

impl SkeletonBank {
    pub fn new(seqs: Vec<SkeletonSequence>, seq_len: usize) -> Result<SkeletonBank> {
        if seqs.is_empty() {
            return Err(Error::InvalidInput("empty skeleton bank".into()));
        }
        if seq_len < crate::skeleton::MIN_FRAMES {
            return Err(Error::InvalidInput(format!("bank length {seq_len} too short")));
        }
        let mut sequences = Vec::with_capacity(seqs.len());
        for seq in seqs {
            if !seq.fully_valid_mask() {
                return Err(Error::InvalidInput(format!(
                    "bank sequence `{}` has invalid frames",
                    seq.id
                )));
            }
            let frames = resample_frames(&seq.frames, seq_len);
            sequences.push(SkeletonSequence::fully_valid(seq.id.clone(), seq.label, frames)?);
        }
        Ok(SkeletonBank { sequences, seq_len })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn get(&self, i: usize) -> &SkeletonSequence {
        &self.sequences[i]
    }

    pub fn sequences(&self) -> &[SkeletonSequence] {
        &self.sequences
    }

    /// Per-frame arithmetic mean over the bank: the prior sequence.
    pub fn build_prior(&self) -> SkeletonSequence {
        let t = self.seq_len;
        let n = self.sequences.len() as f64;
        let mut frames = vec![[[0.0_f64; 2]; NUM_JOINTS]; t];
        for seq in &self.sequences {
            for (acc, f) in frames.iter_mut().zip(&seq.frames) {
                for k in 0..NUM_JOINTS {
                    acc[k][0] += f[k][0];
                    acc[k][1] += f[k][1];
                }
            }
        }
        for f in frames.iter_mut() {
            for j in f.iter_mut() {
                j[0] /= n;
                j[1] /= n;
            }
        }
        SkeletonSequence::fully_valid("prior", None, frames).expect("prior construction")
    }
}

/// Prompt pair (context, masked context), query pair (prior, corrupt), and
/// an optional ground truth for the query slot.
#[derive(Clone, Debug)]
pub struct IclBatch {
    pub context: SkeletonSequence,
    pub masked_context: SkeletonSequence,
    pub prior: SkeletonSequence,
    pub corrupt: SkeletonSequence,
    pub target: Option<SkeletonSequence>,
}

impl IclBatch {
    pub fn validate(&self) -> Result<()> {
        let t = self.context.len();
        let all = [
            ("masked_context", self.masked_context.len()),
            ("prior", self.prior.len()),
            ("corrupt", self.corrupt.len()),
        ];
        for (name, len) in all {
            if len != t {
                return Err(Error::shape(format!("{t} frames"), format!("{name}: {len} frames")));
            }
        }
        if let Some(gt) = &self.target {
            if gt.len() != t {
                return Err(Error::shape(format!("{t} frames"), format!("target: {} frames", gt.len())));
            }
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.context.len()
    }
}

/// Mean squared error over all T*K*2 coordinates of two aligned sequences.
pub fn sequence_mse(a: &SkeletonSequence, b: &SkeletonSequence) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut total = 0.0;
    for t in 0..a.len() {
        for k in 0..NUM_JOINTS {
            for c in 0..2 {
                let d = a.frames[t][k][c] - b.frames[t][k][c];
                total += d * d;
            }
        }
    }
    total / (a.len() * NUM_JOINTS * 2) as f64
}

/// Completion training loss: MSE(target, base) + MSE(context, completed mask
/// slot). The prompt term compares the network's mask-slot output against the
/// clean context it was masked from.
pub fn icl_loss(
    mask_completed: &SkeletonSequence,
    base: &SkeletonSequence,
    batch: &IclBatch,
) -> Result<f64> {
    let target = batch
        .target
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("icl_loss needs a target".into()))?;
    Ok(sequence_mse(target, base) + sequence_mse(&batch.context, mask_completed))
}

/// Restores a corrupted sequence: runs the network and copies the observed
/// frames of the input through verbatim. The output is fully valid.
pub fn complete(
    model: &CompletionModel,
    s_corrupt: &SkeletonSequence,
    prior: &SkeletonSequence,
    context_pair: (&SkeletonSequence, &SkeletonSequence),
) -> Result<SkeletonSequence> {
    let batch = IclBatch {
        context: context_pair.0.clone(),
        masked_context: context_pair.1.clone(),
        prior: prior.clone(),
        corrupt: s_corrupt.clone(),
        target: None,
    };
    let (_, mut base) = icl_forward(model, &batch)?;
    for t in 0..s_corrupt.len() {
        if s_corrupt.valid[t] {
            base.frames[t] = s_corrupt.frames[t];
        }
    }
    base.id = s_corrupt.id.clone();
    base.label = s_corrupt.label;
    if !base.frames.iter().all(|f| f.iter().all(|j| j[0].is_finite() && j[1].is_finite())) {
        return Err(Error::Numeric(format!(
            "completion produced non-finite output for `{}`",
            s_corrupt.id
        )));
    }
    Ok(base)
}
