//! The completion network: per-frame encoding, feature-mixing and
//! time-mixing MLP blocks with layer normalization, and the in-context
//! forward pass over the concatenated prompt and query pairs.

use crate::error::{Error, Result};
use crate::nn::{Lifter, Linear, LinearVars, ParamVisit, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::skeleton::{SkeletonSequence, STATE_DIM};

use super::IclBatch;

/// Per-frame input width: 34 coordinates, 1 validity flag, 8 positional dims.
pub const INPUT_DIM: usize = STATE_DIM + 1 + PE_DIM;
pub const OUTPUT_DIM: usize = STATE_DIM;
pub const PE_DIM: usize = 8;

/// Sinusoidal encoding of a global frame index: frequency 10000^(-i/4) for
/// the i-th sin/cos pair, i in 0..4.
pub fn positional_encoding(pos: usize) -> [f64; PE_DIM] {
    let mut out = [0.0; PE_DIM];
    for i in 0..PE_DIM / 2 {
        let omega = 10000f64.powf(-(i as f64) / (PE_DIM / 2) as f64);
        let angle = pos as f64 * omega;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    out
}

/// One mixer block: a feature-axis MLP followed by a temporal-axis MLP, each
/// applied to a layer-normalized input with a residual connection.
#[derive(Clone, Debug, PartialEq)]
pub struct MixerBlock {
    /// E x E mix over the per-frame feature axis.
    pub spatial: Linear,
    /// L x L mix over the concatenated temporal axis (L = 4T).
    pub temporal: Linear,
}

impl ParamVisit for MixerBlock {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.spatial.visit(f);
        self.temporal.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.spatial.visit_mut(f);
        self.temporal.visit_mut(f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionModel {
    pub embed_dim: usize,
    pub num_blocks: usize,
    /// Frames per segment; the network always sees 4 segments.
    pub seq_len: usize,
    pub input_proj: Linear,
    pub blocks: Vec<MixerBlock>,
    pub output_proj: Linear,
}

impl CompletionModel {
    pub fn new(embed_dim: usize, num_blocks: usize, seq_len: usize, rng: &mut Rng) -> CompletionModel {
        let total_len = 4 * seq_len;
        CompletionModel {
            embed_dim,
            num_blocks,
            seq_len,
            input_proj: Linear::new(INPUT_DIM, embed_dim, rng),
            blocks: (0..num_blocks)
                .map(|_| MixerBlock {
                    spatial: Linear::new(embed_dim, embed_dim, rng),
                    temporal: Linear::new(total_len, total_len, rng),
                })
                .collect(),
            output_proj: Linear::new(embed_dim, OUTPUT_DIM, rng),
        }
    }

    pub fn zeros(embed_dim: usize, num_blocks: usize, seq_len: usize) -> CompletionModel {
        let total_len = 4 * seq_len;
        CompletionModel {
            embed_dim,
            num_blocks,
            seq_len,
            input_proj: Linear::zeros(INPUT_DIM, embed_dim),
            blocks: (0..num_blocks)
                .map(|_| MixerBlock {
                    spatial: Linear::zeros(embed_dim, embed_dim),
                    temporal: Linear::zeros(total_len, total_len),
                })
                .collect(),
            output_proj: Linear::zeros(embed_dim, OUTPUT_DIM),
        }
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>) -> CompletionVars<'t> {
        CompletionVars {
            seq_len: self.seq_len,
            input_proj: self.input_proj.lift(l),
            blocks: self
                .blocks
                .iter()
                .map(|b| (b.spatial.lift(l), b.temporal.lift(l)))
                .collect(),
            output_proj: self.output_proj.lift(l),
        }
    }
}

impl ParamVisit for CompletionModel {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.input_proj.visit(f);
        for b in &self.blocks {
            b.visit(f);
        }
        self.output_proj.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.input_proj.visit_mut(f);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.output_proj.visit_mut(f);
    }
}

pub struct CompletionVars<'t> {
    seq_len: usize,
    input_proj: LinearVars<'t>,
    blocks: Vec<(LinearVars<'t>, LinearVars<'t>)>,
    output_proj: LinearVars<'t>,
}

/// Encodes the four segments as a [4T, 43] tensor: coordinates, validity
/// flag, then the positional encoding of the global frame index.
pub fn encode_batch(batch: &IclBatch) -> Tensor {
    let t = batch.seq_len();
    let segments = [
        &batch.context,
        &batch.masked_context,
        &batch.prior,
        &batch.corrupt,
    ];
    let mut data = Vec::with_capacity(4 * t * INPUT_DIM);
    for (s, seq) in segments.iter().enumerate() {
        for i in 0..t {
            let pos = s * t + i;
            data.extend_from_slice(&seq.flat_frame(i));
            data.push(if seq.valid[i] { 1.0 } else { 0.0 });
            data.extend_from_slice(&positional_encoding(pos));
        }
    }
    Tensor::new(&[4 * t, INPUT_DIM], data)
}

/// Builds the completion graph on an existing tape: returns the network's
/// output at the masked-context slot and at the corrupted-query slot, each
/// as a [T, 34] variable.
pub fn icl_graph<'t>(
    tape: &'t Tape,
    vars: &CompletionVars<'t>,
    batch: &IclBatch,
) -> Result<(Var<'t>, Var<'t>)> {
    batch.validate()?;
    let t = batch.seq_len();
    if t != vars.seq_len {
        return Err(Error::shape(
            format!("{} frames per segment", vars.seq_len),
            format!("{t} frames"),
        ));
    }
    let x = tape.constant(encode_batch(batch));
    let mut h = vars.input_proj.forward(x).relu();
    for (spatial, temporal) in &vars.blocks {
        let s = spatial.forward(h.layer_norm(1));
        h = h.add(s);
        // Temporal mix: transpose to [E, L], mix the time axis, transpose back.
        let u = h.layer_norm(1).transpose();
        let z = temporal.forward(u).transpose();
        h = h.add(z);
    }
    let out = vars.output_proj.forward(h);
    let mask_completed = out.slice_rows(t, t);
    let base = out.slice_rows(3 * t, t);
    Ok((mask_completed, base))
}

/// Runs the network and returns (completed mask slot, completed query slot)
/// as fully valid sequences.
pub fn icl_forward(
    model: &CompletionModel,
    batch: &IclBatch,
) -> Result<(SkeletonSequence, SkeletonSequence)> {
    let tape = Tape::new();
    let mut lifter = Lifter::new(&tape, false);
    let vars = model.lift(&mut lifter);
    let (mask_var, base_var) = icl_graph(&tape, &vars, batch)?;
    let mask_completed =
        SkeletonSequence::from_tensor("mask_completed", batch.context.label, &mask_var.value());
    let base = SkeletonSequence::from_tensor("base", batch.corrupt.label, &base_var.value());
    Ok((mask_completed, base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::NUM_JOINTS;

    fn toy_batch(t: usize, rng: &mut Rng) -> IclBatch {
        let mk = |rng: &mut Rng, id: &str| {
            super::super::tests::random_seq(rng, t, id)
        };
        IclBatch {
            context: mk(rng, "ctx"),
            masked_context: mk(rng, "mc"),
            prior: mk(rng, "prior"),
            corrupt: mk(rng, "cor"),
            target: None,
        }
    }

    #[test]
    fn zero_model_emits_output_bias_everywhere() {
        let mut rng = Rng::new(1);
        let mut model = CompletionModel::zeros(12, 2, 4);
        // A nonzero output bias must appear verbatim in both outputs.
        for (i, b) in model.output_proj.b.data_mut().iter_mut().enumerate() {
            *b = i as f64 * 0.5;
        }
        let batch = toy_batch(4, &mut rng);
        let (mask_c, base) = icl_forward(&model, &batch).unwrap();
        for seq in [&mask_c, &base] {
            for t in 0..4 {
                let flat = seq.flat_frame(t);
                for (i, v) in flat.iter().enumerate() {
                    assert_eq!(*v, i as f64 * 0.5);
                }
            }
        }
    }

    #[test]
    fn output_shapes_are_t_by_k_by_2() {
        let mut rng = Rng::new(2);
        let model = CompletionModel::new(16, 2, 5, &mut rng);
        let batch = toy_batch(5, &mut rng);
        let (mask_c, base) = icl_forward(&model, &batch).unwrap();
        assert_eq!(mask_c.len(), 5);
        assert_eq!(base.len(), 5);
        assert_eq!(mask_c.frames[0].len(), NUM_JOINTS);
        assert!(mask_c.fully_valid_mask() && base.fully_valid_mask());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = Rng::new(3);
        let model = CompletionModel::new(16, 3, 4, &mut rng);
        let batch = toy_batch(4, &mut rng);
        let (m1, b1) = icl_forward(&model, &batch).unwrap();
        let (m2, b2) = icl_forward(&model, &batch).unwrap();
        assert_eq!(m1.frames, m2.frames);
        assert_eq!(b1.frames, b2.frames);
    }

    #[test]
    fn seq_len_mismatch_is_rejected() {
        let mut rng = Rng::new(4);
        let model = CompletionModel::new(16, 1, 8, &mut rng);
        let batch = toy_batch(4, &mut rng);
        assert!(matches!(icl_forward(&model, &batch), Err(Error::Shape { .. })));
    }

    #[test]
    fn positional_encoding_is_injective_up_to_4096() {
        let max = 4 * 1024;
        let mut rows: Vec<[f64; PE_DIM]> = (0..max).map(positional_encoding).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in rows.windows(2) {
            assert_ne!(w[0], w[1], "duplicate positional encoding");
        }
    }

    #[test]
    fn finite_outputs_for_finite_inputs() {
        let mut rng = Rng::new(5);
        let model = CompletionModel::new(34, 4, 6, &mut rng);
        let batch = toy_batch(6, &mut rng);
        let (m, b) = icl_forward(&model, &batch).unwrap();
        for seq in [m, b] {
            for t in 0..6 {
                assert!(seq.flat_frame(t).iter().all(|v| v.is_finite()));
            }
        }
    }
}
