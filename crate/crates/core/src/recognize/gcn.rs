//! Graph convolutional classifier: node-wise linear, neighbor aggregation
//! over the normalized skeleton adjacency, kernel-3 temporal convolution,
//! frozen per-channel standardization, and a residual per block; global
//! average pool and a linear head.
//!
//! The standardization buffers are calibrated once on real pipeline inputs
//! (see [`GcnModel::calibrate`]) and then frozen: statistics are shared
//! across samples, so between-sample (class) signal is preserved while every
//! layer keeps unit-scale activations, which is what makes momentum SGD at
//! the configured learning rates stable.

use crate::error::{Error, Result};
use crate::nn::{concat, Lifter, Linear, LinearVars, ParamVisit, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::skeleton::{SkeletonSequence, SkeletonTopology, NUM_JOINTS};

/// D^(-1/2) (A + I) D^(-1/2) over the topology's undirected edges.
pub fn normalized_adjacency(topo: &SkeletonTopology) -> Tensor {
    let k = NUM_JOINTS;
    let mut a = vec![0.0; k * k];
    for i in 0..k {
        a[i * k + i] = 1.0;
    }
    for &(p, c) in &topo.edges {
        a[p * k + c] = 1.0;
        a[c * k + p] = 1.0;
    }
    let deg: Vec<f64> = (0..k)
        .map(|i| a[i * k..(i + 1) * k].iter().sum::<f64>())
        .collect();
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            out[i * k + j] = a[i * k + j] / (deg[i].sqrt() * deg[j].sqrt());
        }
    }
    Tensor::new(&[k, k], out)
}

/// One GCN block. The temporal convolution is expressed as three per-offset
/// linear maps sharing a single bias. `norm_shift`/`norm_scale` are frozen
/// standardization buffers, not trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnBlock {
    pub node: Linear,
    pub t_prev: Tensor,
    pub t_curr: Tensor,
    pub t_next: Tensor,
    pub t_bias: Tensor,
    /// 1x1 projection for the residual path when channels change.
    pub residual: Option<Linear>,
    /// Per-channel shift applied to the convolution output (-mean).
    pub norm_shift: Tensor,
    /// Per-channel scale applied after the shift (1/std).
    pub norm_scale: Tensor,
}

impl GcnBlock {
    fn new(c_in: usize, c_out: usize, rng: &mut Rng) -> GcnBlock {
        // The three temporal taps sum, so each is scaled by 1/3 to keep the
        // block near unit gain before calibration.
        GcnBlock {
            node: Linear::new(c_in, c_out, rng),
            t_prev: Tensor::glorot(c_out, c_out, rng).scale(1.0 / 3.0),
            t_curr: Tensor::glorot(c_out, c_out, rng).scale(1.0 / 3.0),
            t_next: Tensor::glorot(c_out, c_out, rng).scale(1.0 / 3.0),
            t_bias: Tensor::zeros(&[c_out]),
            residual: (c_in != c_out).then(|| Linear::new(c_in, c_out, rng)),
            norm_shift: Tensor::zeros(&[c_out]),
            norm_scale: Tensor::full(&[c_out], 1.0),
        }
    }

    fn lift<'t>(&self, l: &mut Lifter<'t>) -> GcnBlockVars<'t> {
        GcnBlockVars {
            node: self.node.lift(l),
            t_prev: l.lift(&self.t_prev),
            t_curr: l.lift(&self.t_curr),
            t_next: l.lift(&self.t_next),
            t_bias: l.lift(&self.t_bias),
            residual: self.residual.as_ref().map(|r| r.lift(l)),
            norm_shift: l.constant(&self.norm_shift),
            norm_scale: l.constant(&self.norm_scale),
        }
    }
}

impl ParamVisit for GcnBlock {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.node.visit(f);
        f(&self.t_prev);
        f(&self.t_curr);
        f(&self.t_next);
        f(&self.t_bias);
        if let Some(r) = &self.residual {
            r.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.node.visit_mut(f);
        f(&mut self.t_prev);
        f(&mut self.t_curr);
        f(&mut self.t_next);
        f(&mut self.t_bias);
        if let Some(r) = &mut self.residual {
            r.visit_mut(f);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnModel {
    pub adjacency: Tensor,
    pub channels: Vec<usize>,
    pub num_classes: usize,
    pub blocks: Vec<GcnBlock>,
    pub head: Linear,
    /// Frozen per-channel shift for the raw input (-mean).
    pub input_shift: Tensor,
    /// Frozen per-channel scale for the raw input (1/std).
    pub input_scale: Tensor,
}

impl GcnModel {
    /// Channel plan [4, 32, 64] unless overridden.
    pub fn new(
        topo: &SkeletonTopology,
        channels: &[usize],
        num_classes: usize,
        rng: &mut Rng,
    ) -> GcnModel {
        assert!(channels.len() >= 2);
        GcnModel {
            adjacency: normalized_adjacency(topo),
            channels: channels.to_vec(),
            num_classes,
            blocks: channels
                .windows(2)
                .map(|w| GcnBlock::new(w[0], w[1], rng))
                .collect(),
            head: Linear::new(*channels.last().unwrap(), num_classes, rng),
            input_shift: Tensor::zeros(&[channels[0]]),
            input_scale: Tensor::full(&[channels[0]], 1.0),
        }
    }

    /// Zeroes the classification head so training starts from the uniform
    /// distribution (cross-entropy exactly ln C).
    pub fn zero_head(&mut self) {
        let c_last = *self.channels.last().unwrap();
        self.head = Linear::zeros(c_last, self.num_classes);
    }

    /// Calibrates the standardization buffers on representative [T, K, C_in]
    /// inputs: block by block, the convolution output statistics are
    /// measured per channel and frozen as shift/scale. Deterministic for a
    /// fixed input set.
    pub fn calibrate(&mut self, inputs: &[Tensor]) {
        if inputs.is_empty() {
            return;
        }
        // Input whitening first: per-channel statistics of the raw input.
        let c_in = self.channels[0];
        {
            let mut sum = vec![0.0; c_in];
            let mut sq = vec![0.0; c_in];
            let mut count = 0usize;
            for x in inputs {
                for (i, &v) in x.data().iter().enumerate() {
                    sum[i % c_in] += v;
                    sq[i % c_in] += v * v;
                }
                count += x.numel() / c_in;
            }
            let mut shift = vec![0.0; c_in];
            let mut scale = vec![1.0; c_in];
            for ch in 0..c_in {
                let mean = sum[ch] / count as f64;
                let var = (sq[ch] / count as f64 - mean * mean).max(0.0);
                shift[ch] = -mean;
                scale[ch] = 1.0 / (var + 1e-8).sqrt();
            }
            self.input_shift = Tensor::new(&[c_in], shift);
            self.input_scale = Tensor::new(&[c_in], scale);
        }
        let mut states: Vec<Tensor> = inputs.iter().map(|x| self.standardize_input(x)).collect();
        for b in 0..self.blocks.len() {
            let c_out = self.channels[b + 1];
            let mut sum = vec![0.0; c_out];
            let mut sq = vec![0.0; c_out];
            let mut count = 0usize;
            for s in &states {
                let conv = self.block_conv_value(b, s);
                for (i, &v) in conv.data().iter().enumerate() {
                    sum[i % c_out] += v;
                    sq[i % c_out] += v * v;
                }
                count += conv.numel() / c_out;
            }
            let mut shift = vec![0.0; c_out];
            let mut scale = vec![1.0; c_out];
            for ch in 0..c_out {
                let mean = sum[ch] / count as f64;
                let var = (sq[ch] / count as f64 - mean * mean).max(0.0);
                shift[ch] = -mean;
                scale[ch] = 1.0 / (var + 1e-8).sqrt();
            }
            self.blocks[b].norm_shift = Tensor::new(&[c_out], shift);
            self.blocks[b].norm_scale = Tensor::new(&[c_out], scale);
            // Advance the calibration set through the finished block.
            states = states.iter().map(|s| self.block_value(b, s)).collect();
        }
    }

    /// Applies the frozen input whitening to a raw [T, K, C_in] tensor.
    pub fn standardize_input(&self, x: &Tensor) -> Tensor {
        let c = self.channels[0];
        let mut out = x.data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v = (*v + self.input_shift.data()[i % c]) * self.input_scale.data()[i % c];
        }
        Tensor::new(x.shape(), out)
    }

    /// Pre-normalization convolution output of block `b` for one input.
    fn block_conv_value(&self, b: usize, x: &Tensor) -> Tensor {
        let tape = Tape::new();
        let mut l = Lifter::new(&tape, false);
        let bv = self.blocks[b].lift(&mut l);
        let (_, conv) = block_graph(&bv, &self.adjacency, tape.constant(x.clone()));
        conv.value()
    }

    /// Test/debug access to a single block's forward value.
    pub fn debug_block_value(&self, b: usize, x: &Tensor) -> Tensor {
        self.block_value(b, x)
    }

    /// Prints stage-wise L2 differences of one block's internals for two
    /// inputs (debugging aid).
    pub fn debug_block_stages(&self, b: usize, x0: &Tensor, x1: &Tensor) {
        let run = |x: &Tensor| -> Vec<Tensor> {
            let tape = Tape::new();
            let mut l = Lifter::new(&tape, false);
            let bv = self.blocks[b].lift(&mut l);
            let xv = tape.constant(x.clone());
            let shape = xv.shape();
            let (t, k, c_in) = (shape[0], shape[1], shape[2]);
            let c_out = bv.node.w.shape()[1];
            let lin = bv.node.forward(xv.reshape(&[t * k, c_in])).reshape(&[t, k, c_out]);
            let agg = lin.aggregate(&self.adjacency);
            let rows = agg.reshape(&[t, k * c_out]);
            let prev = rows.shift_rows(1).reshape(&[t * k, c_out]).matmul(bv.t_prev);
            let curr = rows.reshape(&[t * k, c_out]).matmul(bv.t_curr);
            let next = rows.shift_rows(-1).reshape(&[t * k, c_out]).matmul(bv.t_next);
            let conv = prev.add(curr).add(next).add_bias(bv.t_bias);
            let normed = conv.add_bias(bv.norm_shift).mul_bias(bv.norm_scale);
            let res = match &bv.residual {
                Some(r) => r.forward(xv.reshape(&[t * k, c_in])),
                None => xv.reshape(&[t * k, c_in]),
            };
            let out = normed.add(res).relu();
            vec![lin.value(), agg.value(), conv.value(), normed.value(), res.value(), out.value()]
        };
        let s0 = run(x0);
        let s1 = run(x1);
        let names = ["lin", "agg", "conv", "normed", "res", "out"];
        for ((a, b2), n) in s0.iter().zip(&s1).zip(names) {
            let d: f64 = a
                .data()
                .iter()
                .zip(b2.data())
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            eprintln!("    stage {n}: |d| = {d:.6e}");
        }
    }

    /// Full block output for one input.
    fn block_value(&self, b: usize, x: &Tensor) -> Tensor {
        let tape = Tape::new();
        let mut l = Lifter::new(&tape, false);
        let bv = self.blocks[b].lift(&mut l);
        let (out, _) = block_graph(&bv, &self.adjacency, tape.constant(x.clone()));
        out.value()
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>) -> GcnVars<'t> {
        GcnVars {
            adjacency: self.adjacency.clone(),
            blocks: self.blocks.iter().map(|b| b.lift(l)).collect(),
            head: self.head.lift(l),
            input_shift: l.constant(&self.input_shift),
            input_scale: l.constant(&self.input_scale),
        }
    }
}

impl ParamVisit for GcnModel {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        for b in &self.blocks {
            b.visit(f);
        }
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}

pub struct GcnBlockVars<'t> {
    node: LinearVars<'t>,
    t_prev: Var<'t>,
    t_curr: Var<'t>,
    t_next: Var<'t>,
    t_bias: Var<'t>,
    residual: Option<LinearVars<'t>>,
    norm_shift: Var<'t>,
    norm_scale: Var<'t>,
}

pub struct GcnVars<'t> {
    adjacency: Tensor,
    blocks: Vec<GcnBlockVars<'t>>,
    head: LinearVars<'t>,
    input_shift: Var<'t>,
    input_scale: Var<'t>,
}

/// One block on the tape: returns (block output [T, K, C_out], raw
/// pre-normalization convolution [T*K, C_out]).
fn block_graph<'t>(
    block: &GcnBlockVars<'t>,
    adjacency: &Tensor,
    x: Var<'t>,
) -> (Var<'t>, Var<'t>) {
    let shape = x.shape();
    let (t, k, c_in) = (shape[0], shape[1], shape[2]);
    let c_out = block.node.w.shape()[1];
    // Node-wise linear, then neighbor aggregation.
    let lin = block
        .node
        .forward(x.reshape(&[t * k, c_in]))
        .reshape(&[t, k, c_out]);
    let agg = lin.aggregate(adjacency);
    // Kernel-3 temporal convolution with same padding.
    let rows = agg.reshape(&[t, k * c_out]);
    let prev = rows.shift_rows(1).reshape(&[t * k, c_out]).matmul(block.t_prev);
    let curr = rows.reshape(&[t * k, c_out]).matmul(block.t_curr);
    let next = rows.shift_rows(-1).reshape(&[t * k, c_out]).matmul(block.t_next);
    let conv = prev.add(curr).add(next).add_bias(block.t_bias);
    // Frozen standardization, residual, nonlinearity.
    let normed = conv.add_bias(block.norm_shift).mul_bias(block.norm_scale);
    let res = match &block.residual {
        Some(r) => r.forward(x.reshape(&[t * k, c_in])),
        None => x.reshape(&[t * k, c_in]),
    };
    let out = normed.add(res).relu().reshape(&[t, k, c_out]);
    (out, conv)
}

/// Classifier graph over a [T, K, C_in] input; returns [1, C] logits.
pub fn classify_graph<'t>(gvars: &GcnVars<'t>, x: Var<'t>) -> Var<'t> {
    let mut h = x.add_bias(gvars.input_shift).mul_bias(gvars.input_scale);
    for block in &gvars.blocks {
        let (out, _) = block_graph(block, &gvars.adjacency, h);
        h = out;
    }
    let shape = h.shape();
    let (t, k, c_last) = (shape[0], shape[1], shape[2]);
    let pooled = h.reshape(&[t * k, c_last]).mean_axis(0).reshape(&[1, c_last]);
    gvars.head.forward(pooled)
}

/// Class probabilities for a fully valid position sequence and its fused
/// acceleration: the 4 input channels are (x, y, a_x, a_y) per joint, with
/// positions centered per joint over time.
pub fn classify(
    model: &GcnModel,
    s_pred: &SkeletonSequence,
    a_pred: &Tensor,
) -> Result<Vec<f64>> {
    let t = s_pred.len();
    if a_pred.shape() != [t, NUM_JOINTS, 2] {
        return Err(Error::shape(
            format!("[{t}, {NUM_JOINTS}, 2]"),
            format!("{:?}", a_pred.shape()),
        ));
    }
    let tape = Tape::new();
    let mut lifter = Lifter::new(&tape, false);
    let gvars = model.lift(&mut lifter);
    let pos = tape.constant(super::pipeline::center_positions(&s_pred.to_tensor()));
    let acc = tape.constant(a_pred.clone());
    let x = concat(&[pos, acc], 2);
    let logits = classify_graph(&gvars, x);
    let probs = logits.softmax(1).value();
    if !probs.is_finite() {
        return Err(Error::Numeric("non-finite class probabilities".into()));
    }
    Ok(probs.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::coco17_topology;

    #[test]
    fn adjacency_matches_brute_force_dense_computation() {
        let topo = coco17_topology();
        let got = normalized_adjacency(&topo);
        // Independent route: dense D^(-1/2) @ (A+I) @ D^(-1/2) via matmul.
        let k = NUM_JOINTS;
        let mut a = Tensor::eye(k);
        for &(p, c) in &topo.edges {
            a.data_mut()[p * k + c] = 1.0;
            a.data_mut()[c * k + p] = 1.0;
        }
        let mut d_inv_sqrt = Tensor::zeros(&[k, k]);
        for i in 0..k {
            let deg: f64 = a.data()[i * k..(i + 1) * k].iter().sum();
            d_inv_sqrt.data_mut()[i * k + i] = 1.0 / deg.sqrt();
        }
        let brute = d_inv_sqrt.matmul(&a).matmul(&d_inv_sqrt);
        for i in 0..k * k {
            assert!((got.data()[i] - brute.data()[i]).abs() < 1e-12);
        }
        // Row sums, the published check.
        for i in 0..k {
            let s_got: f64 = got.data()[i * k..(i + 1) * k].iter().sum();
            let s_brute: f64 = brute.data()[i * k..(i + 1) * k].iter().sum();
            assert!((s_got - s_brute).abs() < 1e-12);
        }
    }

    fn toy_inputs(rng: &mut Rng) -> (SkeletonSequence, Tensor) {
        let frames: Vec<crate::skeleton::Frame> = (0..6)
            .map(|_| {
                let mut f = [[0.0; 2]; NUM_JOINTS];
                for j in f.iter_mut() {
                    *j = [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)];
                }
                f
            })
            .collect();
        let seq = SkeletonSequence::fully_valid("x", None, frames).unwrap();
        let acc = Tensor::uniform(&[6, NUM_JOINTS, 2], -0.1, 0.1, rng);
        (seq, acc)
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = Rng::new(1);
        let topo = coco17_topology();
        let model = GcnModel::new(&topo, &[4, 8, 16], 5, &mut rng);
        let (seq, acc) = toy_inputs(&mut rng);
        let probs = classify(&model, &seq, &acc).unwrap();
        assert_eq!(probs.len(), 5);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_head_gives_uniform_distribution() {
        let mut rng = Rng::new(2);
        let topo = coco17_topology();
        let mut model = GcnModel::new(&topo, &[4, 8], 4, &mut rng);
        model.zero_head();
        let (seq, acc) = toy_inputs(&mut rng);
        let probs = classify(&model, &seq, &acc).unwrap();
        for p in probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_head_columns_permutes_probabilities() {
        let mut rng = Rng::new(3);
        let topo = coco17_topology();
        let model = GcnModel::new(&topo, &[4, 8], 4, &mut rng);
        let (seq, acc) = toy_inputs(&mut rng);
        let base = classify(&model, &seq, &acc).unwrap();

        // Swap classes 1 and 3 in the head (columns of w, entries of b).
        let mut swapped = model.clone();
        let (rows, cols) = (8, 4);
        for r in 0..rows {
            swapped.head.w.data_mut().swap(r * cols + 1, r * cols + 3);
        }
        swapped.head.b.data_mut().swap(1, 3);
        let perm = classify(&swapped, &seq, &acc).unwrap();
        assert!((perm[1] - base[3]).abs() < 1e-12);
        assert!((perm[3] - base[1]).abs() < 1e-12);
        assert!((perm[0] - base[0]).abs() < 1e-12);
    }

    #[test]
    fn classify_is_deterministic() {
        let mut rng = Rng::new(4);
        let topo = coco17_topology();
        let model = GcnModel::new(&topo, &[4, 8, 16], 3, &mut rng);
        let (seq, acc) = toy_inputs(&mut rng);
        let a = classify(&model, &seq, &acc).unwrap();
        let b = classify(&model, &seq, &acc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn calibration_standardizes_conv_outputs() {
        let mut rng = Rng::new(5);
        let topo = coco17_topology();
        let mut model = GcnModel::new(&topo, &[4, 8, 16], 3, &mut rng);
        let inputs: Vec<Tensor> = (0..6)
            .map(|_| Tensor::uniform(&[5, NUM_JOINTS, 4], -0.3, 0.7, &mut rng))
            .collect();
        model.calibrate(&inputs);
        // After calibration, the first block's normalized conv outputs over
        // the calibration set have per-channel mean ~0 and variance ~1.
        let c_out = 8;
        let mut sum = vec![0.0; c_out];
        let mut sq = vec![0.0; c_out];
        let mut n = 0usize;
        for x in &inputs {
            let conv = model.block_conv_value(0, x);
            for (i, &v) in conv.data().iter().enumerate() {
                let ch = i % c_out;
                let z = (v + model.blocks[0].norm_shift.data()[ch])
                    * model.blocks[0].norm_scale.data()[ch];
                sum[ch] += z;
                sq[ch] += z * z;
            }
            n += conv.numel() / c_out;
        }
        for ch in 0..c_out {
            let mean = sum[ch] / n as f64;
            let var = sq[ch] / n as f64 - mean * mean;
            assert!(mean.abs() < 1e-9, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "channel {ch} var {var}");
        }
    }

    #[test]
    fn calibration_is_invisible_to_the_optimizer_order() {
        let mut rng = Rng::new(6);
        let topo = coco17_topology();
        let mut model = GcnModel::new(&topo, &[4, 8], 3, &mut rng);
        let before = model.flat_params();
        let inputs = vec![Tensor::uniform(&[4, NUM_JOINTS, 4], -0.5, 0.5, &mut rng)];
        model.calibrate(&inputs);
        assert_eq!(model.flat_params(), before);
    }
}
