#![allow(clippy::cloned_ref_to_slice_refs)]

//! Gradient verification: every tape operation and every composite block is
//! checked against central finite differences. The numeric side only ever
//! runs forward passes, so these checks are independent of the backward
//! implementation they validate.

use crate::complete::{CompletionModel, IclBatch};
use crate::dynamics::{fusion_graph, physics_graph, DynamicsConfig, DynamicsModel, FusionParams};
use crate::nn::fdiff::{max_rel_grad_err, rel_err, FD_STEP};
use crate::nn::{concat, Lifter, Mlp, ParamVisit, Tape, Tensor, Var};
use crate::recognize::{classify_graph, sample_graph, GcnModel, PromptSet};
use crate::rng::Rng;
use crate::skeleton::{coco17_topology, SkeletonSequence, NUM_JOINTS};

/// Worst relative error between the tape gradients of a model's parameters
/// and central finite differences of the same scalar loss.
pub fn max_param_grad_err<M, F>(model: &M, loss_of: F) -> f64
where
    M: ParamVisit + Clone,
    F: for<'t> Fn(&M, &'t Tape, &mut Lifter<'t>) -> Var<'t>,
{
    let tape = Tape::new();
    let mut lifter = Lifter::new(&tape, true);
    let loss = loss_of(model, &tape, &mut lifter);
    let grads = tape.backward(loss);
    let analytic: Vec<f64> = lifter
        .vars()
        .iter()
        .flat_map(|v| grads.get_or_zeros(*v).into_data())
        .collect();

    let eval = |m: &M| -> f64 {
        let t = Tape::new();
        let mut l = Lifter::new(&t, false);
        loss_of(m, &t, &mut l).item()
    };

    let flat = model.flat_params();
    assert_eq!(flat.len(), analytic.len());
    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    let mut work = flat.clone();
    for i in 0..flat.len() {
        work[i] = flat[i] + FD_STEP;
        probe.load_flat(&work).unwrap();
        let f_plus = eval(&probe);
        work[i] = flat[i] - FD_STEP;
        probe.load_flat(&work).unwrap();
        let f_minus = eval(&probe);
        work[i] = flat[i];
        let numeric = (f_plus - f_minus) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

/// Checks every primitive tape operation for one seed. Returns
/// (op name, worst relative error) pairs.
pub fn check_core_ops(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    // A fixed constant weighting turns non-scalar outputs into a scalar loss
    // with non-trivial gradients.
    macro_rules! check {
        ($name:expr, $inputs:expr, $build:expr) => {
            out.push(($name, max_rel_grad_err(&$inputs, $build)));
        };
    }

    let a34 = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
    let b34 = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
    let w34 = Tensor::uniform(&[3, 4], 0.5, 1.5, &mut rng);
    let bias = Tensor::uniform(&[4], -1.0, 1.0, &mut rng);

    {
        let w = w34.clone();
        check!("add", [a34.clone(), b34.clone()], move |t, v| {
            v[0].add(v[1]).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let w = w34.clone();
        check!("add_bias", [a34.clone(), bias.clone()], move |t, v| {
            v[0].add_bias(v[1]).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let w = w34.clone();
        check!("sub", [a34.clone(), b34.clone()], move |t, v| {
            v[0].sub(v[1]).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let w = w34.clone();
        check!("mul", [a34.clone(), b34.clone()], move |t, v| {
            v[0].mul(v[1]).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let w = w34.clone();
        check!("scale", [a34.clone()], move |t, v| {
            v[0].scale(-1.7).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let w = w34.clone();
        check!("mul_bias", [a34.clone(), bias.clone()], move |t, v| {
            v[0].mul_bias(v[1]).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let m1 = Tensor::uniform(&[3, 5], -1.0, 1.0, &mut rng);
        let m2 = Tensor::uniform(&[5, 2], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[3, 2], 0.5, 1.5, &mut rng);
        check!("matmul", [m1, m2], move |t, v| {
            v[0].matmul(v[1]).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let m1 = Tensor::uniform(&[2, 3, 4], -1.0, 1.0, &mut rng);
        let m2 = Tensor::uniform(&[2, 4, 2], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[2, 3, 2], 0.5, 1.5, &mut rng);
        check!("bmm", [m1, m2], move |t, v| {
            v[0].bmm(v[1]).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let w = Tensor::uniform(&[4, 3], 0.5, 1.5, &mut rng);
        check!("transpose", [a34.clone()], move |t, v| {
            v[0].transpose().mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let m = Tensor::uniform(&[2, 3, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[2, 4, 3], 0.5, 1.5, &mut rng);
        check!("transpose_batch", [m], move |t, v| {
            v[0].transpose_batch().mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let w = Tensor::uniform(&[12], 0.5, 1.5, &mut rng);
        check!("reshape", [a34.clone()], move |t, v| {
            v[0].reshape(&[12]).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        // Keep inputs away from the kink at zero.
        let x = Tensor::uniform(&[3, 4], 0.1, 1.0, &mut rng)
            .zip(&Tensor::uniform(&[3, 4], 0.0, 1.0, &mut rng), |a, b| {
                if b > 0.5 {
                    a
                } else {
                    -a
                }
            });
        let w = w34.clone();
        check!("relu", [x], move |t, v| {
            v[0].relu().mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let w = w34.clone();
        check!("tanh", [a34.clone()], move |t, v| {
            v[0].tanh().mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let w = w34.clone();
        check!("softmax", [a34.clone()], move |t, v| {
            v[0].softmax(1).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let w = w34.clone();
        check!("layer_norm", [a34.clone()], move |t, v| {
            v[0].layer_norm(1).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let m = Tensor::uniform(&[2, 3, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[2, 4], 0.5, 1.5, &mut rng);
        check!("mean_axis", [m], move |t, v| {
            v[0].mean_axis(1).mul(t.constant(w.clone())).mean_all()
        });
    }
    check!("mean_all", [a34.clone()], |_t, v: &[Var<'_>]| v[0].mean_all());
    {
        let c = Tensor::uniform(&[2, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[5, 4], 0.5, 1.5, &mut rng);
        check!("concat", [a34.clone(), c], move |t, v| {
            concat(&[v[0], v[1]], 0).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let w = Tensor::uniform(&[2, 4], 0.5, 1.5, &mut rng);
        check!("slice_rows", [a34.clone()], move |t, v| {
            v[0].slice_rows(1, 2).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let w = w34.clone();
        check!("shift_rows", [a34.clone()], move |t, v| {
            v[0].shift_rows(1)
                .add(v[0].shift_rows(-1))
                .mul(t.constant(w.clone()))
                .mean_all()
        });
    }
    {
        let x = Tensor::uniform(&[2, 3, 2], -1.0, 1.0, &mut rng);
        let adj = Tensor::uniform(&[3, 3], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[2, 3, 2], 0.5, 1.5, &mut rng);
        check!("aggregate", [x], move |t, v| {
            v[0].aggregate(&adj).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let row = Tensor::uniform(&[1, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[3, 4], 0.5, 1.5, &mut rng);
        check!("repeat_rows", [row], move |t, v| {
            v[0].repeat_rows(3).mul(t.constant(w.clone())).mean_all()
        });
    }
    {
        let packed = Tensor::uniform(&[2, 6], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[2, 3, 3], 0.5, 1.5, &mut rng);
        check!("sym_from_upper", [packed], move |t, v| {
            v[0].sym_from_upper(3).mul(t.constant(w.clone())).mean_all()
        });
    }
    check!("mse", [a34.clone(), b34.clone()], |_t, v: &[Var<'_>]| v[0].mse(v[1]));
    {
        let logits = Tensor::uniform(&[3, 5], -2.0, 2.0, &mut rng);
        check!("cross_entropy", [logits], |_t, v: &[Var<'_>]| {
            v[0].cross_entropy(&[1, 4, 0])
        });
    }
    out
}

fn random_seq(rng: &mut Rng, t: usize, id: &str) -> SkeletonSequence {
    let frames = (0..t)
        .map(|_| {
            let mut f = [[0.0; 2]; NUM_JOINTS];
            for j in f.iter_mut() {
                *j = [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)];
            }
            f
        })
        .collect();
    SkeletonSequence::fully_valid(id, Some(0), frames).unwrap()
}

/// Checks every composite block for one seed: the mixer (S-MLP/T-MLP) stack
/// through the completion loss, the four dynamics estimators (individually
/// and through the full physics combination), the attention fusion, a GCN
/// block through the classification loss, and the combined stage-2 loss.
pub fn check_composite_blocks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();

    // Mixer blocks through the completion (reconstruction) loss.
    {
        let model = CompletionModel::new(8, 1, 3, &mut rng);
        let batch = IclBatch {
            context: random_seq(&mut rng, 3, "ctx"),
            masked_context: random_seq(&mut rng, 3, "mc"),
            prior: random_seq(&mut rng, 3, "prior"),
            corrupt: random_seq(&mut rng, 3, "cor"),
            target: Some(random_seq(&mut rng, 3, "gt")),
        };
        let err = max_param_grad_err(&model, |m, tape, lifter| {
            let vars = m.lift(lifter);
            let (mask_c, base) = crate::complete::icl_graph(tape, &vars, &batch).unwrap();
            let gt = tape.constant(batch.target.as_ref().unwrap().to_flat_tensor());
            let ctx = tape.constant(batch.context.to_flat_tensor());
            base.mse(gt).add(mask_c.mse(ctx))
        });
        out.push(("mixer_block_icl_loss", err));
    }

    // The four estimator MLPs in isolation.
    for (name, dims) in [
        ("estimator_g", vec![4usize, 6, 6, 4]),
        ("estimator_tau", vec![4, 6, 6, 4]),
        ("estimator_c", vec![8, 6, 6, 10]),
        ("estimator_m", vec![4, 6, 6, 10]),
    ] {
        let mlp = Mlp::new(&dims, &mut rng);
        let x = Tensor::uniform(&[3, dims[0]], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[3, *dims.last().unwrap()], 0.5, 1.5, &mut rng);
        let err = max_param_grad_err(&mlp, |m, tape, lifter| {
            let vars = m.lift(lifter);
            vars.forward(tape.constant(x.clone()))
                .mul(tape.constant(w.clone()))
                .mean_all()
        });
        out.push((name, err));
    }

    // All estimators together through the physics combination.
    {
        let cfg = DynamicsConfig {
            state_dim: 4,
            feature_dim: 2,
            hidden_dim: 4,
        };
        let model = DynamicsModel::new(&cfg, &mut rng);
        let pos = Tensor::uniform(&[4, 4], -1.0, 1.0, &mut rng);
        let vel = crate::dynamics::velocity_flat(&pos);
        let target = Tensor::uniform(&[4, 4], -1.0, 1.0, &mut rng);
        let err = max_param_grad_err(&model, |m, tape, lifter| {
            let vars = m.lift(lifter);
            let phys = physics_graph(tape, &vars, &pos, &vel);
            phys.accel.mse(tape.constant(target.clone()))
        });
        out.push(("dynamics_combination", err));
    }

    // Attention fusion through the acceleration-consistency loss.
    {
        let fusion = FusionParams::new(4, &mut rng);
        let pseudo = Tensor::uniform(&[2, NUM_JOINTS, 2], -1.0, 1.0, &mut rng);
        let physics = Tensor::uniform(&[2, NUM_JOINTS * 2], -1.0, 1.0, &mut rng);
        let err = max_param_grad_err(&fusion, |f, tape, lifter| {
            let fvars = f.lift(lifter);
            let p = tape.constant(pseudo.clone());
            let q = tape.constant(physics.clone());
            fusion_graph(&fvars, p, q).mse(p)
        });
        out.push(("attention_fusion", err));
    }

    // GCN blocks (with and without channel change) through cross-entropy.
    {
        let topo = coco17_topology();
        let model = GcnModel::new(&topo, &[4, 6, 6], 3, &mut rng);
        let x = Tensor::uniform(&[3, NUM_JOINTS, 4], -1.0, 1.0, &mut rng);
        let err = max_param_grad_err(&model, |m, tape, lifter| {
            let gvars = m.lift(lifter);
            classify_graph(&gvars, tape.constant(x.clone())).cross_entropy(&[2])
        });
        out.push(("gcn_block_cross_entropy", err));
    }

    // The full stage-2 tail: dynamics + fusion + GCN under CE + lambda * acc.
    {
        let bundle = TailBundle::random(&mut rng);
        let seq = random_seq(&mut rng, 4, "sample");
        let topo = coco17_topology();
        let prompt = PromptSet {
            prior: seq.clone(),
            context: seq.clone(),
            masked_context: seq.clone(),
        };
        let models = crate::recognize::PipelineModels {
            completion: CompletionModel::zeros(4, 1, 4),
            dynamics: bundle.dynamics.clone(),
            fusion: bundle.fusion.clone(),
            gcn: bundle.gcn.clone(),
            prompt,
        };
        let data = crate::recognize::prepare_sample(&models, &topo, &seq, 7).unwrap();
        let err = max_param_grad_err(&bundle, |b, tape, lifter| {
            let dvars = b.dynamics.lift(lifter);
            let fvars = b.fusion.lift(lifter);
            let gvars = b.gcn.lift(lifter);
            let graph = sample_graph(tape, &dvars, &fvars, &gvars, &data);
            graph
                .logits
                .cross_entropy(&[0])
                .add(graph.acc_loss.scale(0.1))
        });
        out.push(("total_loss_tail", err));
    }

    out
}

/// Dynamics + fusion + classifier bundle used for the combined-loss check.
#[derive(Clone)]
struct TailBundle {
    dynamics: DynamicsModel,
    fusion: FusionParams,
    gcn: GcnModel,
}

impl TailBundle {
    fn random(rng: &mut Rng) -> TailBundle {
        TailBundle {
            dynamics: DynamicsModel::new(
                &DynamicsConfig {
                    state_dim: NUM_JOINTS * 2,
                    feature_dim: 2,
                    hidden_dim: 3,
                },
                rng,
            ),
            fusion: FusionParams::new(2, rng),
            gcn: GcnModel::new(&coco17_topology(), &[4, 5], 2, rng),
        }
    }
}

impl ParamVisit for TailBundle {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.dynamics.visit(f);
        self.fusion.visit(f);
        self.gcn.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.dynamics.visit_mut(f);
        self.fusion.visit_mut(f);
        self.gcn.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_core_ops_pass_at_seed_zero() {
        for (name, err) in check_core_ops(0) {
            assert!(err < 1e-5, "{name}: {err}");
        }
    }

    #[test]
    fn all_composite_blocks_pass_at_seed_zero() {
        for (name, err) in check_composite_blocks(0) {
            assert!(err < 1e-5, "{name}: {err}");
        }
    }
}
