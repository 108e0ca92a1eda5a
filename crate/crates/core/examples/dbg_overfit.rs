use skelact::complete::{CompletionModel, SkeletonBank};
use skelact::dynamics::{DynamicsConfig, DynamicsModel, FusionParams};
use skelact::nn::{Algo, CosineSchedule, Lifter, Optimizer, ParamVisit, Tape};
use skelact::recognize::*;
use skelact::rng::Rng;
use skelact::skeleton::coco17_topology;
use skelact::synth::{gen_sequence, SynthSpec};

fn main() {
    let spec = SynthSpec::new(4, 20, 16, 1).unwrap();
    let topo = coco17_topology();
    let mut rng = Rng::new(0x111);
    let seqs: Vec<_> = (0..8).map(|i| gen_sequence(&spec, i % 4, i / 4)).collect();
    let bank = SkeletonBank::new(seqs.clone(), 16).unwrap();
    let mut models = PipelineModels {
        completion: CompletionModel::new(8, 1, 16, &mut rng),
        dynamics: DynamicsModel::new(&DynamicsConfig::default(), &mut rng),
        fusion: FusionParams::new(16, &mut rng),
        gcn: GcnModel::new(&topo, &[4, 32, 64], 4, &mut rng),
        prompt: PromptSet::from_bank(&bank, 1).unwrap(),
    };
    models.stabilize_for_training();
    // fixed clean batch, fixed decompose seeds
    let data: Vec<_> = seqs.iter().enumerate()
        .map(|(i, s)| (prepare_sample(&models, &topo, s, i as u64).unwrap(), s.label.unwrap()))
        .collect();
    let calib: Vec<_> = data.iter().map(|(d, _)| d.classifier_input_at_zero_physics()).collect();
    models.gcn.calibrate(&calib);
    for (bi, b) in models.gcn.blocks.iter().enumerate() {
        let sc = b.norm_scale.data();
        let sh = b.norm_shift.data();
        println!("block {bi} scale min {:.3e} max {:.3e} | shift min {:.3e} max {:.3e}",
            sc.iter().cloned().fold(f64::INFINITY, f64::min), sc.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            sh.iter().cloned().fold(f64::INFINITY, f64::min), sh.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    {
        let x0 = &calib[0]; let x1 = &calib[1];
        let b00 = models.gcn.debug_block_value(0, x0);
        let b01 = models.gcn.debug_block_value(0, x1);
        let d: f64 = b00.data().iter().zip(b01.data()).map(|(a,b)| (a-b)*(a-b)).sum::<f64>().sqrt();
        println!("block0(x0) vs block0(x1) diff {:.3e}  |x0-x1| {:.3e}", d,
            x0.data().iter().zip(x1.data()).map(|(a,b)| (a-b)*(a-b)).sum::<f64>().sqrt());
    }
    // quick stats of calibrated pooled features
    {
        let (d0, _) = &data[0];
        let tape = Tape::new();
        let mut l = Lifter::new(&tape, false);
        let dv = models.dynamics.lift(&mut l);
        let fv = models.fusion.lift(&mut l);
        let gv = models.gcn.lift(&mut l);
        let g = sample_graph(&tape, &dv, &fv, &gv, d0);
        println!("logits at init: {:?}", g.logits.value().data());
    }
    let args: Vec<String> = std::env::args().collect();
    let mom: f64 = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(0.9);
    let lam: f64 = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(0.1);
    println!("momentum {mom} lambda {lam}");
    let mut opt = Optimizer::new(Algo::sgd_nesterov(mom), 5e-4, CosineSchedule::with_warmup(0.1, 0.0, 200, 40));
    for step in 0..120 {
        let tape = Tape::new();
        let mut l = Lifter::new(&tape, true);
        let dv = models.dynamics.lift(&mut l);
        let fv = models.fusion.lift(&mut l);
        let gv = models.gcn.lift(&mut l);
        let pv = l.into_vars();
        let mut total: Option<skelact::nn::Var> = None;
        let mut hits = 0;
        for (d, label) in &data {
            let g = sample_graph(&tape, &dv, &fv, &gv, d);
            let probs = g.logits.softmax(1).value();
            if rank_of_label(probs.data(), *label) == 0 { hits += 1; }
            let t = g.logits.cross_entropy(&[*label]).add(g.acc_loss.scale(lam));
            total = Some(match total { None => t, Some(a) => a.add(t) });
        }
        let loss = total.unwrap().scale(1.0 / 8.0);
        let grads = tape.backward(loss);
        let mut sq = 0.0;
        for v in &pv { if let Some(g) = grads.get(*v) { sq += g.data().iter().map(|x| x*x).sum::<f64>(); } }
        if step <= 3 {
            let mut norms = vec![];
            models.gcn.visit(&mut |t: &skelact::nn::Tensor| {
                norms.push((t.data().iter().map(|v| v*v).sum::<f64>().sqrt()*1e3).round()/1e3);
            });
            println!("  gcn tensor norms: {:?}", norms);
        }
        if step % 10 == 0 {
            println!("step {step:3} loss {:8.4} batch-acc {hits}/8 gradnorm {:9.3}", loss.item(), sq.sqrt());
            if step == 20 {
                {
                    use skelact::nn::{Lifter as L2, Tape as T2, Tensor as Ten};
                    let mut r2 = Rng::new(99);
                    let t2 = T2::new();
                    let mut lf = L2::new(&t2, false);
                    let gv2 = models.gcn.lift(&mut lf);
                    let ra = Ten::uniform(&[16, 17, 4], -1.0, 1.0, &mut r2);
                    let rb = Ten::uniform(&[16, 17, 4], -1.0, 1.0, &mut r2);
                    let la = classify_graph(&gv2, t2.constant(ra)).value();
                    let lb = classify_graph(&gv2, t2.constant(rb)).value();
                    println!("  random-in logits A {:?}", la.data().iter().map(|v| (v*1e6).round()/1e6).collect::<Vec<_>>());
                    println!("  random-in logits B {:?}", lb.data().iter().map(|v| (v*1e6).round()/1e6).collect::<Vec<_>>());
                }
                {
                    let g0 = sample_graph(&tape, &dv, &fv, &gv, &data[0].0);
                    let g1 = sample_graph(&tape, &dv, &fv, &gv, &data[1].0);
                    let x0 = g0.classifier_input.value();
                    let x1 = g1.classifier_input.value();
                    let d01: f64 = x0.data().iter().zip(x1.data()).map(|(a,b)| (a-b)*(a-b)).sum::<f64>().sqrt();
                    let dpred: f64 = data[0].0.pred_pos.data().iter().zip(data[1].0.pred_pos.data()).map(|(a,b)| (a-b)*(a-b)).sum::<f64>().sqrt();
                    println!("  |x0-x1| {:.6e}  |pred_pos0-pred_pos1| {:.6e}", d01, dpred);
                    let l0 = g0.logits.value(); let l1 = g1.logits.value();
                    let dl: f64 = l0.data().iter().zip(l1.data()).map(|(a,b)| (a-b)*(a-b)).sum::<f64>().sqrt();
                    println!("  |logits0-logits1| {:.6e}", dl);
                    models.gcn.debug_block_stages(0, &x0, &x1);
                }
                let mut pooled_all: Vec<Vec<f64>> = vec![];
                for (d, _) in data.iter().take(3) {
                    let g2 = sample_graph(&tape, &dv, &fv, &gv, d);
                    let xi = g2.classifier_input.value();
                    let b0 = models.gcn.debug_block_value(0, &xi);
                    let b1 = models.gcn.debug_block_value(1, &b0);
                    let c = 64; let tk = b1.numel()/c;
                    let mut pooled = vec![0.0; c];
                    for (ii, &v) in b1.data().iter().enumerate() { pooled[ii % c] += v / tk as f64; }
                    pooled_all.push(pooled);
                }
                let norm = |v: &Vec<f64>| v.iter().map(|x| x*x).sum::<f64>().sqrt();
                let diff01: f64 = pooled_all[0].iter().zip(&pooled_all[1]).map(|(a,b)| (a-b)*(a-b)).sum::<f64>().sqrt();
                println!("  |pooled0| {:.6} |pooled1| {:.6} |pooled0-pooled1| {:.9}", norm(&pooled_all[0]), norm(&pooled_all[1]), diff01);
                let hw: f64 = models.gcn.head.w.data().iter().map(|v| v*v).sum::<f64>().sqrt();
                let hb: f64 = models.gcn.head.b.data().iter().map(|v| v*v).sum::<f64>().sqrt();
                println!("  head |W| {hw:.6} |b| {hb:.6}");
                for (j, (d, label)) in data.iter().enumerate().take(3) {
                    let g = sample_graph(&tape, &dv, &fv, &gv, d);
                    let x = d.classifier_input_at_zero_physics();
                    let xi = g.classifier_input.value();
                    let b0 = models.gcn.debug_block_value(0, &xi);
                    let b1 = models.gcn.debug_block_value(1, &b0);
                    let c = 64; let tk = b1.numel()/c;
                    let mut pooled = vec![0.0; c];
                    for (ii, &v) in b1.data().iter().enumerate() { pooled[ii % c] += v / tk as f64; }
                    println!("    pooled[0..4] {:?}", &pooled[..4]);
                    let xs: f64 = { let m = xi.data().iter().sum::<f64>()/xi.numel() as f64; (xi.data().iter().map(|v| (v-m)*(v-m)).sum::<f64>()/xi.numel() as f64).sqrt() };
                    println!("  sample {j} label {label} graph-in std {xs:.6} in[0] {:.6} logits {:?}", x.data()[0],
                        g.logits.value().data().iter().map(|v| (v*1e7).round()/1e7).collect::<Vec<_>>());
                }
            }
        }
        let clip_at: f64 = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(5.0);
        let clip = if sq.sqrt() > clip_at { clip_at / sq.sqrt() } else { 1.0 };
        let lr = opt.begin_step();
        let mut i = 0; let mut err = None;
        let mut apply = |p: &mut skelact::nn::Tensor| {
            if err.is_some() { return; }
            let g = grads.get_or_zeros(pv[i]).scale(clip);
            if let Err(e) = opt.update(i, lr, p, &g) { err = Some(e); }
            i += 1;
        };
        models.dynamics.visit_mut(&mut apply);
        models.fusion.visit_mut(&mut apply);
        models.gcn.visit_mut(&mut apply);
        if err.is_some() { println!("ERR {:?}", err.unwrap().to_string()); break; }
    }
}
