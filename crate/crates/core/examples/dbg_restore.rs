use skelact::complete::*;
use skelact::corrupt::{corrupt, CorruptionMode, CorruptionSpec};
use skelact::metrics::mpjpe;
use skelact::recognize::PromptSet;
use skelact::synth::{gen_sequence, SynthSpec};

fn main() {
    for seed in [11u64, 22, 33] {
        let spec = SynthSpec::new(4, 63, 16, seed).unwrap(); // 252 sequences
        let all: Vec<_> = (0..4).flat_map(|c| (0..63).map(move |i| (c, i)))
            .map(|(c, i)| gen_sequence(&spec, c, i)).collect();
        let (bank_seqs, held) = all.split_at(200);
        let held = &held[..50];
        let bank = SkeletonBank::new(bank_seqs.to_vec(), 16).unwrap();
        let cfg = PretrainConfig {
            steps: 2000,
            seed,
            embed_dim: 34,
            num_blocks: 8,
            lr_max: 2e-3,
            lr_min: 1e-6,
            weight_decay: 1e-4,
        };
        let t0 = std::time::Instant::now();
        let (model, history) = pretrain_completion(&bank, &cfg).unwrap();
        let prompt = PromptSet::from_bank(&bank, seed).unwrap();
        let (mut m_model, mut m_left, mut m_right) = (0.0, 0.0, 0.0);
        for (i, gt) in held.iter().enumerate() {
            let spec = CorruptionSpec::new(0.75, CorruptionMode::BlockMiddle, seed ^ i as u64).unwrap();
            let corrupted = corrupt(gt, &spec).unwrap();
            let restored = complete(&model, &corrupted, &prompt.prior, (&prompt.context, &prompt.masked_context)).unwrap();
            let mask: Vec<bool> = corrupted.valid.iter().map(|&v| !v).collect();
            m_model += skelact::metrics::mpjpe_masked(&restored, gt, Some(&mask)).unwrap();
            m_left += skelact::metrics::mpjpe_masked(&baseline_restore(&corrupted, RestoreMethod::LeftCopy).unwrap(), gt, Some(&mask)).unwrap();
            m_right += skelact::metrics::mpjpe_masked(&baseline_restore(&corrupted, RestoreMethod::RightCopy).unwrap(), gt, Some(&mask)).unwrap();
        }
        let n = held.len() as f64;
        for i in [0, 100, 300, 600, 1000, 1500, 1999] { eprintln!("  step {i}: loss {:.5}", history[i]); }
        let head: f64 = history[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = history[history.len()-50..].iter().sum::<f64>() / 50.0;
        println!(
            "seed {seed}: model {:.4} left {:.4} right {:.4} | loss {:.5} -> {:.5} (ratio {:.3}, first {:.5}) [{:.1}s]",
            m_model / n, m_left / n, m_right / n, head, tail, tail / head, history[0], t0.elapsed().as_secs_f64()
        );
    }
}
