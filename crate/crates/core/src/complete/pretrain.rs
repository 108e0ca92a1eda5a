//! Stage-1 training of the completion network on a skeleton bank.
//!
//! Each step samples a clean bank sequence, masks it with one of the five
//! strategies to form the demonstration pair, corrupts a second bank sample
//! as the query (the clean copy is the target), and takes one Adam step on
//! the combined reconstruction loss under a cosine schedule.

use crate::corrupt::{corrupt, CorruptionMode, CorruptionSpec};
use crate::error::{Error, Result};
use crate::nn::{Algo, CosineSchedule, Lifter, Optimizer, ParamVisit, Tape};
use crate::rng::Rng;

use super::mask::{apply_mask, MaskStrategy, ALL_MASK_KINDS};
use super::model::{icl_graph, CompletionModel};
use super::{IclBatch, SkeletonBank};

#[derive(Clone, Copy, Debug)]
pub struct PretrainConfig {
    pub steps: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 2000,
            seed: 304,
            embed_dim: 34,
            num_blocks: 8,
            lr_max: 1e-5,
            lr_min: 5e-8,
            weight_decay: 1e-4,
        }
    }
}

const RATE_PALETTE: [f64; 3] = [0.25, 0.50, 0.75];

/// Corruption rates from the palette that leave at least the minimum number
/// of valid frames for a length-`t` sequence.
fn usable_rates(t: usize) -> Vec<f64> {
    RATE_PALETTE
        .iter()
        .copied()
        .filter(|&r| t - crate::corrupt::drop_count(r, t) >= crate::skeleton::MIN_FRAMES)
        .collect()
}

/// Draws one training batch from the bank. Exposed so inference can build the
/// same kind of fixed prompt pair from a seed.
pub fn sample_batch(bank: &SkeletonBank, rng: &mut Rng) -> Result<IclBatch> {
    let rates = usable_rates(bank.seq_len());
    if rates.is_empty() {
        return Err(Error::InvalidInput(format!(
            "bank length {} is too short for any corruption rate",
            bank.seq_len()
        )));
    }
    let ctx_idx = rng.below(bank.len());
    // A second, distinct sample when the bank allows it.
    let gt_idx = if bank.len() > 1 {
        let r = rng.below(bank.len() - 1);
        if r >= ctx_idx {
            r + 1
        } else {
            r
        }
    } else {
        ctx_idx
    };
    let context = bank.get(ctx_idx).clone();
    let gt = bank.get(gt_idx).clone();

    let corrupt_rate = rates[rng.below(rates.len())];
    // Queries are corrupted in every supported mode so restoration
    // generalizes to contiguous gaps as well as scattered drops.
    const MODES: [CorruptionMode; 4] = [
        CorruptionMode::Random,
        CorruptionMode::BlockPrefix,
        CorruptionMode::BlockSuffix,
        CorruptionMode::BlockMiddle,
    ];
    let mode = MODES[rng.below(MODES.len())];
    let spec = CorruptionSpec::new(corrupt_rate, mode, rng.next_u64())?;
    let corrupted = corrupt(&gt, &spec)?;

    let kind = ALL_MASK_KINDS[rng.below(ALL_MASK_KINDS.len())];
    let mask_rate = RATE_PALETTE[rng.below(RATE_PALETTE.len())];
    let strategy = MaskStrategy::new(kind, mask_rate, rng.next_u64())?;
    let masked_context = apply_mask(&context, &strategy, Some(&corrupted.valid))?;

    Ok(IclBatch {
        context,
        masked_context,
        prior: bank.build_prior(),
        corrupt: corrupted,
        target: Some(gt),
    })
}

/// Trains a fresh completion model on the bank; returns the model and the
/// per-step loss history. Bit-reproducible for a fixed config.
pub fn pretrain_completion(
    bank: &SkeletonBank,
    config: &PretrainConfig,
) -> Result<(CompletionModel, Vec<f64>)> {
    if bank.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "pretraining needs a bank of at least 2 sequences, got {}",
            bank.len()
        )));
    }
    let mut init_rng = Rng::from_seed_and_stream(config.seed, 0x1c1);
    let mut model = CompletionModel::new(
        config.embed_dim,
        config.num_blocks,
        bank.seq_len(),
        &mut init_rng,
    );
    let mut opt = Optimizer::new(
        Algo::adam(),
        config.weight_decay,
        CosineSchedule::new(config.lr_max, config.lr_min, config.steps),
    );
    let prior = bank.build_prior();
    let mut history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let mut rng = Rng::from_seed_and_stream(config.seed, step as u64 + 1);
        let mut batch = sample_batch(bank, &mut rng)?;
        batch.prior = prior.clone();

        let tape = Tape::new();
        let mut lifter = Lifter::new(&tape, true);
        let vars = model.lift(&mut lifter);
        let param_vars = lifter.into_vars();

        let (mask_c, base) = icl_graph(&tape, &vars, &batch)?;
        let gt = tape.constant(batch.target.as_ref().unwrap().to_flat_tensor());
        let ctx = tape.constant(batch.context.to_flat_tensor());
        let loss = base.mse(gt).add(mask_c.mse(ctx));

        let loss_val = loss.item();
        if !loss_val.is_finite() {
            return Err(Error::Numeric(format!(
                "completion pretraining diverged at step {step}: loss = {loss_val}"
            )));
        }
        history.push(loss_val);

        let grads = tape.backward(loss);
        let lr = opt.begin_step();
        let mut idx = 0;
        let mut update_err = None;
        model.visit_mut(&mut |p| {
            if update_err.is_some() {
                return;
            }
            let g = grads.get_or_zeros(param_vars[idx]);
            if let Err(e) = opt.update(idx, lr, p, &g) {
                update_err = Some(e);
            }
            idx += 1;
        });
        if let Some(e) = update_err {
            return Err(e);
        }
    }
    Ok((model, history))
}
