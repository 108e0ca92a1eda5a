//! The five temporal masking strategies used to build demonstration pairs:
//! random, pattern (copy the query's mask), prefix, suffix, and middle.

use crate::corrupt::drop_count;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::skeleton::{SkeletonSequence, NUM_JOINTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Random,
    Pattern,
    Prefix,
    Suffix,
    Middle,
}

pub const ALL_MASK_KINDS: [MaskKind; 5] = [
    MaskKind::Random,
    MaskKind::Pattern,
    MaskKind::Prefix,
    MaskKind::Suffix,
    MaskKind::Middle,
];

#[derive(Clone, Copy, Debug)]
pub struct MaskStrategy {
    pub kind: MaskKind,
    /// Fraction of frames to mask, in (0, 1). Ignored by `Pattern`.
    pub rate: f64,
    pub seed: u64,
}

impl MaskStrategy {
    pub fn new(kind: MaskKind, rate: f64, seed: u64) -> Result<MaskStrategy> {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(Error::invariant("rate", format!("{rate} outside (0, 1)")));
        }
        Ok(MaskStrategy { kind, rate, seed })
    }
}

/// Masked-frame positions for a strategy on a length-`t` sequence.
/// `query_valid` is the query's validity mask (true = observed), required by
/// the pattern strategy, which reproduces exactly the query's missing slots.
pub fn mask_positions(
    strategy: &MaskStrategy,
    t: usize,
    query_valid: Option<&[bool]>,
) -> Result<Vec<usize>> {
    let n = drop_count(strategy.rate, t);
    Ok(match strategy.kind {
        MaskKind::Random => {
            let mut rng = Rng::new(strategy.seed);
            rng.sample_indices(t, n)
        }
        MaskKind::Pattern => {
            let q = query_valid.ok_or_else(|| {
                Error::InvalidInput("pattern masking needs the query's validity mask".into())
            })?;
            if q.len() != t {
                return Err(Error::shape(format!("{t} mask entries"), format!("{}", q.len())));
            }
            (0..t).filter(|&i| !q[i]).collect()
        }
        MaskKind::Prefix => (0..n).collect(),
        MaskKind::Suffix => (t - n..t).collect(),
        MaskKind::Middle => {
            let off = (t - n) / 2;
            (off..off + n).collect()
        }
    })
}

/// Zeroes and invalidates the masked frames.
pub fn apply_mask(
    seq: &SkeletonSequence,
    strategy: &MaskStrategy,
    query_valid: Option<&[bool]>,
) -> Result<SkeletonSequence> {
    let mut out = seq.clone();
    for pos in mask_positions(strategy, seq.len(), query_valid)? {
        out.frames[pos] = [[0.0; 2]; NUM_JOINTS];
        out.valid[pos] = false;
    }
    Ok(out)
}
