//! Temporal corruption and input perturbation, with seeded determinism.
//!
//! Frames are dropped in place: each dropped slot is zeroed and flagged
//! invalid, so temporal alignment is preserved and the validity mask carries
//! the surviving-frame count.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::skeleton::{SkeletonSequence, MIN_FRAMES};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptionMode {
    Random,
    BlockPrefix,
    BlockSuffix,
    BlockMiddle,
}

impl CorruptionMode {
    pub fn parse(s: &str) -> Result<CorruptionMode> {
        match s {
            "random" => Ok(CorruptionMode::Random),
            "block_prefix" => Ok(CorruptionMode::BlockPrefix),
            "block_suffix" => Ok(CorruptionMode::BlockSuffix),
            "block_middle" => Ok(CorruptionMode::BlockMiddle),
            other => Err(Error::InvalidInput(format!("unknown corruption mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CorruptionSpec {
    /// Fraction of frames to drop, in (0, 1).
    pub drop_rate: f64,
    pub mode: CorruptionMode,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(drop_rate: f64, mode: CorruptionMode, seed: u64) -> Result<CorruptionSpec> {
        if !(drop_rate > 0.0 && drop_rate < 1.0) {
            return Err(Error::invariant(
                "drop_rate",
                format!("{drop_rate} outside (0, 1)"),
            ));
        }
        Ok(CorruptionSpec {
            drop_rate,
            mode,
            seed,
        })
    }
}

/// Dropped-frame count: round(rate * T) with ties to even, so tests are exact.
pub fn drop_count(drop_rate: f64, t: usize) -> usize {
    (drop_rate * t as f64).round_ties_even() as usize
}

/// Positions a corruption spec drops for a length-T sequence.
pub fn drop_positions(spec: &CorruptionSpec, t: usize) -> Vec<usize> {
    let n = drop_count(spec.drop_rate, t);
    match spec.mode {
        CorruptionMode::Random => {
            let mut rng = Rng::new(spec.seed);
            rng.sample_indices(t, n)
        }
        CorruptionMode::BlockPrefix => (0..n).collect(),
        CorruptionMode::BlockSuffix => (t - n..t).collect(),
        CorruptionMode::BlockMiddle => {
            let off = (t - n) / 2;
            (off..off + n).collect()
        }
    }
}

/// Drops frames according to the spec. Surviving frames are bit-identical to
/// the input; the same (sequence, spec) always produces the same output.
pub fn corrupt(seq: &SkeletonSequence, spec: &CorruptionSpec) -> Result<SkeletonSequence> {
    if !seq.fully_valid_mask() {
        return Err(Error::InvalidInput(format!(
            "sequence `{}` already has invalid frames",
            seq.id
        )));
    }
    let t = seq.len();
    let n = drop_count(spec.drop_rate, t);
    if t - n < MIN_FRAMES {
        return Err(Error::InvalidInput(format!(
            "dropping {n} of {t} frames would leave fewer than {MIN_FRAMES} valid"
        )));
    }
    let mut out = seq.clone();
    for pos in drop_positions(spec, t) {
        out.frames[pos] = [[0.0; 2]; crate::skeleton::NUM_JOINTS];
        out.valid[pos] = false;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerturbationKind {
    SpatialGaussian,
    TemporalDrop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Low,
    High,
}

#[derive(Clone, Copy, Debug)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub severity: Severity,
    pub seed: u64,
}

/// Noise scale as a fraction of the sequence bounding-box diagonal.
pub fn gaussian_sigma_fraction(severity: Severity) -> f64 {
    match severity {
        Severity::Low => 0.01,
        Severity::High => 0.05,
    }
}

/// Frame-drop rate used by the temporal perturbation.
pub fn temporal_drop_rate(severity: Severity) -> f64 {
    match severity {
        Severity::Low => 0.25,
        Severity::High => 0.50,
    }
}

/// Robustness-protocol perturbation: i.i.d. Gaussian jitter on valid frames
/// (sigma scaled by the bounding-box diagonal) or additional frame dropping.
pub fn perturb(seq: &SkeletonSequence, spec: &PerturbationSpec) -> Result<SkeletonSequence> {
    match spec.kind {
        PerturbationKind::SpatialGaussian => {
            let sigma = gaussian_sigma_fraction(spec.severity) * seq.bbox_diagonal();
            if sigma == 0.0 {
                return Ok(seq.clone());
            }
            let mut rng = Rng::new(spec.seed);
            let mut out = seq.clone();
            for (frame, &ok) in out.frames.iter_mut().zip(&seq.valid) {
                if !ok {
                    continue;
                }
                for j in frame.iter_mut() {
                    j[0] += sigma * rng.normal();
                    j[1] += sigma * rng.normal();
                }
            }
            Ok(out)
        }
        PerturbationKind::TemporalDrop => {
            let spec = CorruptionSpec::new(
                temporal_drop_rate(spec.severity),
                CorruptionMode::Random,
                spec.seed,
            )?;
            corrupt(seq, &spec)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{Frame, NUM_JOINTS};

    fn moving_seq(t: usize) -> SkeletonSequence {
        let frames: Vec<Frame> = (0..t)
            .map(|i| {
                let mut f: Frame = [[0.0; 2]; NUM_JOINTS];
                for (k, j) in f.iter_mut().enumerate() {
                    *j = [0.1 * i as f64 + 0.01 * k as f64, 0.5 + 0.02 * k as f64];
                }
                f
            })
            .collect();
        SkeletonSequence::fully_valid("m", None, frames).unwrap()
    }

    #[test]
    fn quarter_rate_drops_four_of_sixteen() {
        let seq = moving_seq(16);
        let spec = CorruptionSpec::new(0.25, CorruptionMode::Random, 7).unwrap();
        let out = corrupt(&seq, &spec).unwrap();
        assert_eq!(out.num_valid(), 12);
        assert_eq!(out.valid.iter().filter(|&&v| !v).count(), 4);
    }

    #[test]
    fn single_frame_drop() {
        let seq = moving_seq(16);
        let spec = CorruptionSpec::new(1.0 / 16.0, CorruptionMode::Random, 1).unwrap();
        let out = corrupt(&seq, &spec).unwrap();
        assert_eq!(out.num_valid(), 15);
    }

    #[test]
    fn rate_bounds_are_enforced() {
        assert!(CorruptionSpec::new(0.0, CorruptionMode::Random, 0).is_err());
        assert!(CorruptionSpec::new(1.0, CorruptionMode::Random, 0).is_err());
        assert!(CorruptionSpec::new(-0.1, CorruptionMode::Random, 0).is_err());
    }

    #[test]
    fn corruption_is_deterministic() {
        let seq = moving_seq(20);
        let spec = CorruptionSpec::new(0.5, CorruptionMode::Random, 99).unwrap();
        let a = corrupt(&seq, &spec).unwrap();
        let b = corrupt(&seq, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn survivors_are_bit_identical() {
        let seq = moving_seq(24);
        let spec = CorruptionSpec::new(0.5, CorruptionMode::Random, 3).unwrap();
        let out = corrupt(&seq, &spec).unwrap();
        for t in 0..seq.len() {
            if out.valid[t] {
                assert_eq!(out.frames[t], seq.frames[t]);
            }
        }
    }

    #[test]
    fn block_modes_give_one_contiguous_run() {
        let seq = moving_seq(16);
        for mode in [
            CorruptionMode::BlockPrefix,
            CorruptionMode::BlockSuffix,
            CorruptionMode::BlockMiddle,
        ] {
            let spec = CorruptionSpec::new(0.5, mode, 0).unwrap();
            let out = corrupt(&seq, &spec).unwrap();
            let runs = out
                .valid
                .windows(2)
                .filter(|w| w[0] && !w[1])
                .count()
                + usize::from(!out.valid[0]);
            assert_eq!(runs, 1, "mode {mode:?}");
        }
    }

    #[test]
    fn middle_block_offset_matches_floor_rule() {
        let seq = moving_seq(16);
        let spec = CorruptionSpec::new(0.5, CorruptionMode::BlockMiddle, 0).unwrap();
        let out = corrupt(&seq, &spec).unwrap();
        let invalid: Vec<usize> = (0..16).filter(|&t| !out.valid[t]).collect();
        assert_eq!(invalid, (4..12).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_survivors_is_an_error() {
        let seq = moving_seq(4);
        let spec = CorruptionSpec::new(0.6, CorruptionMode::Random, 0).unwrap();
        // round(0.6 * 4) = 2 leaves 2 valid < 3.
        assert!(corrupt(&seq, &spec).is_err());
    }

    #[test]
    fn temporal_drop_low_leaves_twelve_of_sixteen() {
        let seq = moving_seq(16);
        let spec = PerturbationSpec {
            kind: PerturbationKind::TemporalDrop,
            severity: Severity::Low,
            seed: 5,
        };
        let out = perturb(&seq, &spec).unwrap();
        assert_eq!(out.num_valid(), 12);
    }

    #[test]
    fn degenerate_sequence_is_unchanged_by_gaussian() {
        let frames = vec![[[0.3, 0.3]; NUM_JOINTS]; 5];
        let seq = SkeletonSequence::fully_valid("p", None, frames).unwrap();
        let spec = PerturbationSpec {
            kind: PerturbationKind::SpatialGaussian,
            severity: Severity::High,
            seed: 5,
        };
        assert_eq!(perturb(&seq, &spec).unwrap(), seq);
    }

    #[test]
    fn gaussian_displacement_matches_half_normal_mean() {
        // Constant-in-time pose with unit bbox diagonal: per-joint displacement
        // norm is Rayleigh(sigma); its mean is sigma * sqrt(pi / 2).
        let mut frame: Frame = [[0.0; 2]; NUM_JOINTS];
        for (k, j) in frame.iter_mut().enumerate() {
            let s = k as f64 / 16.0;
            *j = [s / 2.0_f64.sqrt(), s / 2.0_f64.sqrt()];
        }
        let t = 1000;
        let seq = SkeletonSequence::fully_valid("c", None, vec![frame; t]).unwrap();
        let diag = seq.bbox_diagonal();
        assert!((diag - 1.0).abs() < 1e-12);
        let sigma = 0.01 * diag;

        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..10u64 {
            let spec = PerturbationSpec {
                kind: PerturbationKind::SpatialGaussian,
                severity: Severity::Low,
                seed,
            };
            let out = perturb(&seq, &spec).unwrap();
            for (a, b) in out.frames.iter().zip(&seq.frames) {
                for k in 0..NUM_JOINTS {
                    let dx = a[k][0] - b[k][0];
                    let dy = a[k][1] - b[k][1];
                    total += (dx * dx + dy * dy).sqrt();
                    count += 1;
                }
            }
        }
        let mean = total / count as f64;
        let expected = sigma * (std::f64::consts::PI / 2.0).sqrt();
        assert!(count >= 10_000);
        assert!(
            (mean - expected).abs() / expected < 0.10,
            "mean {mean} vs expected {expected}"
        );
    }
}
