//! Non-learned restoration baselines: directional copy, linear
//! interpolation, and cyclic duplication of the valid subsequence.

#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::skeleton::{SkeletonSequence, NUM_JOINTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RestoreMethod {
    /// Fill each hole with the nearest valid frame to its left
    /// (first valid frame when the hole is a prefix).
    LeftCopy,
    /// Mirror image of `LeftCopy`.
    RightCopy,
    /// Per-joint linear interpolation between bracketing valid frames;
    /// edge gaps clamp to the nearest valid frame.
    Interpolate,
    /// Cyclic repetition of the valid subsequence over all T slots.
    Duplicate,
}

impl RestoreMethod {
    pub fn parse(s: &str) -> Result<RestoreMethod> {
        match s {
            "left_copy" => Ok(RestoreMethod::LeftCopy),
            "right_copy" => Ok(RestoreMethod::RightCopy),
            "interpolate" => Ok(RestoreMethod::Interpolate),
            "duplicate" => Ok(RestoreMethod::Duplicate),
            other => Err(Error::InvalidInput(format!("unknown restore method `{other}`"))),
        }
    }
}

pub fn baseline_restore(seq: &SkeletonSequence, method: RestoreMethod) -> Result<SkeletonSequence> {
    let valid_idx = seq.valid_indices();
    if valid_idx.is_empty() {
        return Err(Error::InvalidInput(format!(
            "sequence `{}` has no valid frames to restore from",
            seq.id
        )));
    }
    let t = seq.len();
    let mut out = seq.clone();
    out.valid = vec![true; t];
    match method {
        RestoreMethod::LeftCopy => {
            let first = valid_idx[0];
            let mut last_valid = None;
            for i in 0..t {
                if seq.valid[i] {
                    last_valid = Some(i);
                } else {
                    out.frames[i] = seq.frames[last_valid.unwrap_or(first)];
                }
            }
        }
        RestoreMethod::RightCopy => {
            let last = *valid_idx.last().unwrap();
            let mut next_valid = None;
            for i in (0..t).rev() {
                if seq.valid[i] {
                    next_valid = Some(i);
                } else {
                    out.frames[i] = seq.frames[next_valid.unwrap_or(last)];
                }
            }
        }
        RestoreMethod::Interpolate => {
            for i in 0..t {
                if seq.valid[i] {
                    continue;
                }
                let left = valid_idx.iter().rev().find(|&&v| v < i).copied();
                let right = valid_idx.iter().find(|&&v| v > i).copied();
                out.frames[i] = match (left, right) {
                    (Some(l), Some(r)) => {
                        let w = (i - l) as f64 / (r - l) as f64;
                        let mut f = [[0.0; 2]; NUM_JOINTS];
                        for k in 0..NUM_JOINTS {
                            for a in 0..2 {
                                f[k][a] =
                                    seq.frames[l][k][a] * (1.0 - w) + seq.frames[r][k][a] * w;
                            }
                        }
                        f
                    }
                    (Some(l), None) => seq.frames[l],
                    (None, Some(r)) => seq.frames[r],
                    (None, None) => unreachable!("valid_idx is non-empty"),
                };
            }
        }
        RestoreMethod::Duplicate => {
            let m = valid_idx.len();
            for i in 0..t {
                out.frames[i] = seq.frames[valid_idx[i % m]];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Frame;

    /// Sequence whose every joint sits at (value(t), value(t)).
    fn seq_with_values(values: &[f64], valid: &[bool]) -> SkeletonSequence {
        let frames: Vec<Frame> = values
            .iter()
            .zip(valid)
            .map(|(&v, &ok)| {
                if ok {
                    [[v, v]; NUM_JOINTS]
                } else {
                    [[0.0, 0.0]; NUM_JOINTS]
                }
            })
            .collect();
        SkeletonSequence::new("t", None, frames, valid.to_vec()).unwrap()
    }

    fn frame_value(seq: &SkeletonSequence, t: usize) -> f64 {
        seq.frames[t][0][0]
    }

    #[test]
    fn all_methods_are_identity_on_fully_valid_input() {
        let seq = seq_with_values(&[1.0, 2.0, 3.0, 4.0], &[true; 4]);
        for m in [
            RestoreMethod::LeftCopy,
            RestoreMethod::RightCopy,
            RestoreMethod::Interpolate,
            RestoreMethod::Duplicate,
        ] {
            let out = baseline_restore(&seq, m).unwrap();
            assert_eq!(out.frames, seq.frames, "{m:?}");
        }
    }

    #[test]
    fn interpolation_fills_midpoint() {
        let seq = seq_with_values(&[0.0, 0.0, 2.0], &[true, false, true]);
        let out = baseline_restore(&seq, RestoreMethod::Interpolate).unwrap();
        assert_eq!(frame_value(&out, 1), 1.0);
    }

    #[test]
    fn left_copy_fills_suffix_with_last_valid() {
        let seq = seq_with_values(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0], &[true, true, true, false, false, false]);
        let out = baseline_restore(&seq, RestoreMethod::LeftCopy).unwrap();
        for t in 3..6 {
            assert_eq!(frame_value(&out, t), 3.0);
        }
    }

    #[test]
    fn left_copy_prefix_hole_uses_first_valid() {
        let seq = seq_with_values(&[0.0, 0.0, 5.0, 6.0], &[false, false, true, true]);
        let out = baseline_restore(&seq, RestoreMethod::LeftCopy).unwrap();
        assert_eq!(frame_value(&out, 0), 5.0);
        assert_eq!(frame_value(&out, 1), 5.0);
    }

    #[test]
    fn right_copy_mirrors_left_copy() {
        let seq = seq_with_values(&[0.0, 4.0, 0.0, 8.0, 0.0], &[false, true, false, true, false]);
        let out = baseline_restore(&seq, RestoreMethod::RightCopy).unwrap();
        assert_eq!(frame_value(&out, 0), 4.0);
        assert_eq!(frame_value(&out, 2), 8.0);
        assert_eq!(frame_value(&out, 4), 8.0); // trailing hole clamps to last valid
    }

    #[test]
    fn interpolation_clamps_edge_gaps() {
        let seq = seq_with_values(&[0.0, 2.0, 0.0, 4.0, 0.0], &[false, true, false, true, false]);
        let out = baseline_restore(&seq, RestoreMethod::Interpolate).unwrap();
        assert_eq!(frame_value(&out, 0), 2.0);
        assert_eq!(frame_value(&out, 2), 3.0);
        assert_eq!(frame_value(&out, 4), 4.0);
    }

    #[test]
    fn duplicate_repeats_valid_subsequence_cyclically() {
        let seq = seq_with_values(&[1.0, 0.0, 2.0, 0.0, 3.0, 0.0], &[true, false, true, false, true, false]);
        let out = baseline_restore(&seq, RestoreMethod::Duplicate).unwrap();
        let got: Vec<f64> = (0..6).map(|t| frame_value(&out, t)).collect();
        assert_eq!(got, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn no_valid_frames_is_an_error() {
        let frames = vec![[[0.0; 2]; NUM_JOINTS]; 4];
        let seq = SkeletonSequence::new("z", None, frames, vec![false; 4]).unwrap();
        assert!(baseline_restore(&seq, RestoreMethod::LeftCopy).is_err());
    }

    #[test]
    fn exact_on_linear_motion_with_interior_mask() {
        // Joints move linearly in t; interpolation must reconstruct exactly.
        let t = 9;
        let frames: Vec<Frame> = (0..t)
            .map(|i| {
                let mut f: Frame = [[0.0; 2]; NUM_JOINTS];
                for (k, j) in f.iter_mut().enumerate() {
                    *j = [0.1 * i as f64 + 0.01 * k as f64, 0.2 - 0.03 * i as f64];
                }
                f
            })
            .collect();
        let gt = SkeletonSequence::fully_valid("lin", None, frames).unwrap();
        let mut corrupted = gt.clone();
        for i in [2usize, 3, 5, 6, 7] {
            corrupted.frames[i] = [[0.0; 2]; NUM_JOINTS];
            corrupted.valid[i] = false;
        }
        let out = baseline_restore(&corrupted, RestoreMethod::Interpolate).unwrap();
        let err = crate::metrics::mpjpe(&out, &gt).unwrap();
        assert!(err <= 1e-10, "mpjpe {err}");
    }
}
