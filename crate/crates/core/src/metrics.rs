//! Restoration metrics: MPJPE, scale-normalized MPJPE, and velocity error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{SkeletonSequence, NUM_JOINTS};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RestorationReport {
    pub mpjpe: f64,
    pub n_mpjpe: f64,
    pub mpjve: f64,
}

fn check_pair(pred: &SkeletonSequence, gt: &SkeletonSequence) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::shape(
            format!("{} frames", gt.len()),
            format!("{} frames", pred.len()),
        ));
    }
    if !gt.fully_valid_mask() {
        return Err(Error::InvalidInput(format!(
            "ground truth `{}` has invalid frames",
            gt.id
        )));
    }
    Ok(())
}

/// Mean over (frame, joint) of the Euclidean distance between predicted and
/// ground-truth joint positions. When `frame_mask` is given, only frames with
/// `frame_mask[t] == true` are averaged (used to score filled frames only).
pub fn mpjpe_masked(
    pred: &SkeletonSequence,
    gt: &SkeletonSequence,
    frame_mask: Option<&[bool]>,
) -> Result<f64> {
    check_pair(pred, gt)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 0..pred.len() {
        if let Some(mask) = frame_mask {
            if !mask[t] {
                continue;
            }
        }
        for k in 0..NUM_JOINTS {
            let dx = pred.frames[t][k][0] - gt.frames[t][k][0];
            let dy = pred.frames[t][k][1] - gt.frames[t][k][1];
            total += (dx * dx + dy * dy).sqrt();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("mask selects no frames".into()));
    }
    Ok(total / count as f64)
}

pub fn mpjpe(pred: &SkeletonSequence, gt: &SkeletonSequence) -> Result<f64> {
    mpjpe_masked(pred, gt, None)
}

/// Least-squares scale of `pred` onto `gt` over all coordinates.
pub fn optimal_scale(pred: &SkeletonSequence, gt: &SkeletonSequence) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..pred.len() {
        for k in 0..NUM_JOINTS {
            for a in 0..2 {
                num += pred.frames[t][k][a] * gt.frames[t][k][a];
                den += pred.frames[t][k][a] * pred.frames[t][k][a];
            }
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// MPJPE after rescaling the prediction by the global least-squares scale.
/// An identically-zero prediction degenerates to s* = 0 (scored against a
/// zero sequence) rather than erroring.
pub fn n_mpjpe(pred: &SkeletonSequence, gt: &SkeletonSequence) -> Result<f64> {
    check_pair(pred, gt)?;
    let s = optimal_scale(pred, gt);
    let mut scaled = pred.clone();
    for frame in scaled.frames.iter_mut() {
        for j in frame.iter_mut() {
            j[0] *= s;
            j[1] *= s;
        }
    }
    mpjpe(&scaled, gt)
}

/// Mean per-joint velocity error: mean over (t, joint) of the distance
/// between frame-to-frame displacement vectors, with unit frame spacing.
pub fn mpjve(pred: &SkeletonSequence, gt: &SkeletonSequence) -> Result<f64> {
    check_pair(pred, gt)?;
    let t = pred.len();
    if t < 2 {
        return Err(Error::InvalidInput("mpjve needs at least two frames".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..t - 1 {
        for k in 0..NUM_JOINTS {
            let vpx = pred.frames[i + 1][k][0] - pred.frames[i][k][0];
            let vpy = pred.frames[i + 1][k][1] - pred.frames[i][k][1];
            let vgx = gt.frames[i + 1][k][0] - gt.frames[i][k][0];
            let vgy = gt.frames[i + 1][k][1] - gt.frames[i][k][1];
            let dx = vpx - vgx;
            let dy = vpy - vgy;
            total += (dx * dx + dy * dy).sqrt();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Full restoration report for one prediction.
pub fn report(pred: &SkeletonSequence, gt: &SkeletonSequence) -> Result<RestorationReport> {
    Ok(RestorationReport {
        mpjpe: mpjpe(pred, gt)?,
        n_mpjpe: n_mpjpe(pred, gt)?,
        mpjve: mpjve(pred, gt)?,
    })
}

/// Mean report over aligned prediction/ground-truth lists. When masks are
/// supplied (the corrupted inputs), MPJPE is averaged over the frames that
/// were invalid in the corrupted input; otherwise over all frames.
pub fn report_many(
    preds: &[SkeletonSequence],
    gts: &[SkeletonSequence],
    masks: Option<&[SkeletonSequence]>,
) -> Result<RestorationReport> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} predictions vs {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let mut acc = RestorationReport {
        mpjpe: 0.0,
        n_mpjpe: 0.0,
        mpjve: 0.0,
    };
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        let frame_mask: Option<Vec<bool>> =
            masks.map(|m| m[i].valid.iter().map(|&v| !v).collect());
        acc.mpjpe += mpjpe_masked(p, g, frame_mask.as_deref())?;
        acc.n_mpjpe += n_mpjpe(p, g)?;
        acc.mpjve += mpjve(p, g)?;
    }
    let n = preds.len() as f64;
    acc.mpjpe /= n;
    acc.n_mpjpe /= n;
    acc.mpjve /= n;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::skeleton::Frame;

    fn random_seq(rng: &mut Rng, t: usize) -> SkeletonSequence {
        let frames: Vec<Frame> = (0..t)
            .map(|_| {
                let mut f: Frame = [[0.0; 2]; NUM_JOINTS];
                for j in f.iter_mut() {
                    *j = [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)];
                }
                f
            })
            .collect();
        SkeletonSequence::fully_valid("r", None, frames).unwrap()
    }

    fn offset(seq: &SkeletonSequence, dx: f64, dy: f64) -> SkeletonSequence {
        let mut out = seq.clone();
        for f in out.frames.iter_mut() {
            for j in f.iter_mut() {
                j[0] += dx;
                j[1] += dy;
            }
        }
        out
    }

    #[test]
    fn identical_sequences_have_zero_error() {
        let mut rng = Rng::new(1);
        let s = random_seq(&mut rng, 6);
        assert_eq!(mpjpe(&s, &s).unwrap(), 0.0);
        assert_eq!(n_mpjpe(&s, &s).unwrap(), 0.0);
        assert_eq!(mpjve(&s, &s).unwrap(), 0.0);
    }

    #[test]
    fn constant_three_four_offset_gives_five() {
        let mut rng = Rng::new(2);
        let gt = random_seq(&mut rng, 5);
        let pred = offset(&gt, 3.0, 4.0);
        assert!((mpjpe(&pred, &gt).unwrap() - 5.0).abs() < 1e-12);
        // Velocities are unchanged by a constant offset, up to the rounding
        // of (g + c) - (g' + c).
        assert!(mpjve(&pred, &gt).unwrap() < 1e-12);
    }

    #[test]
    fn mpjpe_matches_brute_force() {
        let mut rng = Rng::new(3);
        let gt = random_seq(&mut rng, 8);
        let pred = random_seq(&mut rng, 8);
        let mut total = 0.0;
        for t in 0..8 {
            for k in 0..NUM_JOINTS {
                let d0 = pred.frames[t][k][0] - gt.frames[t][k][0];
                let d1 = pred.frames[t][k][1] - gt.frames[t][k][1];
                total += d0.hypot(d1);
            }
        }
        let brute = total / (8.0 * NUM_JOINTS as f64);
        assert!((mpjpe(&pred, &gt).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn doubled_prediction_normalizes_to_zero() {
        let mut rng = Rng::new(4);
        let gt = random_seq(&mut rng, 6);
        let mut pred = gt.clone();
        for f in pred.frames.iter_mut() {
            for j in f.iter_mut() {
                j[0] *= 2.0;
                j[1] *= 2.0;
            }
        }
        assert!((optimal_scale(&pred, &gt) - 0.5).abs() < 1e-12);
        assert!(n_mpjpe(&pred, &gt).unwrap() < 1e-12);
    }

    #[test]
    fn optimal_scale_matches_independent_regression() {
        let mut rng = Rng::new(5);
        let gt = random_seq(&mut rng, 7);
        let pred = random_seq(&mut rng, 7);
        // Independent 1-D least squares: minimize sum (s*p - g)^2 by scanning
        // the normal equation solved with plain accumulators.
        let (mut sp2, mut spg) = (0.0, 0.0);
        for t in 0..7 {
            for k in 0..NUM_JOINTS {
                for a in 0..2 {
                    sp2 += pred.frames[t][k][a].powi(2);
                    spg += pred.frames[t][k][a] * gt.frames[t][k][a];
                }
            }
        }
        assert!((optimal_scale(&pred, &gt) - spg / sp2).abs() < 1e-14);
    }

    #[test]
    fn zero_prediction_degenerates_to_zero_scale() {
        let mut rng = Rng::new(6);
        let gt = random_seq(&mut rng, 5);
        let zero = SkeletonSequence::fully_valid("z", None, vec![[[0.0; 2]; NUM_JOINTS]; 5]).unwrap();
        assert_eq!(optimal_scale(&zero, &gt), 0.0);
        let v = n_mpjpe(&zero, &gt).unwrap();
        assert!((v - mpjpe(&zero, &gt).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn static_pred_against_unit_velocity_gt() {
        let base: Frame = [[0.5; 2]; NUM_JOINTS];
        let pred = SkeletonSequence::fully_valid("s", None, vec![base; 4]).unwrap();
        let mut frames = vec![base; 4];
        for (t, f) in frames.iter_mut().enumerate() {
            for j in f.iter_mut() {
                j[0] += t as f64;
            }
        }
        let gt = SkeletonSequence::fully_valid("g", None, frames).unwrap();
        assert!((mpjve(&pred, &gt).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mpjve_matches_brute_force() {
        let mut rng = Rng::new(7);
        let gt = random_seq(&mut rng, 9);
        let pred = random_seq(&mut rng, 9);
        let mut total = 0.0;
        for t in 0..8 {
            for k in 0..NUM_JOINTS {
                let dx = (pred.frames[t + 1][k][0] - pred.frames[t][k][0])
                    - (gt.frames[t + 1][k][0] - gt.frames[t][k][0]);
                let dy = (pred.frames[t + 1][k][1] - pred.frames[t][k][1])
                    - (gt.frames[t + 1][k][1] - gt.frames[t][k][1]);
                total += dx.hypot(dy);
            }
        }
        let brute = total / (8.0 * NUM_JOINTS as f64);
        assert!((mpjve(&pred, &gt).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn mpjve_invariant_to_translating_either_argument() {
        let mut rng = Rng::new(8);
        let gt = random_seq(&mut rng, 6);
        let pred = random_seq(&mut rng, 6);
        let v0 = mpjve(&pred, &gt).unwrap();
        assert!((mpjve(&offset(&pred, 0.7, -0.3), &gt).unwrap() - v0).abs() < 1e-12);
        assert!((mpjve(&pred, &offset(&gt, -1.1, 2.2)).unwrap() - v0).abs() < 1e-12);
    }

    #[test]
    fn translation_equivariance_of_mpjpe() {
        let mut rng = Rng::new(9);
        let gt = random_seq(&mut rng, 6);
        let pred = random_seq(&mut rng, 6);
        let v0 = mpjpe(&pred, &gt).unwrap();
        let v1 = mpjpe(&offset(&pred, 0.4, 0.9), &offset(&gt, 0.4, 0.9)).unwrap();
        assert!((v0 - v1).abs() < 1e-12);
    }
}
