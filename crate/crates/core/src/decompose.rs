//! Spatial decomposition: motion-intensity scoring over the five body
//! regions, the dynamic/static split, targeted augmentation, and fusion of
//! the three sequence variants.

#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::skeleton::{
    resample_frames, Frame, SkeletonSequence, SkeletonTopology, NUM_JOINTS, NUM_REGIONS,
};

/// Mean frame-wise displacement per joint and per region.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionProfile {
    pub per_joint: [f64; NUM_JOINTS],
    pub per_region: [f64; NUM_REGIONS],
}

/// Per-joint average displacement norm between consecutive frames, then the
/// per-region mean over each region's joints.
pub fn motion_profile(s_base: &SkeletonSequence, topo: &SkeletonTopology) -> Result<MotionProfile> {
    if !s_base.fully_valid_mask() {
        return Err(Error::InvalidInput(format!(
            "motion profile needs a fully valid sequence, `{}` has holes",
            s_base.id
        )));
    }
    let t = s_base.len();
    let mut per_joint = [0.0; NUM_JOINTS];
    for i in 0..t - 1 {
        for k in 0..NUM_JOINTS {
            let dx = s_base.frames[i + 1][k][0] - s_base.frames[i][k][0];
            let dy = s_base.frames[i + 1][k][1] - s_base.frames[i][k][1];
            per_joint[k] += (dx * dx + dy * dy).sqrt();
        }
    }
    for v in per_joint.iter_mut() {
        *v /= (t - 1) as f64;
    }
    let mut per_region = [0.0; NUM_REGIONS];
    for (j, region) in topo.regions.iter().enumerate() {
        per_region[j] = region.iter().map(|&k| per_joint[k]).sum::<f64>() / region.len() as f64;
    }
    Ok(MotionProfile {
        per_joint,
        per_region,
    })
}

/// The two most active regions and the remaining three.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionSplit {
    pub dynamic: [usize; 2],
    pub static_: [usize; 3],
}

/// Stable descending sort of regional intensity; the top two regions are
/// dynamic. Ties break toward the lower region index.
pub fn split_regions(profile: &MotionProfile) -> RegionSplit {
    let mut order: Vec<usize> = (0..NUM_REGIONS).collect();
    order.sort_by(|&a, &b| {
        profile.per_region[b]
            .partial_cmp(&profile.per_region[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut dynamic = [order[0], order[1]];
    dynamic.sort_unstable();
    let mut static_ = [order[2], order[3], order[4]];
    static_.sort_unstable();
    RegionSplit { dynamic, static_ }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentStrength {
    Strong,
    Weak,
}

/// Augmentation parameters. Defaults follow the pipeline's desk-scale
/// configuration; `identity()` turns every primitive off for tests.
#[derive(Clone, Debug)]
pub struct AugmentSpec {
    pub strength: AugmentStrength,
    pub seed: u64,
    /// Probability that each strong primitive fires.
    pub primitive_prob: f64,
    /// Temporal crop keep-ratio range.
    pub crop_ratio: (f64, f64),
    /// Per-frame drop probability (strong).
    pub frame_drop_prob: f64,
    /// Gaussian noise scale as a fraction of the bbox diagonal (strong).
    pub noise_sigma_frac: f64,
    /// Per-axis zeroing probability (strong).
    pub axis_mask_prob: f64,
    /// Bone-length rescale range (strong), applied child-ward per bone.
    pub bone_scale: (f64, f64),
    /// Time-flip probability (strong).
    pub time_flip_prob: f64,
    /// Per-joint-frame dropout probability (strong).
    pub dropout_prob: f64,
    /// Horizontal-flip probability (weak).
    pub flip_prob: f64,
}

impl AugmentSpec {
    pub fn strong(seed: u64) -> AugmentSpec {
        AugmentSpec {
            strength: AugmentStrength::Strong,
            seed,
            primitive_prob: 0.5,
            crop_ratio: (0.6, 1.0),
            frame_drop_prob: 0.1,
            noise_sigma_frac: 0.02,
            axis_mask_prob: 0.2,
            bone_scale: (0.9, 1.1),
            time_flip_prob: 0.5,
            dropout_prob: 0.05,
            flip_prob: 0.5,
        }
    }

    pub fn weak(seed: u64) -> AugmentSpec {
        AugmentSpec {
            strength: AugmentStrength::Weak,
            seed,
            primitive_prob: 0.0,
            crop_ratio: (0.9, 1.0),
            frame_drop_prob: 0.0,
            noise_sigma_frac: 0.0,
            axis_mask_prob: 0.0,
            bone_scale: (1.0, 1.0),
            time_flip_prob: 0.0,
            dropout_prob: 0.0,
            flip_prob: 0.5,
        }
    }

    /// Every primitive disabled; `augment` becomes the identity.
    pub fn identity(strength: AugmentStrength) -> AugmentSpec {
        AugmentSpec {
            strength,
            seed: 0,
            primitive_prob: 0.0,
            crop_ratio: (1.0, 1.0),
            frame_drop_prob: 0.0,
            noise_sigma_frac: 0.0,
            axis_mask_prob: 0.0,
            bone_scale: (1.0, 1.0),
            time_flip_prob: 0.0,
            dropout_prob: 0.0,
            flip_prob: 0.0,
        }
    }
}

fn crop_and_resample(frames: &[Frame], ratio: f64, rng: &mut Rng) -> Vec<Frame> {
    let t = frames.len();
    let keep = ((t as f64 * ratio).round() as usize).clamp(2, t);
    if keep == t {
        return frames.to_vec();
    }
    let start = rng.below(t - keep + 1);
    resample_frames(&frames[start..start + keep], t)
}

fn horizontal_flip(frames: &mut [Frame]) {
    // Mirror x around the sequence bbox midline; applying it twice is the
    // identity because the midline itself is flip-invariant.
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for f in frames.iter() {
        for j in f.iter() {
            min = min.min(j[0]);
            max = max.max(j[0]);
        }
    }
    let c = min + max;
    for f in frames.iter_mut() {
        for j in f.iter_mut() {
            j[0] = c - j[0];
        }
    }
}

fn bbox_diagonal_of(frames: &[Frame]) -> f64 {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for f in frames {
        for j in f {
            for a in 0..2 {
                min[a] = min[a].min(j[a]);
                max[a] = max[a].max(j[a]);
            }
        }
    }
    let dx = max[0] - min[0];
    let dy = max[1] - min[1];
    (dx * dx + dy * dy).sqrt()
}

/// Seeded augmentation. Strong specs draw from the full spatio-temporal
/// pipeline (each primitive firing independently, in a fixed order); weak
/// specs apply only a light temporal crop and a horizontal flip. The output
/// always has the input's length, restored by linear resampling.
pub fn augment(
    seq: &SkeletonSequence,
    spec: &AugmentSpec,
    topo: &SkeletonTopology,
) -> Result<SkeletonSequence> {
    if !seq.fully_valid_mask() {
        return Err(Error::InvalidInput(format!(
            "augmentation needs a fully valid sequence, `{}` has holes",
            seq.id
        )));
    }
    let mut rng = Rng::new(spec.seed);
    let t = seq.len();
    let mut frames = seq.frames.clone();

    match spec.strength {
        AugmentStrength::Weak => {
            let ratio = rng.uniform(spec.crop_ratio.0, spec.crop_ratio.1);
            frames = crop_and_resample(&frames, ratio, &mut rng);
            if rng.coin(spec.flip_prob) {
                horizontal_flip(&mut frames);
            }
        }
        AugmentStrength::Strong => {
            // 1. temporal crop + resample
            if rng.coin(spec.primitive_prob) {
                let ratio = rng.uniform(spec.crop_ratio.0, spec.crop_ratio.1);
                frames = crop_and_resample(&frames, ratio, &mut rng);
            }
            // 2. random frame drop + nearest fill
            if rng.coin(spec.primitive_prob) {
                let drops: Vec<bool> = (0..t).map(|_| rng.coin(spec.frame_drop_prob)).collect();
                if drops.iter().any(|&d| !d) {
                    let src = frames.clone();
                    for i in 0..t {
                        if !drops[i] {
                            continue;
                        }
                        let mut best = None;
                        for d in 1..t {
                            if i >= d && !drops[i - d] {
                                best = Some(i - d);
                                break;
                            }
                            if i + d < t && !drops[i + d] {
                                best = Some(i + d);
                                break;
                            }
                        }
                        frames[i] = src[best.expect("at least one kept frame")];
                    }
                }
            }
            // 3. time-warp interpolation: resample at a random monotone grid
            if rng.coin(spec.primitive_prob) {
                let mut steps: Vec<f64> = (0..t).map(|_| rng.uniform(0.7, 1.3)).collect();
                steps[0] = 0.0;
                let mut cum = 0.0;
                let positions: Vec<f64> = steps
                    .iter()
                    .map(|s| {
                        cum += s;
                        cum
                    })
                    .collect();
                let total = positions[t - 1];
                let src = frames.clone();
                for (i, f) in frames.iter_mut().enumerate() {
                    let pos = positions[i] / total * (t - 1) as f64;
                    let lo = pos.floor() as usize;
                    let hi = (lo + 1).min(t - 1);
                    let w = pos - lo as f64;
                    for k in 0..NUM_JOINTS {
                        for a in 0..2 {
                            f[k][a] = src[lo][k][a] * (1.0 - w) + src[hi][k][a] * w;
                        }
                    }
                }
            }
            // 4. Gaussian noise scaled by the bbox diagonal
            if rng.coin(spec.primitive_prob) {
                let sigma = spec.noise_sigma_frac * bbox_diagonal_of(&frames);
                if sigma > 0.0 {
                    for f in frames.iter_mut() {
                        for j in f.iter_mut() {
                            j[0] += sigma * rng.normal();
                            j[1] += sigma * rng.normal();
                        }
                    }
                }
            }
            // 5. axis masking
            if rng.coin(spec.primitive_prob) {
                for axis in 0..2 {
                    if rng.coin(spec.axis_mask_prob) {
                        for f in frames.iter_mut() {
                            for j in f.iter_mut() {
                                j[axis] = 0.0;
                            }
                        }
                    }
                }
            }
            // 6. bone rescale, child-ward down the kinematic tree
            if rng.coin(spec.primitive_prob) {
                let factors: Vec<f64> = (0..topo.edges.len())
                    .map(|_| rng.uniform(spec.bone_scale.0, spec.bone_scale.1))
                    .collect();
                for f in frames.iter_mut() {
                    let orig = *f;
                    // Edges are listed parents-first, so the new parent
                    // position is final by the time each child is placed.
                    for (e, &(p, c)) in topo.edges.iter().enumerate() {
                        let bone = [orig[c][0] - orig[p][0], orig[c][1] - orig[p][1]];
                        f[c][0] = f[p][0] + factors[e] * bone[0];
                        f[c][1] = f[p][1] + factors[e] * bone[1];
                    }
                }
            }
            // 7. time flip
            if rng.coin(spec.time_flip_prob) {
                frames.reverse();
            }
            // 8. joint-frame dropout
            if rng.coin(spec.primitive_prob) {
                for f in frames.iter_mut() {
                    for j in f.iter_mut() {
                        if rng.coin(spec.dropout_prob) {
                            *j = [0.0, 0.0];
                        }
                    }
                }
            }
        }
    }
    if frames.len() != t {
        frames = resample_frames(&frames, t);
    }
    SkeletonSequence::fully_valid(seq.id.clone(), seq.label, frames)
}

/// The three sequence variants, the split that produced them, and the fused
/// output.
#[derive(Clone, Debug)]
pub struct DecompositionResult {
    pub base: SkeletonSequence,
    pub dyna: SkeletonSequence,
    pub stat: SkeletonSequence,
    pub split: RegionSplit,
    pub pred: SkeletonSequence,
}

/// Replaces the given regions' joints with values from `source`.
fn replace_regions(
    base: &SkeletonSequence,
    source: &SkeletonSequence,
    topo: &SkeletonTopology,
    regions: &[usize],
) -> SkeletonSequence {
    let mut out = base.clone();
    for &r in regions {
        for &k in &topo.regions[r] {
            for (of, sf) in out.frames.iter_mut().zip(&source.frames) {
                of[k] = sf[k];
            }
        }
    }
    out
}

/// Builds the dynamic variant (strong augmentation on the two most active
/// regions), the static variant (weak augmentation on the remaining three),
/// and their element-wise mean with the base.
pub fn decompose(
    s_base: &SkeletonSequence,
    topo: &SkeletonTopology,
    seed: u64,
) -> Result<DecompositionResult> {
    decompose_with(
        s_base,
        topo,
        &AugmentSpec::strong(0),
        &AugmentSpec::weak(0),
        seed,
    )
}

/// As [`decompose`], with explicit augmentation templates (their seeds are
/// replaced by streams derived from `seed`).
pub fn decompose_with(
    s_base: &SkeletonSequence,
    topo: &SkeletonTopology,
    strong_template: &AugmentSpec,
    weak_template: &AugmentSpec,
    seed: u64,
) -> Result<DecompositionResult> {
    let profile = motion_profile(s_base, topo)?;
    let split = split_regions(&profile);

    let mut strong = strong_template.clone();
    strong.seed = Rng::from_seed_and_stream(seed, 0xd1).next_u64();
    let mut weak = weak_template.clone();
    weak.seed = Rng::from_seed_and_stream(seed, 0xd2).next_u64();

    let strong_aug = augment(s_base, &strong, topo)?;
    let weak_aug = augment(s_base, &weak, topo)?;

    let dyna = replace_regions(s_base, &strong_aug, topo, &split.dynamic);
    let stat = replace_regions(s_base, &weak_aug, topo, &split.static_);

    let mut pred = s_base.clone();
    for t in 0..s_base.len() {
        for k in 0..NUM_JOINTS {
            for a in 0..2 {
                pred.frames[t][k][a] =
                    (s_base.frames[t][k][a] + dyna.frames[t][k][a] + stat.frames[t][k][a]) / 3.0;
            }
        }
    }
    pred.id = format!("{}_pred", s_base.id);

    Ok(DecompositionResult {
        base: s_base.clone(),
        dyna,
        stat,
        split,
        pred,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::coco17_topology;

    fn static_seq(t: usize) -> SkeletonSequence {
        let frames = vec![crate::skeleton::rest_pose(); t];
        SkeletonSequence::fully_valid("static", None, frames).unwrap()
    }

    /// One joint translates +1 in x per frame; all others hold still.
    fn single_mover(t: usize, joint: usize) -> SkeletonSequence {
        let mut frames = vec![crate::skeleton::rest_pose(); t];
        for (i, f) in frames.iter_mut().enumerate() {
            f[joint][0] += i as f64;
        }
        SkeletonSequence::fully_valid("mover", None, frames).unwrap()
    }

    #[test]
    fn static_sequence_has_zero_profile() {
        let topo = coco17_topology();
        let p = motion_profile(&static_seq(6), &topo).unwrap();
        assert!(p.per_joint.iter().all(|&v| v == 0.0));
        assert!(p.per_region.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_mover_scores_one_and_region_mean_divides() {
        let topo = coco17_topology();
        // Joint 9 (left wrist) lives in region 1 of size 3.
        let p = motion_profile(&single_mover(5, 9), &topo).unwrap();
        assert!((p.per_joint[9] - 1.0).abs() < 1e-12);
        assert!((p.per_region[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.per_region[0], 0.0);
    }

    #[test]
    fn profile_matches_brute_force_double_loop() {
        let topo = coco17_topology();
        let mut rng = Rng::new(5);
        let frames: Vec<Frame> = (0..7)
            .map(|_| {
                let mut f: Frame = [[0.0; 2]; NUM_JOINTS];
                for j in f.iter_mut() {
                    *j = [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)];
                }
                f
            })
            .collect();
        let seq = SkeletonSequence::fully_valid("r", None, frames).unwrap();
        let p = motion_profile(&seq, &topo).unwrap();
        for k in 0..NUM_JOINTS {
            let mut acc = 0.0;
            for t in 0..6 {
                let dx = seq.frames[t + 1][k][0] - seq.frames[t][k][0];
                let dy = seq.frames[t + 1][k][1] - seq.frames[t][k][1];
                acc += dx.hypot(dy);
            }
            assert!((p.per_joint[k] - acc / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_frames_are_rejected() {
        let topo = coco17_topology();
        let mut seq = static_seq(5);
        seq.frames[2] = [[0.0; 2]; NUM_JOINTS];
        seq.valid[2] = false;
        assert!(motion_profile(&seq, &topo).is_err());
    }

    fn profile_from(values: [f64; NUM_REGIONS]) -> MotionProfile {
        MotionProfile {
            per_joint: [0.0; NUM_JOINTS],
            per_region: values,
        }
    }

    #[test]
    fn split_takes_two_largest() {
        let s = split_regions(&profile_from([5.0, 4.0, 3.0, 2.0, 1.0]));
        assert_eq!(s.dynamic, [0, 1]);
        assert_eq!(s.static_, [2, 3, 4]);
    }

    #[test]
    fn all_equal_ties_break_to_low_indices() {
        let s = split_regions(&profile_from([1.0; 5]));
        assert_eq!(s.dynamic, [0, 1]);
    }

    #[test]
    fn split_enumerated_case() {
        let s = split_regions(&profile_from([1.0, 3.0, 3.0, 2.0, 0.0]));
        assert_eq!(s.dynamic, [1, 2]);
        assert_eq!(s.static_, [0, 3, 4]);
    }

    #[test]
    fn split_is_scale_invariant() {
        let base = [0.7, 0.1, 0.4, 0.9, 0.3];
        let s0 = split_regions(&profile_from(base));
        for lambda in [0.001, 0.5, 3.0, 1e6] {
            let mut scaled = base;
            for v in scaled.iter_mut() {
                *v *= lambda;
            }
            assert_eq!(split_regions(&profile_from(scaled)), s0);
        }
    }

    #[test]
    fn identity_spec_is_identity() {
        let topo = coco17_topology();
        let seq = single_mover(8, 9);
        for strength in [AugmentStrength::Strong, AugmentStrength::Weak] {
            let out = augment(&seq, &AugmentSpec::identity(strength), &topo).unwrap();
            assert_eq!(out.frames, seq.frames);
        }
    }

    #[test]
    fn horizontal_flip_is_an_involution() {
        let seq = single_mover(6, 9);
        let mut frames = seq.frames.clone();
        horizontal_flip(&mut frames);
        assert_ne!(frames, seq.frames);
        horizontal_flip(&mut frames);
        for (a, b) in frames.iter().zip(&seq.frames) {
            for k in 0..NUM_JOINTS {
                assert!((a[k][0] - b[k][0]).abs() < 1e-12);
                assert_eq!(a[k][1], b[k][1]);
            }
        }
    }

    #[test]
    fn strong_augment_is_deterministic_per_seed() {
        let topo = coco17_topology();
        let seq = single_mover(10, 9);
        let spec = AugmentSpec::strong(41);
        let a = augment(&seq, &spec, &topo).unwrap();
        let b = augment(&seq, &spec, &topo).unwrap();
        assert_eq!(a.frames, b.frames);
        let other = augment(&seq, &AugmentSpec::strong(42), &topo).unwrap();
        assert_ne!(a.frames, other.frames);
    }

    #[test]
    fn augment_preserves_length_and_validity() {
        let topo = coco17_topology();
        let seq = single_mover(9, 15);
        for seed in 0..20 {
            let out = augment(&seq, &AugmentSpec::strong(seed), &topo).unwrap();
            assert_eq!(out.len(), 9);
            assert!(out.fully_valid_mask());
        }
    }

    #[test]
    fn decompose_with_identity_augments_gives_equal_variants() {
        let topo = coco17_topology();
        let seq = single_mover(8, 9);
        let res = decompose_with(
            &seq,
            &topo,
            &AugmentSpec::identity(AugmentStrength::Strong),
            &AugmentSpec::identity(AugmentStrength::Weak),
            7,
        )
        .unwrap();
        assert_eq!(res.dyna.frames, seq.frames);
        assert_eq!(res.stat.frames, seq.frames);
        // (x + x + x) / 3 rounds, so the fused copy is equal only up to ulps.
        for t in 0..8 {
            for k in 0..NUM_JOINTS {
                for a in 0..2 {
                    assert!((res.pred.frames[t][k][a] - seq.frames[t][k][a]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn dyna_differs_only_on_dynamic_regions() {
        let topo = coco17_topology();
        let seq = single_mover(10, 9);
        let res = decompose(&seq, &topo, 3).unwrap();
        let dynamic_joints: Vec<usize> = res
            .split
            .dynamic
            .iter()
            .flat_map(|&r| topo.regions[r].clone())
            .collect();
        for t in 0..seq.len() {
            for k in 0..NUM_JOINTS {
                if !dynamic_joints.contains(&k) {
                    assert_eq!(res.dyna.frames[t][k], seq.frames[t][k], "joint {k} changed");
                }
            }
        }
        let static_joints: Vec<usize> = res
            .split
            .static_
            .iter()
            .flat_map(|&r| topo.regions[r].clone())
            .collect();
        for t in 0..seq.len() {
            for k in 0..NUM_JOINTS {
                if !static_joints.contains(&k) {
                    assert_eq!(res.stat.frames[t][k], seq.frames[t][k]);
                }
            }
        }
    }

    #[test]
    fn split_sizes_are_always_two_and_three() {
        let topo = coco17_topology();
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let frames: Vec<Frame> = (0..6)
                .map(|_| {
                    let mut f: Frame = [[0.0; 2]; NUM_JOINTS];
                    for j in f.iter_mut() {
                        *j = [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)];
                    }
                    f
                })
                .collect();
            let seq = SkeletonSequence::fully_valid("r", None, frames).unwrap();
            let res = decompose(&seq, &topo, seed).unwrap();
            assert_eq!(res.split.dynamic.len(), 2);
            assert_eq!(res.split.static_.len(), 3);
            let mut all: Vec<usize> = res
                .split
                .dynamic
                .iter()
                .chain(res.split.static_.iter())
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn pred_is_elementwise_mean_of_three_variants() {
        let topo = coco17_topology();
        let seq = single_mover(8, 9);
        let res = decompose(&seq, &topo, 11).unwrap();
        for t in 0..8 {
            for k in 0..NUM_JOINTS {
                for a in 0..2 {
                    let mean = (res.base.frames[t][k][a]
                        + res.dyna.frames[t][k][a]
                        + res.stat.frames[t][k][a])
                        / 3.0;
                    assert!((res.pred.frames[t][k][a] - mean).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn decompose_is_reproducible() {
        let topo = coco17_topology();
        let seq = single_mover(9, 10);
        let a = decompose(&seq, &topo, 5).unwrap();
        let b = decompose(&seq, &topo, 5).unwrap();
        assert_eq!(a.dyna.frames, b.dyna.frames);
        assert_eq!(a.stat.frames, b.stat.frames);
        assert_eq!(a.pred.frames, b.pred.frames);
    }
}
