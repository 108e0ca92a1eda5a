//! Domain types: pose sequences, the COCO-17 topology, and label spaces.

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Number of joints. Fixed by the COCO-17 keypoint layout.
pub const NUM_JOINTS: usize = 17;
/// Flattened per-frame state dimension (x, y per joint).
pub const STATE_DIM: usize = NUM_JOINTS * 2;
/// Number of semantic body regions.
pub const NUM_REGIONS: usize = 5;
/// Minimum sequence length; finite differences need three frames.
pub const MIN_FRAMES: usize = 3;

pub type Frame = [[f64; 2]; NUM_JOINTS];

/// A 2-D pose sequence with a per-frame validity mask. Frames flagged invalid
/// are zero-padded in place, preserving temporal alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    pub label: Option<usize>,
    pub frames: Vec<Frame>,
    pub valid: Vec<bool>,
}

impl SkeletonSequence {
    pub fn new(
        id: impl Into<String>,
        label: Option<usize>,
        frames: Vec<Frame>,
        valid: Vec<bool>,
    ) -> Result<SkeletonSequence> {
        let seq = SkeletonSequence {
            id: id.into(),
            label,
            frames,
            valid,
        };
        seq.validate()?;
        Ok(seq)
    }

    /// Fully valid sequence from raw frames.
    pub fn fully_valid(
        id: impl Into<String>,
        label: Option<usize>,
        frames: Vec<Frame>,
    ) -> Result<SkeletonSequence> {
        let valid = vec![true; frames.len()];
        SkeletonSequence::new(id, label, frames, valid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < MIN_FRAMES {
            return Err(Error::invariant(
                "frames",
                format!("sequence length {} < minimum {}", self.frames.len(), MIN_FRAMES),
            ));
        }
        if self.valid.len() != self.frames.len() {
            return Err(Error::invariant(
                "valid",
                format!(
                    "mask length {} != frame count {}",
                    self.valid.len(),
                    self.frames.len()
                ),
            ));
        }
        for (t, (frame, &ok)) in self.frames.iter().zip(&self.valid).enumerate() {
            if !ok && frame.iter().any(|j| j[0] != 0.0 || j[1] != 0.0) {
                return Err(Error::invariant(
                    "frames",
                    format!("frame {t} is flagged invalid but has nonzero coordinates"),
                ));
            }
            for (k, j) in frame.iter().enumerate() {
                if !j[0].is_finite() || !j[1].is_finite() {
                    return Err(Error::invariant(
                        "frames",
                        format!("non-finite coordinate at frame {t}, joint {k}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn fully_valid_mask(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    /// Indices of valid frames, ascending.
    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&t| self.valid[t]).collect()
    }

    /// Frame t flattened to a 34-vector (joint-major x, y).
    pub fn flat_frame(&self, t: usize) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        for (k, j) in self.frames[t].iter().enumerate() {
            out[2 * k] = j[0];
            out[2 * k + 1] = j[1];
        }
        out
    }

    /// All frames as a [T, 34] tensor.
    pub fn to_flat_tensor(&self) -> Tensor {
        let t = self.len();
        let mut data = Vec::with_capacity(t * STATE_DIM);
        for i in 0..t {
            data.extend_from_slice(&self.flat_frame(i));
        }
        Tensor::new(&[t, STATE_DIM], data)
    }

    /// All frames as a [T, K, 2] tensor.
    pub fn to_tensor(&self) -> Tensor {
        self.to_flat_tensor().reshaped(&[self.len(), NUM_JOINTS, 2])
    }

    /// Builds a fully valid sequence from a [T, K, 2] (or [T, 34]) tensor.
    pub fn from_tensor(id: impl Into<String>, label: Option<usize>, t: &Tensor) -> SkeletonSequence {
        let frames_n = t.shape()[0];
        assert_eq!(t.numel(), frames_n * STATE_DIM, "tensor is not T x 34");
        let mut frames = Vec::with_capacity(frames_n);
        for i in 0..frames_n {
            let row = &t.data()[i * STATE_DIM..(i + 1) * STATE_DIM];
            let mut f: Frame = [[0.0; 2]; NUM_JOINTS];
            for k in 0..NUM_JOINTS {
                f[k] = [row[2 * k], row[2 * k + 1]];
            }
            frames.push(f);
        }
        SkeletonSequence {
            id: id.into(),
            label,
            frames,
            valid: vec![true; frames_n],
        }
    }

    /// Bounding-box diagonal over valid frames (0 for degenerate sequences).
    pub fn bbox_diagonal(&self) -> f64 {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        let mut any = false;
        for (frame, &ok) in self.frames.iter().zip(&self.valid) {
            if !ok {
                continue;
            }
            any = true;
            for j in frame {
                for a in 0..2 {
                    min[a] = min[a].min(j[a]);
                    max[a] = max[a].max(j[a]);
                }
            }
        }
        if !any {
            return 0.0;
        }
        let dx = max[0] - min[0];
        let dy = max[1] - min[1];
        (dx * dx + dy * dy).sqrt()
    }
}

/// Kinematic tree over the 17 joints plus the five-region partition.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonTopology {
    /// (parent, child) pairs; parents precede children in listing order.
    pub edges: Vec<(usize, usize)>,
    /// Disjoint joint-index sets: head, left arm, right arm, left leg, right leg.
    pub regions: [Vec<usize>; NUM_REGIONS],
}

impl SkeletonTopology {
    pub fn validate(&self) -> Result<()> {
        if self.edges.len() != NUM_JOINTS - 1 {
            return Err(Error::invariant(
                "edges",
                format!("{} edges, expected {}", self.edges.len(), NUM_JOINTS - 1),
            ));
        }
        // Union-find connectivity / acyclicity check.
        let mut parent: Vec<usize> = (0..NUM_JOINTS).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b) in &self.edges {
            if a >= NUM_JOINTS || b >= NUM_JOINTS {
                return Err(Error::invariant("edges", format!("joint index out of range: ({a},{b})")));
            }
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return Err(Error::invariant("edges", format!("cycle through edge ({a},{b})")));
            }
            parent[ra] = rb;
        }
        let mut seen = [false; NUM_JOINTS];
        for region in &self.regions {
            for &j in region {
                if j >= NUM_JOINTS {
                    return Err(Error::invariant("regions", format!("joint index {j} out of range")));
                }
                if seen[j] {
                    return Err(Error::invariant("regions", format!("joint {j} in two regions")));
                }
                seen[j] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::invariant("regions", "regions do not cover all joints"));
        }
        Ok(())
    }

    /// Region index of a joint.
    pub fn region_of(&self, joint: usize) -> usize {
        self.regions
            .iter()
            .position(|r| r.contains(&joint))
            .expect("joint not in any region")
    }
}

/// The fixed COCO-17 topology: joint 0 is the nose; the tree roots there.
/// Regions: head {0..4}, left arm {5,7,9}, right arm {6,8,10},
/// left leg {11,13,15}, right leg {12,14,16}.
pub fn coco17_topology() -> SkeletonTopology {
    SkeletonTopology {
        edges: vec![
            (0, 1),
            (0, 2),
            (1, 3),
            (2, 4),
            (0, 5),
            (0, 6),
            (5, 7),
            (7, 9),
            (6, 8),
            (8, 10),
            (5, 11),
            (6, 12),
            (11, 13),
            (13, 15),
            (12, 14),
            (14, 16),
        ],
        regions: [
            vec![0, 1, 2, 3, 4],
            vec![5, 7, 9],
            vec![6, 8, 10],
            vec![11, 13, 15],
            vec![12, 14, 16],
        ],
    }
}

/// Canonical rest pose in normalized image coordinates (y grows downward).
pub fn rest_pose() -> Frame {
    [
        [0.50, 0.20], // nose
        [0.47, 0.18], // left eye
        [0.53, 0.18], // right eye
        [0.44, 0.20], // left ear
        [0.56, 0.20], // right ear
        [0.40, 0.35], // left shoulder
        [0.60, 0.35], // right shoulder
        [0.35, 0.48], // left elbow
        [0.65, 0.48], // right elbow
        [0.32, 0.60], // left wrist
        [0.68, 0.60], // right wrist
        [0.43, 0.62], // left hip
        [0.57, 0.62], // right hip
        [0.42, 0.78], // left knee
        [0.58, 0.78], // right knee
        [0.41, 0.93], // left ankle
        [0.59, 0.93], // right ankle
    ]
}

/// Linearly resamples frames to a new length, mapping endpoints to
/// endpoints. An equal-length resample is an exact copy.
pub fn resample_frames(frames: &[Frame], new_len: usize) -> Vec<Frame> {
    assert!(!frames.is_empty() && new_len > 0);
    if new_len == frames.len() {
        return frames.to_vec();
    }
    if frames.len() == 1 {
        return vec![frames[0]; new_len];
    }
    let src_max = (frames.len() - 1) as f64;
    (0..new_len)
        .map(|i| {
            let pos = if new_len == 1 {
                0.0
            } else {
                i as f64 * src_max / (new_len - 1) as f64
            };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(frames.len() - 1);
            let w = pos - lo as f64;
            let mut f: Frame = [[0.0; 2]; NUM_JOINTS];
            for k in 0..NUM_JOINTS {
                for a in 0..2 {
                    f[k][a] = frames[lo][k][a] * (1.0 - w) + frames[hi][k][a] * w;
                }
            }
            f
        })
        .collect()
}

/// Class-label universe.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSpace {
    pub num_classes: usize,
    pub names: Option<Vec<String>>,
}

impl LabelSpace {
    pub fn new(num_classes: usize) -> Result<LabelSpace> {
        if num_classes < 2 {
            return Err(Error::invariant(
                "num_classes",
                format!("{num_classes} classes, need at least 2"),
            ));
        }
        Ok(LabelSpace {
            num_classes,
            names: None,
        })
    }

    pub fn with_names(names: Vec<String>) -> Result<LabelSpace> {
        let mut ls = LabelSpace::new(names.len())?;
        ls.names = Some(names);
        Ok(ls)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_is_a_tree_partitioned_into_regions() {
        let topo = coco17_topology();
        topo.validate().unwrap();
        assert_eq!(topo.edges.len(), 16);
        let covered: usize = topo.regions.iter().map(|r| r.len()).sum();
        assert_eq!(covered, 17);
        assert_eq!(topo.regions.iter().map(|r| r.len()).collect::<Vec<_>>(), vec![5, 3, 3, 3, 3]);
    }

    #[test]
    fn joint_nine_is_in_left_arm() {
        let topo = coco17_topology();
        assert!(topo.regions[1].contains(&9));
        assert_eq!(topo.region_of(9), 1);
    }

    #[test]
    fn topology_is_identical_across_calls() {
        assert_eq!(coco17_topology(), coco17_topology());
    }

    #[test]
    fn parents_precede_children() {
        let topo = coco17_topology();
        let mut placed = [false; NUM_JOINTS];
        placed[0] = true;
        for &(p, c) in &topo.edges {
            assert!(placed[p], "parent {p} not placed before child {c}");
            placed[c] = true;
        }
    }

    #[test]
    fn invalid_frame_with_nonzero_coordinate_is_rejected() {
        let mut frames = vec![[[0.0; 2]; NUM_JOINTS]; 4];
        frames[1][3][0] = 0.5;
        let res = SkeletonSequence::new("x", None, frames, vec![true, false, true, true]);
        assert!(matches!(res, Err(Error::Invariant { field: "frames", .. })));
    }

    #[test]
    fn too_short_sequence_is_rejected() {
        let frames = vec![[[0.1; 2]; NUM_JOINTS]; 2];
        let res = SkeletonSequence::fully_valid("x", None, frames);
        assert!(res.is_err());
    }

    #[test]
    fn tensor_roundtrip() {
        let mut frames = vec![[[0.0; 2]; NUM_JOINTS]; 3];
        for (t, f) in frames.iter_mut().enumerate() {
            for (k, j) in f.iter_mut().enumerate() {
                *j = [t as f64 + k as f64 * 0.01, -(t as f64)];
            }
        }
        let seq = SkeletonSequence::fully_valid("r", Some(1), frames).unwrap();
        let rt = SkeletonSequence::from_tensor("r", Some(1), &seq.to_tensor());
        assert_eq!(seq.frames, rt.frames);
    }

    #[test]
    fn bbox_diagonal_zero_for_point_sequence() {
        let frames = vec![[[0.5, 0.5]; NUM_JOINTS]; 3];
        let seq = SkeletonSequence::fully_valid("p", None, frames).unwrap();
        assert_eq!(seq.bbox_diagonal(), 0.0);
    }

    #[test]
    fn label_space_needs_two_classes() {
        assert!(LabelSpace::new(1).is_err());
        assert!(LabelSpace::new(2).is_ok());
    }
}
