//! Skeletal motion data: frame layout, skeleton, partitions, datasets.
//!
//! A motion frame has 73 channels:
//!
//! | dims   | content                                              |
//! |--------|------------------------------------------------------|
//! | 0..3   | root position (world x,y,z; local clips keep (0,h,0))|
//! | 3..6   | root orientation, axis-angle (yaw removed in local)  |
//! | 6..66  | 20 joint positions ×3, body-local meters             |
//! | 66..68 | planar velocity (x,z), m/frame                       |
//! | 68     | angular velocity about y, rad/frame                  |
//! | 69..73 | contact flags: left heel, left toes, right heel, right toes |

pub mod io;
pub mod pipeline;
pub mod rot;
pub mod synth;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FRAME_DIMS: usize = 73;
pub const JOINT_COUNT: usize = 20;
pub const ROOT_POS: std::ops::Range<usize> = 0..3;
pub const ROOT_ORIENT: std::ops::Range<usize> = 3..6;
pub const JOINTS: std::ops::Range<usize> = 6..66;
pub const PLANAR_VEL: std::ops::Range<usize> = 66..68;
pub const ANGULAR_VEL: usize = 68;
pub const CONTACTS: std::ops::Range<usize> = 69..73;

/// Channel range of joint `j` (0-based) inside a frame.
pub fn joint_dims(j: usize) -> std::ops::Range<usize> {
    let s = JOINTS.start + 3 * j;
    s..s + 3
}

/// Canonical joint order. Indices are positions in the 20-joint block.
pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "LeftHip",
    "LeftKnee",
    "LeftFoot",
    "LeftToe",
    "RightHip",
    "RightKnee",
    "RightFoot",
    "RightToe",
    "Spine",
    "Spine1",
    "Neck",
    "Head",
    "LeftArm",
    "LeftForeArm",
    "LeftWrist",
    "LeftFingers",
    "RightArm",
    "RightForeArm",
    "RightWrist",
    "RightFingers",
];

/// Joints whose heights/speeds drive the four contact flags, in flag order.
pub const CONTACT_JOINTS: [usize; 4] = [2, 3, 6, 7];

/// Skeleton tree over the 20 joints plus the root, with reference bone
/// lengths in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    /// parent[j] = parent joint index, or `None` when the parent is the root.
    pub parent: Vec<Option<usize>>,
    /// Length of the bone from joint j to its parent.
    pub length_to_parent: Vec<f64>,
}

impl Skeleton {
    pub fn standard() -> Self {
        // (parent, length). Parent None = root.
        let spec: [(Option<usize>, f64); JOINT_COUNT] = [
            (None, 0.11),      // LeftHip
            (Some(0), 0.42),   // LeftKnee
            (Some(1), 0.45),   // LeftFoot
            (Some(2), 0.15),   // LeftToe
            (None, 0.11),      // RightHip
            (Some(4), 0.42),   // RightKnee
            (Some(5), 0.45),   // RightFoot
            (Some(6), 0.15),   // RightToe
            (None, 0.12),      // Spine
            (Some(8), 0.28),   // Spine1
            (Some(9), 0.22),   // Neck
            (Some(10), 0.15),  // Head
            (Some(9), 0.20),   // LeftArm
            (Some(12), 0.28),  // LeftForeArm
            (Some(13), 0.25),  // LeftWrist
            (Some(14), 0.12),  // LeftFingers
            (Some(9), 0.20),   // RightArm
            (Some(16), 0.28),  // RightForeArm
            (Some(17), 0.25),  // RightWrist
            (Some(18), 0.12),  // RightFingers
        ];
        Skeleton {
            parent: spec.iter().map(|(p, _)| *p).collect(),
            length_to_parent: spec.iter().map(|(_, l)| *l).collect(),
        }
    }

    /// Bones between two joints (root attachments carry no measurable local
    /// position, so they are excluded). Pairs are (child, parent).
    pub fn measurable_bones(&self) -> Vec<(usize, usize, f64)> {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(j, p)| p.map(|p| (j, p, self.length_to_parent[j])))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.parent.len() != JOINT_COUNT || self.length_to_parent.len() != JOINT_COUNT {
            return Err(Error::data("skeleton must describe exactly 20 joints".to_string()));
        }
        if self.length_to_parent.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::data("skeleton bone lengths must be positive".to_string()));
        }
        // tree check: walking up from any joint terminates at the root
        for j in 0..JOINT_COUNT {
            let mut cur = Some(j);
            let mut hops = 0;
            while let Some(c) = cur {
                cur = self.parent[c];
                hops += 1;
                if hops > JOINT_COUNT {
                    return Err(Error::data(format!(
                        "skeleton parent map has a cycle through joint {j}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A frame-rate plus frames (T×73) and the skeleton they live on.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub fps: f64,
    pub frames: Tensor,
    pub skeleton: Skeleton,
}

impl MotionClip {
    pub fn new(fps: f64, frames: Tensor, skeleton: Skeleton) -> Result<Self> {
        if fps <= 0.0 {
            return Err(Error::data(format!("fps must be positive, got {fps}")));
        }
        if frames.rows() == 0 {
            return Err(Error::data("motion clip must contain at least one frame".to_string()));
        }
        if frames.cols() != FRAME_DIMS {
            return Err(Error::data(format!(
                "motion frames must have {} channels, got {}",
                FRAME_DIMS,
                frames.cols()
            )));
        }
        if !frames.is_finite() {
            return Err(Error::data("motion clip contains non-finite values".to_string()));
        }
        Ok(MotionClip { fps, frames, skeleton })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }
    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }
    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }

    pub fn joint_position(&self, t: usize, j: usize) -> [f64; 3] {
        let f = self.frame(t);
        let r = joint_dims(j);
        [f[r.start], f[r.start + 1], f[r.start + 2]]
    }
}

/// Fixed decomposition of the 73 channels into seven groups.
#[derive(Debug, Clone)]
pub struct BodyPartition {
    pub root: Vec<usize>,
    pub torso: Vec<usize>,
    pub left_leg: Vec<usize>,
    pub right_leg: Vec<usize>,
    pub left_arm: Vec<usize>,
    pub right_arm: Vec<usize>,
    pub contacts: Vec<usize>,
}

impl BodyPartition {
    pub fn standard() -> Self {
        let span = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
        let mut root = span(0, 6);
        root.extend(66..69);
        BodyPartition {
            root,
            left_leg: span(6, 18),
            right_leg: span(18, 30),
            torso: span(30, 42),
            left_arm: span(42, 54),
            right_arm: span(54, 66),
            contacts: span(69, 73),
        }
    }

    pub fn groups(&self) -> [(&'static str, &Vec<usize>); 7] {
        [
            ("root", &self.root),
            ("torso", &self.torso),
            ("left_leg", &self.left_leg),
            ("right_leg", &self.right_leg),
            ("left_arm", &self.left_arm),
            ("right_arm", &self.right_arm),
            ("contacts", &self.contacts),
        ]
    }

    /// The five limb/torso groups processed by the first spatial level.
    pub fn body_groups(&self) -> [(&'static str, &Vec<usize>); 5] {
        [
            ("torso", &self.torso),
            ("left_leg", &self.left_leg),
            ("right_leg", &self.right_leg),
            ("left_arm", &self.left_arm),
            ("right_arm", &self.right_arm),
        ]
    }

    /// Disjointness and full coverage of 0..73. Asserted at model startup.
    pub fn verify(&self) -> Result<()> {
        let mut seen = vec![0usize; FRAME_DIMS];
        for (name, g) in self.groups() {
            for &i in g {
                if i >= FRAME_DIMS {
                    return Err(Error::config(format!(
                        "partition group {name} has out-of-range index {i}"
                    )));
                }
                seen[i] += 1;
            }
        }
        if let Some(i) = seen.iter().position(|&c| c != 1) {
            return Err(Error::config(format!(
                "partition does not cover channel {i} exactly once (count {})",
                seen[i]
            )));
        }
        if self.contacts.len() != 4 {
            return Err(Error::config("contact group must have 4 channels".to_string()));
        }
        Ok(())
    }
}

/// Linearly decaying corruption schedule: σ(k) = max(σ₀ − δ·k, 0).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct NoiseSchedule {
    pub sigma0: f64,
    pub delta: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { sigma0: 0.1, delta: 0.001 }
    }
}

impl NoiseSchedule {
    pub fn sigma(&self, iteration: u64) -> f64 {
        (self.sigma0 - self.delta * iteration as f64).max(0.0)
    }

    /// First iteration at which sigma is exactly 0.
    pub fn zero_at(&self) -> u64 {
        if self.delta <= 0.0 {
            return u64::MAX;
        }
        (self.sigma0 / self.delta).ceil() as u64
    }
}

/// Disjoint segment-index lists, roughly 80:10:10 by count.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn verify(&self, total: usize) -> Result<()> {
        let mut seen = vec![false; total];
        for (name, part) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            for &i in part {
                if i >= total {
                    return Err(Error::data(format!("{name} split index {i} out of range")));
                }
                if seen[i] {
                    return Err(Error::data(format!(
                        "segment {i} appears in more than one split"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

/// Per-channel z-score statistics from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Identity statistics (mean 0, std 1).
    pub fn identity(dims: usize) -> Self {
        NormalizationStats { mean: vec![0.0; dims], std: vec![1.0; dims] }
    }
}

/// Skeleton serialization order for the text format: name, parent name,
/// length. Root sorts first via the BTreeMap-free explicit ordering in io.
pub fn joint_index_by_name() -> BTreeMap<&'static str, usize> {
    JOINT_NAMES.iter().enumerate().map(|(i, n)| (*n, i)).collect()
}
