//! Synthetic skeletal motion for desk-scale training and testing.
//!
//! All clips are produced in world space by forward kinematics over the
//! standard skeleton, so bone lengths are exact by construction. Contact
//! flags are filled with the same threshold rule the detector uses, applied
//! to the generator's own trajectories.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::pipeline::{
    apply_contact_flags, detect_foot_contact, DEFAULT_HEIGHT_THRESHOLD, DEFAULT_SPEED_THRESHOLD,
};
use super::rot::{self, Vec3};
use super::{joint_dims, MotionClip, Skeleton, FRAME_DIMS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Gait,
    Wave,
    Figure8,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gait" => Ok(SynthKind::Gait),
            "wave" => Ok(SynthKind::Wave),
            "figure8" => Ok(SynthKind::Figure8),
            other => Err(Error::config(format!(
                "unknown synthetic kind '{other}' (expected gait|wave|figure8)"
            ))),
        }
    }
}

/// Gait cycle length in frames (both steps).
pub const GAIT_PERIOD: usize = 50;

struct Body {
    hip_height: f64,
    thigh: f64,
    shank: f64,
    foot: f64,
    hip_lateral: f64,
    spine: f64,
    spine1: f64,
    neck: f64,
    head: f64,
    shoulder: f64,
    upper_arm: f64,
    forearm: f64,
    hand: f64,
}

impl Body {
    fn standard() -> Self {
        Body {
            hip_height: 0.90,
            thigh: 0.42,
            shank: 0.45,
            foot: 0.15,
            hip_lateral: 0.11,
            spine: 0.12,
            spine1: 0.28,
            neck: 0.22,
            head: 0.15,
            shoulder: 0.20,
            upper_arm: 0.28,
            forearm: 0.25,
            hand: 0.12,
        }
    }
}

/// Pose of one frame in the facing frame (x lateral, y up, z forward),
/// before the heading rotation and root translation are applied.
struct FacingPose {
    pelvis_height: f64,
    joints: [Vec3; 20],
}

fn leg_chain(b: &Body, pelvis: Vec3, side: f64, hip_angle: f64, knee_angle: f64, foot_pitch: f64) -> [Vec3; 4] {
    let hip = rot::add(pelvis, [side * b.hip_lateral, 0.0, 0.0]);
    let knee = rot::add(hip, [0.0, -b.thigh * hip_angle.cos(), b.thigh * hip_angle.sin()]);
    let shank_dir = hip_angle - knee_angle;
    let heel = rot::add(knee, [0.0, -b.shank * shank_dir.cos(), b.shank * shank_dir.sin()]);
    let toe = rot::add(heel, [0.0, -b.foot * foot_pitch.sin(), b.foot * foot_pitch.cos()]);
    [hip, knee, heel, toe]
}

fn arm_chain(
    b: &Body,
    spine1: Vec3,
    side: f64,
    swing: f64,
    elbow: f64,
    raise: f64,
) -> [Vec3; 4] {
    let shoulder = rot::add(spine1, [side * b.shoulder, 0.0, 0.0]);
    // `raise` lifts the arm sideways out of the hanging position; `swing`
    // rotates it forward/backward in the sagittal plane.
    let hang = [side * raise.sin(), -raise.cos(), 0.0];
    let dir = [hang[0], hang[1] * swing.cos(), -raise.cos() * swing.sin()];
    let n = rot::norm(dir);
    let dir = rot::scale(dir, 1.0 / n);
    let elbow_p = rot::add(shoulder, rot::scale(dir, b.upper_arm));
    let fore_swing = swing + elbow;
    let fore_dir = [dir[0], -raise.cos() * fore_swing.cos() / n.max(1e-9), -raise.cos() * fore_swing.sin() / n.max(1e-9)];
    let fn_ = rot::norm(fore_dir);
    let fore_dir = rot::scale(fore_dir, 1.0 / fn_);
    let wrist = rot::add(elbow_p, rot::scale(fore_dir, b.forearm));
    let fingers = rot::add(wrist, rot::scale(fore_dir, b.hand));
    [shoulder, elbow_p, wrist, fingers]
}

fn torso_chain(b: &Body, pelvis: Vec3, sway: f64) -> [Vec3; 4] {
    let dir = [sway.sin(), sway.cos(), 0.0];
    let spine = rot::add(pelvis, rot::scale(dir, b.spine));
    let spine1 = rot::add(spine, rot::scale(dir, b.spine1));
    let neck = rot::add(spine1, rot::scale(dir, b.neck));
    let head = rot::add(neck, rot::scale(dir, b.head));
    [spine, spine1, neck, head]
}

struct GaitParams {
    hip_amp: f64,
    knee_amp: f64,
    arm_amp: f64,
    bounce: f64,
    sway_amp: f64,
    yaw_amp: f64,
    phase: f64,
}

impl GaitParams {
    fn jittered(rng: &mut ChaCha12Rng) -> Self {
        let j = |rng: &mut ChaCha12Rng, v: f64| v * (1.0 + 0.05 * (rng.random::<f64>() - 0.5));
        GaitParams {
            hip_amp: j(rng, 0.35),
            knee_amp: j(rng, 0.9),
            arm_amp: j(rng, 0.25),
            bounce: j(rng, 0.012),
            sway_amp: j(rng, 0.03),
            yaw_amp: j(rng, 0.08),
            phase: rng.random::<f64>() * 2.0 * PI,
        }
    }
}

fn gait_pose(b: &Body, p: &GaitParams, phi: f64) -> FacingPose {
    let pelvis_height = b.hip_height + p.bounce * (2.0 * phi).cos();
    let pelvis = [0.0, pelvis_height, 0.0];

    // Mid-stance for a leg is φ = π (hip angle crossing zero while swinging
    // backward relative to the root); the knee is extended there and flexes
    // through mid-swing at φ = 0.
    let hip_l = p.hip_amp * phi.sin();
    let hip_r = p.hip_amp * (phi + PI).sin();
    let knee_l = p.knee_amp * (0.5 + 0.5 * phi.cos());
    let knee_r = p.knee_amp * (0.5 + 0.5 * (phi + PI).cos());
    let foot_pitch_l = 0.35 * knee_l;
    let foot_pitch_r = 0.35 * knee_r;
    let legs_l = leg_chain(b, pelvis, 1.0, hip_l, knee_l, foot_pitch_l);
    let legs_r = leg_chain(b, pelvis, -1.0, hip_r, knee_r, foot_pitch_r);

    let torso = torso_chain(b, pelvis, p.sway_amp * phi.sin());
    let spine1 = torso[1];
    let arm_l = arm_chain(b, spine1, 1.0, p.arm_amp * (phi + PI).sin(), 0.35, 0.12);
    let arm_r = arm_chain(b, spine1, -1.0, p.arm_amp * phi.sin(), 0.35, 0.12);

    let mut joints = [[0.0; 3]; 20];
    joints[0..4].copy_from_slice(&legs_l);
    joints[4..8].copy_from_slice(&legs_r);
    joints[8..12].copy_from_slice(&torso);
    joints[12..16].copy_from_slice(&arm_l);
    joints[16..20].copy_from_slice(&arm_r);
    FacingPose { pelvis_height, joints }
}

/// Assemble world frames from facing poses plus a root path.
fn assemble(
    fps: f64,
    poses: &[FacingPose],
    ground: &[Vec3],
    heading: &[f64],
) -> Result<MotionClip> {
    let t_len = poses.len();
    let mut frames = Tensor::zeros(t_len, FRAME_DIMS);
    for t in 0..t_len {
        let row = frames.row_mut(t);
        row[0] = ground[t][0];
        row[1] = poses[t].pelvis_height;
        row[2] = ground[t][2];
        row[3] = 0.0;
        row[4] = heading[t];
        row[5] = 0.0;
        let m = rot::rot_y(heading[t]);
        for (j, p) in poses[t].joints.iter().enumerate() {
            let world = rot::add(rot::mat_vec(&m, *p), [ground[t][0], 0.0, ground[t][2]]);
            let r = joint_dims(j);
            row[r.start..r.end].copy_from_slice(&world);
        }
    }
    let mut clip = MotionClip::new(fps, frames, Skeleton::standard())?;
    let flags = detect_foot_contact(&clip, DEFAULT_HEIGHT_THRESHOLD, DEFAULT_SPEED_THRESHOLD);
    apply_contact_flags(&mut clip, &flags);
    Ok(clip)
}

/// Smooth, bone-length-consistent periodic motion with analytic contact
/// ground truth. `duration` is in frames at 30 Hz.
pub fn synth_dataset(kind: SynthKind, duration: usize, seed: u64) -> Result<MotionClip> {
    if duration < 80 {
        return Err(Error::config(format!(
            "synthetic clips need at least 80 frames, got {duration}"
        )));
    }
    let fps = 30.0;
    let b = Body::standard();
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(kind as u64));
    match kind {
        SynthKind::Gait => {
            let p = GaitParams::jittered(&mut rng);
            let omega = 2.0 * PI / GAIT_PERIOD as f64;
            // Root speed tuned so the stance foot is world-stationary at
            // mid-stance: v = leg_length · hip_amp · ω.
            let v = (b.thigh + b.shank) * p.hip_amp * omega;
            let mut poses = Vec::with_capacity(duration);
            let mut ground = Vec::with_capacity(duration);
            let mut heading = Vec::with_capacity(duration);
            for t in 0..duration {
                let phi = omega * t as f64 + p.phase;
                poses.push(gait_pose(&b, &p, phi));
                ground.push([0.0, 0.0, v * t as f64]);
                heading.push(p.yaw_amp * phi.sin());
            }
            assemble(fps, &poses, &ground, &heading)
        }
        SynthKind::Wave => {
            let period = 40.0;
            let amp = 0.4 * (1.0 + 0.05 * (rng.random::<f64>() - 0.5));
            let phase = rng.random::<f64>() * 2.0 * PI;
            let mut poses = Vec::with_capacity(duration);
            for t in 0..duration {
                let phi = 2.0 * PI * t as f64 / period + phase;
                let pelvis = [0.0, b.hip_height, 0.0];
                let legs_l = leg_chain(&b, pelvis, 1.0, 0.0, 0.0, 0.0);
                let legs_r = leg_chain(&b, pelvis, -1.0, 0.0, 0.0, 0.0);
                let torso = torso_chain(&b, pelvis, 0.0);
                let arm_l = arm_chain(&b, torso[1], 1.0, 0.0, 0.35, 0.12);
                // right arm raised and waving
                let arm_r = arm_chain(&b, torso[1], -1.0, 0.3 + amp * phi.sin(), 0.6, 1.3);
                let mut joints = [[0.0; 3]; 20];
                joints[0..4].copy_from_slice(&legs_l);
                joints[4..8].copy_from_slice(&legs_r);
                joints[8..12].copy_from_slice(&torso);
                joints[12..16].copy_from_slice(&arm_l);
                joints[16..20].copy_from_slice(&arm_r);
                poses.push(FacingPose { pelvis_height: b.hip_height, joints });
            }
            let ground = vec![[0.0, 0.0, 0.0]; duration];
            let heading = vec![0.0; duration];
            assemble(fps, &poses, &ground, &heading)
        }
        SynthKind::Figure8 => {
            let p = GaitParams::jittered(&mut rng);
            let omega = 2.0 * PI / GAIT_PERIOD as f64;
            let loop_period = 400.0;
            let (ax, az) = (1.5, 0.9);
            let mut poses = Vec::with_capacity(duration);
            let mut ground = Vec::with_capacity(duration);
            let mut heading = Vec::with_capacity(duration);
            for t in 0..duration {
                let phi = omega * t as f64 + p.phase;
                let u = 2.0 * PI * t as f64 / loop_period;
                poses.push(gait_pose(&b, &p, phi));
                ground.push([ax * u.sin(), 0.0, az * (2.0 * u).sin()]);
                // face along the path tangent
                let dx = ax * u.cos();
                let dz = 2.0 * az * (2.0 * u).cos();
                heading.push(dx.atan2(dz));
            }
            assemble(fps, &poses, &ground, &heading)
        }
    }
}
