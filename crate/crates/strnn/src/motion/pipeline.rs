//! Data preparation: resampling, local-frame transform, contact detection,
//! windowing, corruption, normalization and splitting.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::rot::{self, Mat3};
use super::{
    DatasetSplit, MotionClip, NormalizationStats, ANGULAR_VEL, CONTACTS, CONTACT_JOINTS,
    FRAME_DIMS, JOINT_COUNT, PLANAR_VEL, ROOT_ORIENT, ROOT_POS,
};

/// Default contact-detection thresholds: height in meters, speed in m/frame.
pub const DEFAULT_HEIGHT_THRESHOLD: f64 = 0.05;
pub const DEFAULT_SPEED_THRESHOLD: f64 = 0.01;

/// Linear resampling to a lower frame rate. Continuous channels interpolate;
/// contact flags take the nearest source frame. Upsampling is refused.
pub fn resample(clip: &MotionClip, target_fps: f64) -> Result<MotionClip> {
    if target_fps <= 0.0 {
        return Err(Error::config(format!("target fps must be positive, got {target_fps}")));
    }
    if target_fps > clip.fps {
        return Err(Error::config(format!(
            "no upsampling: target {} Hz above source {} Hz",
            target_fps, clip.fps
        )));
    }
    if (target_fps - clip.fps).abs() < 1e-12 {
        return Ok(clip.clone());
    }
    let t_src = clip.len();
    let ratio = clip.fps / target_fps;
    let t_out = ((t_src - 1) as f64 / ratio).floor() as usize + 1;
    let mut out = Tensor::zeros(t_out, FRAME_DIMS);
    for k in 0..t_out {
        let pos = k as f64 * ratio;
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(t_src - 1);
        let frac = pos - i0 as f64;
        let nearest = if frac < 0.5 { i0 } else { i1 };
        let a = clip.frame(i0);
        let b = clip.frame(i1);
        let row = out.row_mut(k);
        for c in 0..FRAME_DIMS {
            row[c] = if CONTACTS.contains(&c) {
                clip.frame(nearest)[c]
            } else {
                a[c] * (1.0 - frac) + b[c] * frac
            };
        }
    }
    MotionClip::new(target_fps, out, clip.skeleton.clone())
}

/// Rewrite a world-space clip into the body-local frame.
///
/// Joint positions become relative to the ground-projected root with the
/// facing (heading about +y) removed. The root block keeps only height and
/// the yaw-free part of the orientation, and the velocity channels receive
/// per-frame planar and angular displacement so the world path can be
/// recovered by integration.
pub fn to_local_frame(clip: &MotionClip) -> Result<MotionClip> {
    let t_len = clip.len();
    let mut out = Tensor::zeros(t_len, FRAME_DIMS);
    let mut prev_heading = 0.0;
    let mut prev_ground = [0.0, 0.0, 0.0];
    for t in 0..t_len {
        let f = clip.frame(t);
        let root = [f[0], f[1], f[2]];
        let orient = [f[3], f[4], f[5]];
        let heading = rot::heading_of(orient);
        let ground = [root[0], 0.0, root[2]];
        let unturn: Mat3 = rot::rot_y(-heading);

        let row = out.row_mut(t);
        // root block: (0, height, 0) + yaw-removed orientation
        row[ROOT_POS.start + 1] = root[1];
        let local_rot = rot::mat_mul(&unturn, &rot::axis_angle_to_matrix(orient));
        let local_aa = rot::matrix_to_axis_angle(&local_rot);
        row[ROOT_ORIENT.start..ROOT_ORIENT.end].copy_from_slice(&local_aa);

        for j in 0..JOINT_COUNT {
            let p = clip.joint_position(t, j);
            let local = rot::mat_vec(&unturn, rot::sub(p, ground));
            let r = super::joint_dims(j);
            row[r.start..r.end].copy_from_slice(&local);
        }

        if t > 0 {
            // displacement from t-1 to t, expressed in the previous facing
            let delta = rot::sub(ground, prev_ground);
            let local_delta = rot::mat_vec(&rot::rot_y(-prev_heading), delta);
            row[PLANAR_VEL.start] = local_delta[0];
            row[PLANAR_VEL.start + 1] = local_delta[2];
            row[ANGULAR_VEL] = rot::wrap_angle(heading - prev_heading);
        }

        for c in CONTACTS {
            row[c] = f[c];
        }
        prev_heading = heading;
        prev_ground = ground;
    }
    MotionClip::new(clip.fps, out, clip.skeleton.clone())
}

/// Per-frame world heights and speeds of the four contact joints.
fn contact_observables(clip: &MotionClip) -> Vec<[(f64, f64); 4]> {
    let t_len = clip.len();
    let mut out = vec![[(0.0, 0.0); 4]; t_len];
    for (slot, &j) in CONTACT_JOINTS.iter().enumerate() {
        for t in 0..t_len {
            let p = clip.joint_position(t, j);
            let speed = if t == 0 {
                if t_len > 1 {
                    rot::norm(rot::sub(clip.joint_position(1, j), p))
                } else {
                    0.0
                }
            } else {
                rot::norm(rot::sub(p, clip.joint_position(t - 1, j)))
            };
            out[t][slot] = (p[1], speed);
        }
    }
    out
}

/// Threshold heuristic on world heights and speeds of heels and toes.
/// Flag = 1 iff height < `height_threshold` and speed < `speed_threshold`.
pub fn detect_foot_contact(
    clip: &MotionClip,
    height_threshold: f64,
    speed_threshold: f64,
) -> Vec<[f64; 4]> {
    contact_observables(clip)
        .into_iter()
        .map(|obs| {
            let mut flags = [0.0; 4];
            for (slot, (h, v)) in obs.into_iter().enumerate() {
                flags[slot] = if h < height_threshold && v < speed_threshold { 1.0 } else { 0.0 };
            }
            flags
        })
        .collect()
}

/// Write detected flags into the contact channels of a clip.
pub fn apply_contact_flags(clip: &mut MotionClip, flags: &[[f64; 4]]) {
    for (t, f) in flags.iter().enumerate() {
        let row = clip.frames.row_mut(t);
        row[CONTACTS.start..CONTACTS.end].copy_from_slice(f);
    }
}

/// All maximal windows of `length` frames at the given stride.
/// Clips shorter than `length` produce no segments.
pub fn window_segments(frames: &Tensor, length: usize, stride: usize) -> Result<Vec<Tensor>> {
    if length < 2 {
        return Err(Error::config(format!("window length must be >= 2, got {length}")));
    }
    if stride < 1 {
        return Err(Error::config(format!("stride must be >= 1, got {stride}")));
    }
    let t_len = frames.rows();
    if t_len < length {
        return Ok(Vec::new());
    }
    let count = (t_len - length) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * stride;
        out.push(frames.slice_rows(start, start + length)?);
    }
    Ok(out)
}

/// Add iid Gaussian noise of the given standard deviation to every channel.
pub fn corrupt(segment: &Tensor, sigma: f64, rng: &mut ChaCha12Rng) -> Result<Tensor> {
    if sigma < 0.0 {
        return Err(Error::config(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(segment.clone());
    }
    let mut out = segment.clone();
    for v in out.data_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += sigma * n;
    }
    Ok(out)
}

/// Gaussian noise with one sigma for most channels and a different sigma for
/// the contact channels, as used by the denoising protocol.
pub fn corrupt_channels(
    segment: &Tensor,
    sigma: f64,
    contact_sigma: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Tensor> {
    let mut out = segment.clone();
    let cols = out.cols();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let c = i % cols;
        let s = if CONTACTS.contains(&c) { contact_sigma } else { sigma };
        let n: f64 = rng.sample(StandardNormal);
        *v += s * n;
    }
    Ok(out)
}

/// Per-channel statistics over a set of segments (training split only).
/// Channels with no variance keep std 1 so they pass through unchanged.
pub fn compute_stats(segments: &[&Tensor]) -> Result<NormalizationStats> {
    let dims = segments
        .first()
        .ok_or_else(|| Error::data("cannot compute stats of an empty split".to_string()))?
        .cols();
    let mut count = 0usize;
    let mut mean = vec![0.0; dims];
    for s in segments {
        for r in 0..s.rows() {
            for (m, v) in mean.iter_mut().zip(s.row(r)) {
                *m += v;
            }
            count += 1;
        }
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0; dims];
    for s in segments {
        for r in 0..s.rows() {
            for (vv, (v, m)) in var.iter_mut().zip(s.row(r).iter().zip(mean.iter())) {
                let d = v - m;
                *vv += d * d;
            }
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let s = (v / count as f64).sqrt();
            if s < 1e-12 {
                1.0
            } else {
                s
            }
        })
        .collect();
    Ok(NormalizationStats { mean, std })
}

pub fn normalize(segment: &Tensor, stats: &NormalizationStats) -> Result<Tensor> {
    if segment.cols() != stats.mean.len() {
        return Err(Error::shape(format!(
            "normalize: segment width {} vs stats width {}",
            segment.cols(),
            stats.mean.len()
        )));
    }
    let mut out = segment.clone();
    let cols = out.cols();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let c = i % cols;
        *v = (*v - stats.mean[c]) / stats.std[c];
    }
    Ok(out)
}

pub fn denormalize(segment: &Tensor, stats: &NormalizationStats) -> Result<Tensor> {
    if segment.cols() != stats.mean.len() {
        return Err(Error::shape(format!(
            "denormalize: segment width {} vs stats width {}",
            segment.cols(),
            stats.mean.len()
        )));
    }
    let mut out = segment.clone();
    let cols = out.cols();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let c = i % cols;
        *v = *v * stats.std[c] + stats.mean[c];
    }
    Ok(out)
}

/// Seeded 80:10:10 split over `count` segments.
pub fn split_dataset(count: usize, seed: u64) -> DatasetSplit {
    use rand::SeedableRng;
    let mut idx: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5711_7001);
    idx.shuffle(&mut rng);
    let n_val = ((count as f64) * 0.1).round() as usize;
    let n_test = ((count as f64) * 0.1).round() as usize;
    let n_train = count - n_val - n_test;
    DatasetSplit {
        train: idx[0..n_train].to_vec(),
        validation: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::Skeleton;
    use rand::SeedableRng;

    fn flat_clip(fps: f64, frames: usize, fill: impl Fn(usize, &mut [f64])) -> MotionClip {
        let mut t = Tensor::zeros(frames, FRAME_DIMS);
        for r in 0..frames {
            fill(r, t.row_mut(r));
        }
        MotionClip::new(fps, t, Skeleton::standard()).unwrap()
    }

    #[test]
    fn resample_30_to_30_is_identity() {
        let clip = flat_clip(30.0, 10, |r, f| f[10] = r as f64);
        let out = resample(&clip, 30.0).unwrap();
        assert_eq!(out.frames, clip.frames);
    }

    #[test]
    fn resample_halves_constant_clip() {
        let clip = flat_clip(60.0, 100, |_, f| f[7] = 3.5);
        let out = resample(&clip, 30.0).unwrap();
        assert!((out.len() as i64 - 50).abs() <= 1, "{}", out.len());
        for t in 0..out.len() {
            assert_eq!(out.frame(t)[7], 3.5);
        }
    }

    #[test]
    fn resample_doubles_ramp_slope() {
        let clip = flat_clip(60.0, 61, |r, f| f[20] = 0.25 * r as f64);
        let out = resample(&clip, 30.0).unwrap();
        for t in 1..out.len() {
            let slope = out.frame(t)[20] - out.frame(t - 1)[20];
            assert!((slope - 0.5).abs() < 1e-12, "slope {slope}");
        }
    }

    #[test]
    fn resample_refuses_upsampling() {
        let clip = flat_clip(30.0, 10, |_, _| {});
        assert!(resample(&clip, 60.0).is_err());
    }

    #[test]
    fn local_frame_of_stationary_posture() {
        let clip = flat_clip(30.0, 5, |_, f| {
            f[0] = 2.0; // world x
            f[1] = 0.9;
            f[2] = -1.0; // world z
            for j in 0..JOINT_COUNT {
                let r = crate::motion::joint_dims(j);
                f[r.start] = 2.0 + 0.1 * j as f64;
                f[r.start + 1] = 1.0;
                f[r.start + 2] = -1.0;
            }
        });
        let local = to_local_frame(&clip).unwrap();
        for t in 0..local.len() {
            let f = local.frame(t);
            assert_eq!(f[PLANAR_VEL.start], 0.0);
            assert_eq!(f[PLANAR_VEL.start + 1], 0.0);
            assert_eq!(f[ANGULAR_VEL], 0.0);
            assert_eq!(f, local.frame(0));
            assert!((local.joint_position(t, 3)[0] - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn local_frame_of_pure_translation() {
        let v = 0.04;
        let clip = flat_clip(30.0, 6, |r, f| {
            f[1] = 0.9;
            f[2] = v * r as f64; // moving along +z, facing +z (identity orientation)
            for j in 0..JOINT_COUNT {
                let rr = crate::motion::joint_dims(j);
                f[rr.start] = 0.2;
                f[rr.start + 1] = 0.8;
                f[rr.start + 2] = v * r as f64 + 0.1;
            }
        });
        let local = to_local_frame(&clip).unwrap();
        for t in 1..local.len() {
            let f = local.frame(t);
            assert!((f[PLANAR_VEL.start]).abs() < 1e-12);
            assert!((f[PLANAR_VEL.start + 1] - v).abs() < 1e-12);
            assert!(f[ANGULAR_VEL].abs() < 1e-12);
            for c in 6..66 {
                assert!((local.frame(t)[c] - local.frame(0)[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn local_frame_of_pure_rotation() {
        let omega = 0.05;
        let clip = flat_clip(30.0, 8, |r, f| {
            f[1] = 0.9;
            f[4] = omega * r as f64; // yaw about +y grows linearly
            for j in 0..JOINT_COUNT {
                // joints rotate rigidly with the body around the origin
                let m = rot::rot_y(omega * r as f64);
                let p = rot::mat_vec(&m, [0.1 + 0.01 * j as f64, 0.5, 0.2]);
                let rr = crate::motion::joint_dims(j);
                f[rr.start..rr.end].copy_from_slice(&p);
            }
        });
        let local = to_local_frame(&clip).unwrap();
        for t in 1..local.len() {
            let f = local.frame(t);
            assert!(f[PLANAR_VEL.start].abs() < 1e-12);
            assert!(f[PLANAR_VEL.start + 1].abs() < 1e-12);
            assert!((f[ANGULAR_VEL] - omega).abs() < 1e-12, "{}", f[ANGULAR_VEL]);
            for c in 6..66 {
                assert!((f[c] - local.frame(0)[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_frame_clip_has_zero_velocities() {
        let clip = flat_clip(30.0, 1, |_, f| {
            f[0] = 5.0;
            f[1] = 1.0;
        });
        let local = to_local_frame(&clip).unwrap();
        assert_eq!(local.frame(0)[PLANAR_VEL.start], 0.0);
        assert_eq!(local.frame(0)[ANGULAR_VEL], 0.0);
    }

    #[test]
    fn contact_rule_examples() {
        // foot at height 0, speed 0 → 1; foot at 1 m → 0
        let low = flat_clip(30.0, 3, |_, f| {
            for j in CONTACT_JOINTS {
                let r = crate::motion::joint_dims(j);
                f[r.start + 1] = 0.0;
            }
        });
        let flags = detect_foot_contact(&low, 0.05, 0.01);
        assert!(flags.iter().all(|fl| fl.iter().all(|&v| v == 1.0)));

        let high = flat_clip(30.0, 3, |_, f| {
            for j in CONTACT_JOINTS {
                let r = crate::motion::joint_dims(j);
                f[r.start + 1] = 1.0;
            }
        });
        let flags = detect_foot_contact(&high, 0.05, 0.01);
        assert!(flags.iter().all(|fl| fl.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn window_counts() {
        let frames = Tensor::zeros(100, FRAME_DIMS);
        assert_eq!(window_segments(&frames, 40, 10).unwrap().len(), 7);
        let exact = Tensor::zeros(40, FRAME_DIMS);
        assert_eq!(window_segments(&exact, 40, 10).unwrap().len(), 1);
        let short = Tensor::zeros(39, FRAME_DIMS);
        assert!(window_segments(&short, 40, 10).unwrap().is_empty());
        assert!(window_segments(&frames, 1, 10).is_err());
        assert!(window_segments(&frames, 40, 0).is_err());
    }

    #[test]
    fn corrupt_zero_sigma_is_identity_and_seeded() {
        let seg = Tensor::full(4, FRAME_DIMS, 1.5);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert_eq!(corrupt(&seg, 0.0, &mut rng).unwrap(), seg);
        let mut r1 = ChaCha12Rng::seed_from_u64(2);
        let mut r2 = ChaCha12Rng::seed_from_u64(2);
        let a = corrupt(&seg, 0.1, &mut r1).unwrap();
        let b = corrupt(&seg, 0.1, &mut r2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, seg);
    }

    #[test]
    fn corrupt_sample_std_close_to_sigma() {
        let seg = Tensor::zeros(2000, FRAME_DIMS); // 146k values
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let noisy = corrupt(&seg, 0.1, &mut rng).unwrap();
        let n = noisy.len() as f64;
        let mean = noisy.data().iter().sum::<f64>() / n;
        let var = noisy.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((std - 0.1).abs() < 0.002, "std {std}");
    }

    #[test]
    fn normalize_roundtrip_and_training_moments() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let seg = corrupt(&Tensor::full(50, FRAME_DIMS, 2.0), 1.3, &mut rng).unwrap();
        let stats = compute_stats(&[&seg]).unwrap();
        let norm = normalize(&seg, &stats).unwrap();
        let back = denormalize(&norm, &stats).unwrap();
        let mut max_diff = 0.0f64;
        for (a, b) in back.data().iter().zip(seg.data()) {
            max_diff = max_diff.max((a - b).abs());
        }
        assert!(max_diff < 1e-12, "roundtrip diff {max_diff}");
        // per-dimension moments of the normalized training data
        let re_stats = compute_stats(&[&norm]).unwrap();
        for c in 0..FRAME_DIMS {
            assert!(re_stats.mean[c].abs() < 1e-10);
            assert!((re_stats.std[c] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_variance_dimension_passes_through() {
        let seg = Tensor::full(10, FRAME_DIMS, 7.25);
        let stats = compute_stats(&[&seg]).unwrap();
        // constant channel: mean 7.25, std forced to 1
        assert_eq!(stats.std[0], 1.0);
        let norm = normalize(&seg, &stats).unwrap();
        assert!(norm.data().iter().all(|&v| v == 0.0));
        let back = denormalize(&norm, &stats).unwrap();
        assert_eq!(back, seg);
    }

    #[test]
    fn split_ratios_and_disjointness() {
        let split = split_dataset(197, 9);
        split.verify(197).unwrap();
        assert_eq!(split.train.len() + split.validation.len() + split.test.len(), 197);
        assert_eq!(split.validation.len(), 20);
        assert_eq!(split.test.len(), 20);
        // deterministic
        assert_eq!(split, split_dataset(197, 9));
        assert_ne!(split, split_dataset(197, 10));
    }
}
