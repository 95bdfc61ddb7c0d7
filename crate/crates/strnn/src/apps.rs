//! Applications: open-loop long-horizon prediction, denoising, and
//! controlled synthesis with backup/fine-tune/restore.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::{BnBuffers, ForwardPass, Mode};
use crate::losses::{
    bonelength_cost, control_cost, denormalize_graph, footplant_cost, reconstruction_loss,
    smoothness_loss, total_cost, CostRegime, LossWeights,
};
use crate::model::StrnnModel;
use crate::motion::io::ControlSignal;
use crate::motion::pipeline::{denormalize, normalize};
use crate::motion::rot;
use crate::motion::{MotionClip, ANGULAR_VEL, CONTACTS, FRAME_DIMS, PLANAR_VEL};
use crate::optim::{l2_penalty_graph, AdaDeltaConfig, AdaDeltaState};
use crate::tensor::Tensor;

/// Open-loop rollout: repeatedly predict `predict_len` frames and feed the
/// last `encode_len` generated frames back as the next window. No ground
/// truth enters after the initial prefix and there is no feedback moderation.
///
/// `prefix` is normalized, exactly encode_len×73. Returns `total` generated
/// frames in normalized space (the prefix is not included).
pub fn predict_long(model: &StrnnModel, prefix: &Tensor, total: usize) -> Result<Tensor> {
    let m = model.encode_len();
    let n = model.predict_len();
    if prefix.rows() != m || prefix.cols() != FRAME_DIMS {
        return Err(Error::shape(format!(
            "prefix must be {m}x{FRAME_DIMS}, got {}x{}",
            prefix.rows(),
            prefix.cols()
        )));
    }
    if total < n {
        return Err(Error::config(format!(
            "total ({total}) must be at least predict_len ({n})"
        )));
    }
    let mut window = prefix.clone();
    let mut out = Tensor::zeros(0, FRAME_DIMS);
    let mut generated = 0usize;
    while generated < total {
        let step = model.infer(&window)?;
        if let Some(pos) = step.predicted.first_non_finite() {
            return Err(Error::numerical(format!(
                "NaN in generated frame {}",
                generated + pos / FRAME_DIMS
            )));
        }
        out = Tensor::concat_rows(&[&out, &step.predicted])?;
        generated += n;
        // next window: last m frames of everything produced so far
        let all = Tensor::concat_rows(&[prefix, &out])?;
        window = all.slice_rows(all.rows() - m, all.rows())?;
    }
    out.slice_rows(0, total)
}

/// Slide an l-frame window at stride decode_len over the corrupted clip,
/// reassemble the model outputs by averaging overlaps, and threshold the
/// contact channels at 0.5. Input and output are unnormalized local clips.
pub fn denoise(model: &StrnnModel, corrupted: &MotionClip) -> Result<MotionClip> {
    let l = model.segment_len();
    let m = model.encode_len();
    let t = corrupted.len();
    if t < l {
        return Err(Error::data(format!(
            "clip has {t} frames; denoising needs at least {l}"
        )));
    }
    let frames = normalize(&corrupted.frames, &model.stats)?;
    let mut starts: Vec<usize> = (0..=(t - l)).step_by(m).collect();
    if *starts.last().expect("nonempty") != t - l {
        starts.push(t - l);
    }
    let mut sum = Tensor::zeros(t, FRAME_DIMS);
    let mut count = vec![0.0f64; t];
    for start in starts {
        let window = frames.slice_rows(start, start + l)?;
        let out = model.infer(&window)?;
        for r in 0..l {
            let src = out.block.row(r).to_vec();
            let dst = sum.row_mut(start + r);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
            count[start + r] += 1.0;
        }
    }
    for r in 0..t {
        if count[r] == 0.0 {
            return Err(Error::numerical(format!("frame {r} never covered by a window")));
        }
        let c = count[r];
        for v in sum.row_mut(r) {
            *v /= c;
        }
    }
    let mut restored = denormalize(&sum, &model.stats)?;
    for r in 0..t {
        let row = restored.row_mut(r);
        for c in CONTACTS {
            row[c] = if row[c] > 0.5 { 1.0 } else { 0.0 };
        }
    }
    MotionClip::new(corrupted.fps, restored, corrupted.skeleton.clone())
}

/// Controlled-synthesis settings: how many optimizer steps each window gets
/// and what the run-time objective weighs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ControlSession {
    pub fine_tune_steps: u64,
    pub adadelta: AdaDeltaConfig,
    pub weights: LossWeights,
    /// Restrict fine-tuning to the residual component.
    pub residual_only: bool,
    pub l2_coefficient: f64,
}

impl Default for ControlSession {
    fn default() -> Self {
        ControlSession {
            fine_tune_steps: 20,
            adadelta: AdaDeltaConfig::default(),
            weights: LossWeights { w_r: 0.6, w_s: 0.2 },
            residual_only: false,
            l2_coefficient: 0.01,
        }
    }
}

/// Per-window diagnostics of a controlled-synthesis run.
#[derive(Debug, Clone)]
pub struct WindowTrace {
    pub h_ctr_initial: f64,
    pub h_ctr_final: f64,
    /// Parameter hash matched the backup after restoration.
    pub restored: bool,
    /// Fine-tuning diverged and the uncorrected prediction was emitted.
    pub fell_back: bool,
}

/// Alternate prediction and correction per window: predict with the pristine
/// weights, fine-tune a live copy against the run-time costs, emit the
/// corrected prediction, then restore the weights bit-exactly.
pub fn synthesize_controlled(
    model: &mut StrnnModel,
    prefix: &Tensor,
    signal: &ControlSignal,
    total: usize,
    session: &ControlSession,
) -> Result<(Tensor, Vec<WindowTrace>)> {
    let m = model.encode_len();
    let n = model.predict_len();
    session.weights.validate()?;
    if prefix.rows() != m || prefix.cols() != FRAME_DIMS {
        return Err(Error::shape(format!(
            "prefix must be {m}x{FRAME_DIMS}, got {}x{}",
            prefix.rows(),
            prefix.cols()
        )));
    }
    if signal.len() < total {
        return Err(Error::data(format!(
            "control signal covers {} frames, output needs {total}",
            signal.len()
        )));
    }
    let backup_params = model.params.clone();
    let backup_buffers = model.buffers.clone();
    let backup_hash = model.state_hash();

    let trainable = if session.residual_only {
        model.residual_param_ids()
    } else {
        model.all_param_ids()
    };
    let l2_ids = model.l2_param_ids(true);

    let mut out = Tensor::zeros(0, FRAME_DIMS);
    let mut traces = Vec::new();
    let mut window_prefix = prefix.clone();
    let mut emitted = 0usize;
    while emitted < total {
        // (1) predict with pristine weights
        let baseline = model.infer(&window_prefix)?;
        let anchor = Tensor::concat_rows(&[&window_prefix, &baseline.predicted])?;
        // control targets for the block frames, clamped into the signal range
        let first_abs = emitted as i64 - m as i64;
        let gamma = window_signal(signal, first_abs, m + n);
        let flags = window_flags(signal, first_abs, m + n);
        let h0 = window_h_ctr(model, &baseline_block(&baseline), &gamma)?;

        // (2) fine-tune the live weights for this window
        let mut opt = AdaDeltaState::new(session.adadelta);
        let mut diverged = false;
        for _ in 0..session.fine_tune_steps {
            let step = finetune_step(
                model,
                &window_prefix,
                &anchor,
                &gamma,
                flags.as_ref(),
                session,
                &trainable,
                &l2_ids,
                &mut opt,
            );
            match step {
                Ok(()) => {}
                Err(Error::Numerical(_)) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }

        // (3) emit the corrected window (or fall back to the baseline)
        let (block, predicted) = if diverged {
            (baseline_block(&baseline), baseline.predicted.clone())
        } else {
            let corrected = model.infer(&window_prefix)?;
            if corrected.predicted.is_finite() {
                (corrected.block.clone(), corrected.predicted)
            } else {
                diverged = true;
                (baseline_block(&baseline), baseline.predicted.clone())
            }
        };
        let h1 = window_h_ctr(model, &block, &gamma)?;

        // (4) restore pristine weights
        model.params = backup_params.clone();
        model.buffers = backup_buffers.clone();
        let restored = model.state_hash() == backup_hash;
        traces.push(WindowTrace {
            h_ctr_initial: h0,
            h_ctr_final: h1,
            restored,
            fell_back: diverged,
        });
        if !restored {
            return Err(Error::numerical(
                "weight restoration after a control window was not bit-exact".to_string(),
            ));
        }

        out = Tensor::concat_rows(&[&out, &predicted])?;
        emitted += n;
        let all = Tensor::concat_rows(&[prefix, &out])?;
        window_prefix = all.slice_rows(all.rows() - m, all.rows())?;
    }
    Ok((out.slice_rows(0, total)?, traces))
}

fn baseline_block(res: &crate::model::ForwardResult) -> Tensor {
    res.block.clone()
}

/// Γ rows for block frames starting at absolute output frame `first` (may be
/// negative for the decoded half of the first window).
fn window_signal(signal: &ControlSignal, first: i64, len: usize) -> Tensor {
    let mut rows = Vec::with_capacity(len);
    for k in 0..len as i64 {
        let idx = (first + k).clamp(0, signal.len() as i64 - 1) as usize;
        rows.push(signal.velocity[idx].to_vec());
    }
    Tensor::from_rows(&rows).expect("fixed-width rows")
}

fn window_flags(signal: &ControlSignal, first: i64, len: usize) -> Option<Tensor> {
    signal.contacts.as_ref().map(|flags| {
        let mut rows = Vec::with_capacity(len);
        for k in 0..len as i64 {
            let idx = (first + k).clamp(0, flags.len() as i64 - 1) as usize;
            rows.push(flags[idx].to_vec());
        }
        Tensor::from_rows(&rows).expect("fixed-width rows")
    })
}

/// Control cost of a normalized output block against raw-space targets.
fn window_h_ctr(model: &StrnnModel, block: &Tensor, gamma: &Tensor) -> Result<f64> {
    let mut g = Graph::new(&model.params);
    let b = g.constant(block.clone());
    let raw = denormalize_graph(&mut g, b, &model.stats)?;
    let tgt = g.constant(gamma.clone());
    let c = control_cost(&mut g, raw, tgt)?;
    Ok(g.value(c).item())
}

#[allow(clippy::too_many_arguments)]
fn finetune_step(
    model: &mut StrnnModel,
    window_prefix: &Tensor,
    anchor: &Tensor,
    gamma: &Tensor,
    flags: Option<&Tensor>,
    session: &ControlSession,
    trainable: &[crate::params::ParamId],
    l2_ids: &[crate::params::ParamId],
    opt: &mut AdaDeltaState,
) -> Result<()> {
    let m = model.encode_len();
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut g = Graph::with_trainable(&model.params, trainable);
    let input = g.constant(window_prefix.clone());
    let grads = {
        let mut fw = ForwardPass {
            mode: Mode::Eval,
            dropout: 0.0,
            bn: model.config.bn,
            rng: &mut rng,
            buffers: BnBuffers::Shared(&model.buffers),
        };
        let nodes = model.forward_graph(&mut g, input, 1, &mut fw, true)?;
        let anchor_n = g.constant(anchor.clone());
        let tgt_d = g.slice_rows(anchor_n, 0, m)?;
        let tgt_p = g.slice_rows(anchor_n, m, anchor.rows())?;
        let c_r = reconstruction_loss(&mut g, nodes.decoded, nodes.predicted, tgt_d, tgt_p)?;
        let root_idx = std::sync::Arc::new(model.partition.root.clone());
        let c_s = smoothness_loss(&mut g, nodes.block, 1, &root_idx)?;
        let raw = denormalize_graph(&mut g, nodes.block, &model.stats)?;
        let tgt = g.constant(gamma.clone());
        let h_ctr = control_cost(&mut g, raw, tgt)?;
        let h_bone = bonelength_cost(&mut g, raw, &model.skeleton)?;
        let runtime = match flags {
            Some(f) => {
                let h_fp = footplant_cost(&mut g, raw, f)?;
                let cb = g.add(h_ctr, h_bone)?;
                g.add(cb, h_fp)?
            }
            None => g.add(h_ctr, h_bone)?,
        };
        let l2 = l2_penalty_graph(&mut g, l2_ids, session.l2_coefficient)?;
        let loss = total_cost(
            &mut g,
            c_r,
            Some(c_s),
            Some(runtime),
            session.weights,
            CostRegime::Runtime,
            Some(l2),
        )?;
        if !g.value(loss).item().is_finite() {
            return Err(Error::numerical("fine-tune loss is NaN".to_string()));
        }
        g.backward(loss)?
    };
    opt.step(&mut model.params, &grads, trainable)?;
    Ok(())
}

/// Integrate per-frame planar and angular velocities into a world-space root
/// path. Frame 0 sits at the given start; displacements are applied in the
/// previous frame's facing.
pub fn integrate_root(clip: &MotionClip, start: [f64; 3], start_heading: f64) -> Vec<([f64; 3], f64)> {
    let mut path = Vec::with_capacity(clip.len());
    let mut pos = start;
    let mut heading = start_heading;
    path.push((pos, heading));
    for t in 1..clip.len() {
        let f = clip.frame(t);
        let v = [f[PLANAR_VEL.start], 0.0, f[PLANAR_VEL.start + 1]];
        let delta = rot::mat_vec(&rot::rot_y(heading), v);
        pos = rot::add(pos, delta);
        heading += f[ANGULAR_VEL];
        path.push((pos, heading));
    }
    path
}

/// Rebuild world-space joint positions from a local clip by integrating the
/// root path. Used for plot-data export.
pub fn world_joint_positions(clip: &MotionClip) -> Vec<Vec<[f64; 3]>> {
    let path = integrate_root(clip, [0.0, 0.0, 0.0], 0.0);
    let mut out = Vec::with_capacity(clip.len());
    for (t, (ground, heading)) in path.iter().enumerate() {
        let m = rot::rot_y(*heading);
        let mut joints = Vec::with_capacity(crate::motion::JOINT_COUNT);
        for j in 0..crate::motion::JOINT_COUNT {
            let local = clip.joint_position(t, j);
            joints.push(rot::add(rot::mat_vec(&m, local), [ground[0], 0.0, ground[2]]));
        }
        out.push(joints);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::glorot_uniform;
    use crate::model::{Component, ModelConfig, ModelTag, Regime};
    use crate::motion::{NormalizationStats, Skeleton};

    fn mini_model(seed: u64) -> StrnnModel {
        let config = ModelConfig::new(ModelTag {
            component: Component::Composite,
            encode_len: 4,
            predict_len: 4,
            regime: Regime::Hybrid,
        })
        .with_widths([4, 8, 16, 32], 32);
        StrnnModel::init(config, Skeleton::standard(), NormalizationStats::identity(FRAME_DIMS), seed)
            .unwrap()
    }

    fn rand_frames(rows: usize, seed: u64) -> Tensor {
        glorot_uniform(rows, FRAME_DIMS, 1, 1, &mut ChaCha12Rng::seed_from_u64(seed))
    }

    #[test]
    fn single_window_rollout_equals_one_forward() {
        let model = mini_model(1);
        let prefix = rand_frames(4, 2);
        let rolled = predict_long(&model, &prefix, 4).unwrap();
        let direct = model.infer(&prefix).unwrap().predicted;
        assert_eq!(rolled.data(), direct.data());
    }

    #[test]
    fn rollouts_are_deterministic_and_use_only_the_prefix() {
        let model = mini_model(3);
        let prefix = rand_frames(4, 4);
        let a = predict_long(&model, &prefix, 12).unwrap();
        let b = predict_long(&model, &prefix, 12).unwrap();
        assert_eq!(a.data(), b.data());
        // truncation to a non-multiple total
        let c = predict_long(&model, &prefix, 10).unwrap();
        assert_eq!(c.rows(), 10);
        assert_eq!(c.data(), &a.data()[..10 * FRAME_DIMS]);
    }

    #[test]
    fn rollout_rejects_bad_prefix() {
        let model = mini_model(5);
        assert!(predict_long(&model, &rand_frames(3, 6), 8).is_err());
        assert!(predict_long(&model, &rand_frames(4, 6), 2).is_err());
    }

    #[test]
    fn denoise_covers_every_frame_and_thresholds_contacts() {
        let model = mini_model(7);
        // 19 frames, window 8, stride 4 → starts 0,4,8,11
        let mut frames = rand_frames(19, 8);
        for r in 0..frames.rows() {
            for c in CONTACTS {
                frames.set(r, c, 0.6);
            }
        }
        let clip = MotionClip::new(30.0, frames, Skeleton::standard()).unwrap();
        let out = denoise(&model, &clip).unwrap();
        assert_eq!(out.len(), clip.len());
        for t in 0..out.len() {
            for c in CONTACTS {
                let v = out.frame(t)[c];
                assert!(v == 0.0 || v == 1.0, "contact {v} not thresholded");
            }
        }
        let short = MotionClip::new(30.0, rand_frames(7, 9), Skeleton::standard()).unwrap();
        assert!(denoise(&model, &short).is_err());
    }

    #[test]
    fn controlled_synthesis_zero_steps_equals_rollout_and_restores() {
        let mut model = mini_model(11);
        let prefix = rand_frames(4, 12);
        let signal = ControlSignal::constant(0.0, 0.02, 0.0, 12);
        let session = ControlSession { fine_tune_steps: 0, ..ControlSession::default() };
        let before = model.state_hash();
        let (out, traces) = synthesize_controlled(&mut model, &prefix, &signal, 12, &session).unwrap();
        assert_eq!(model.state_hash(), before);
        assert!(traces.iter().all(|t| t.restored && !t.fell_back));
        let plain = predict_long(&model, &prefix, 12).unwrap();
        assert_eq!(out.data(), plain.data());
        // with zero steps nothing changed, so initial and final costs agree
        for t in &traces {
            assert_eq!(t.h_ctr_initial, t.h_ctr_final);
        }
    }

    #[test]
    fn controlled_synthesis_restores_after_fine_tuning() {
        let mut model = mini_model(13);
        let prefix = rand_frames(4, 14);
        let signal = ControlSignal::constant(0.0, 0.02, 0.0, 8);
        let session = ControlSession { fine_tune_steps: 3, ..ControlSession::default() };
        let before = model.state_hash();
        let (_, traces) = synthesize_controlled(&mut model, &prefix, &signal, 8, &session).unwrap();
        assert_eq!(model.state_hash(), before);
        assert!(traces.iter().all(|t| t.restored));
    }

    #[test]
    fn integrate_root_examples() {
        let skel = Skeleton::standard();
        // zero velocities → stationary
        let clip = MotionClip::new(30.0, Tensor::zeros(5, FRAME_DIMS), skel.clone()).unwrap();
        let path = integrate_root(&clip, [0.0; 3], 0.0);
        assert!(path.iter().all(|(p, h)| *p == [0.0; 3] && *h == 0.0));

        // constant planar velocity, zero angular → straight line
        let v = 0.04;
        let mut frames = Tensor::zeros(6, FRAME_DIMS);
        for t in 0..6 {
            frames.set(t, PLANAR_VEL.start + 1, v); // forward (+z)
        }
        let clip = MotionClip::new(30.0, frames, skel.clone()).unwrap();
        let path = integrate_root(&clip, [0.0; 3], 0.0);
        let (end, _) = path.last().unwrap();
        assert!((end[2] - 5.0 * v).abs() < 1e-12);
        assert!(end[0].abs() < 1e-12);

        // constant angular velocity + speed → circle of radius ≈ s/ω
        let omega = 0.05;
        let s = 0.03;
        let steps = (2.0 * std::f64::consts::PI / omega).round() as usize;
        let mut frames = Tensor::zeros(steps + 1, FRAME_DIMS);
        for t in 0..=steps {
            frames.set(t, PLANAR_VEL.start + 1, s);
            frames.set(t, ANGULAR_VEL, omega);
        }
        let clip = MotionClip::new(30.0, frames, skel).unwrap();
        let path = integrate_root(&clip, [0.0; 3], 0.0);
        // the discrete circle closes to within O(ω) of the start
        let (end, _) = path.last().unwrap();
        let closure = (end[0].powi(2) + end[2].powi(2)).sqrt();
        assert!(closure < s * 2.0, "circle failed to close: {closure}");
        // radius estimate from the chord at the quarter turn
        let quarter = &path[steps / 4].0;
        let r_num = (quarter[0].powi(2) + quarter[2].powi(2)).sqrt();
        let r_expected = (s / omega) * (2.0f64).sqrt(); // chord of a quarter arc
        assert!(
            (r_num - r_expected).abs() / r_expected < 0.1,
            "quarter chord {r_num} vs {r_expected}"
        );
    }
}
