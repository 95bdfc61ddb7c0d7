//! Cost terms: reconstruction, long-horizon smoothness, and the run-time
//! control/foot/bone penalties, combined per training regime.
//!
//! Reconstruction and smoothness operate in normalized space. The run-time
//! costs compare against physical quantities (meters, m/frame, rad/frame),
//! so they take a denormalized block; [`denormalize_graph`] provides one on
//! the tape.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::motion::{joint_dims, NormalizationStats, Skeleton, CONTACT_JOINTS, JOINTS};
use crate::tensor::Tensor;

/// Weights of the reconstruction and smoothness terms; the run-time group
/// implicitly carries 1 − w_r − w_s.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub w_r: f64,
    pub w_s: f64,
}

impl LossWeights {
    pub fn new(w_r: f64, w_s: f64) -> Result<Self> {
        let w = LossWeights { w_r, w_s };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w_r) || !(0.0..=1.0).contains(&self.w_s) {
            return Err(Error::config(format!(
                "loss weights must lie in [0,1]: w_r={}, w_s={}",
                self.w_r, self.w_s
            )));
        }
        if self.w_r + self.w_s > 1.0 + 1e-12 {
            return Err(Error::config(format!(
                "w_r + w_s must not exceed 1: {} + {}",
                self.w_r, self.w_s
            )));
        }
        Ok(())
    }

    pub fn runtime_weight(&self) -> f64 {
        (1.0 - self.w_r - self.w_s).max(0.0)
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_r: 0.8, w_s: 0.2 }
    }
}

/// Which terms the total combines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostRegime {
    /// Reconstruction only.
    Mse,
    /// w_r·C_r + w_s·C_s.
    LongHorizon,
    /// Long-horizon plus (1−w_r−w_s)·(H_ctr + H_fp + H_bone).
    Runtime,
}

/// Mean squared error over the decoded half plus the predicted half.
/// Decoded outputs arrive already re-reversed, so both halves align with the
/// clean target in natural time order.
pub fn reconstruction_loss(
    g: &mut Graph,
    decoded: NodeId,
    predicted: NodeId,
    target_decoded: NodeId,
    target_predicted: NodeId,
) -> Result<NodeId> {
    for (got, want, name) in [
        (decoded, target_decoded, "decoded"),
        (predicted, target_predicted, "predicted"),
    ] {
        let a = g.value(got).shape();
        let b = g.value(want).shape();
        if a != b {
            return Err(Error::shape(format!(
                "reconstruction: {name} output {a:?} vs target {b:?}"
            )));
        }
    }
    let dd = g.sub(decoded, target_decoded)?;
    let dsq = g.square(dd);
    let c_d = g.mean_all(dsq);
    let dp = g.sub(predicted, target_predicted)?;
    let psq = g.square(dp);
    let c_p = g.mean_all(psq);
    g.add(c_d, c_p)
}

/// Second-difference penalty on body channels plus first-difference penalty
/// on the root group, both scaled by 1/(block length), over a time-major
/// block with `batch` segments.
pub fn smoothness_loss(
    g: &mut Graph,
    block: NodeId,
    batch: usize,
    root_idx: &Arc<Vec<usize>>,
) -> Result<NodeId> {
    let rows = g.value(block).rows();
    if rows % batch != 0 {
        return Err(Error::shape(format!(
            "smoothness: {rows} rows not divisible by batch {batch}"
        )));
    }
    let t = rows / batch;
    if t < 3 {
        return Err(Error::config(format!(
            "smoothness needs at least 3 frames, got {t}"
        )));
    }
    let body = g.slice_cols(block, JOINTS.start, JOINTS.end)?;
    let b0 = g.slice_rows(body, 0, (t - 2) * batch)?;
    let b1 = g.slice_rows(body, batch, (t - 1) * batch)?;
    let b2 = g.slice_rows(body, 2 * batch, t * batch)?;
    let b1x2 = g.scale(b1, -2.0);
    let acc0 = g.add(b2, b1x2)?;
    let acc = g.add(acc0, b0)?;
    let acc_sq = g.square(acc);
    let body_term = g.sum_all(acc_sq);

    let root = g.gather_cols(block, Arc::clone(root_idx))?;
    let r0 = g.slice_rows(root, 0, (t - 1) * batch)?;
    let r1 = g.slice_rows(root, batch, t * batch)?;
    let vel = g.sub(r1, r0)?;
    let vel_sq = g.square(vel);
    let root_term = g.sum_all(vel_sq);

    let total = g.add(body_term, root_term)?;
    Ok(g.scale(total, 1.0 / (t as f64 * batch as f64)))
}

/// Squared deviation of the root velocity channels (planar x, planar z,
/// angular) from the control signal, summed over frames.
pub fn control_cost(g: &mut Graph, block: NodeId, target: NodeId) -> Result<NodeId> {
    let rows = g.value(block).rows();
    let trows = g.value(target).rows();
    if rows != trows || g.value(target).cols() != 3 {
        return Err(Error::shape(format!(
            "control: block has {rows} frames, target is {trows}x{}",
            g.value(target).cols()
        )));
    }
    let vel = g.slice_cols(block, 66, 69)?;
    let d = g.sub(vel, target)?;
    let sq = g.square(d);
    Ok(g.sum_all(sq))
}

/// Contact-weighted squared per-frame velocity of the four foot-end joints.
/// `flags` has one row per frame (T×4); velocities pair frame t with t−1 and
/// are gated by the flag of frame t.
pub fn footplant_cost(g: &mut Graph, block: NodeId, flags: &Tensor) -> Result<NodeId> {
    let t = g.value(block).rows();
    if flags.rows() != t || flags.cols() != 4 {
        return Err(Error::shape(format!(
            "footplant: flags {}x{} for {t} frames",
            flags.rows(),
            flags.cols()
        )));
    }
    if t < 2 {
        return Ok(g.scalar(0.0));
    }
    let foot_cols: Arc<Vec<usize>> = Arc::new(
        CONTACT_JOINTS
            .iter()
            .flat_map(|&j| joint_dims(j))
            .collect(),
    );
    let feet = g.gather_cols(block, Arc::clone(&foot_cols))?;
    let p0 = g.slice_rows(feet, 0, t - 1)?;
    let p1 = g.slice_rows(feet, 1, t)?;
    let vel = g.sub(p1, p0)?;
    let sq = g.square(vel);
    let mut mask = Tensor::zeros(t - 1, 12);
    for r in 0..t - 1 {
        for (slot, _) in CONTACT_JOINTS.iter().enumerate() {
            let f = flags.get(r + 1, slot);
            for k in 0..3 {
                mask.set(r, slot * 3 + k, f);
            }
        }
    }
    let mask_n = g.constant(mask);
    let gated = g.mul(sq, mask_n)?;
    Ok(g.sum_all(gated))
}

/// Σ over measurable bones and frames of (‖p_i − p_j‖ − l_ij)², with a small
/// epsilon inside the square root so coincident joints keep finite gradients.
pub fn bonelength_cost(g: &mut Graph, block: NodeId, skeleton: &Skeleton) -> Result<NodeId> {
    const EPS: f64 = 1e-9;
    let mut total = g.scalar(0.0);
    for (child, parent, len) in skeleton.measurable_bones() {
        let ci: Arc<Vec<usize>> = Arc::new(joint_dims(child).collect());
        let pi: Arc<Vec<usize>> = Arc::new(joint_dims(parent).collect());
        let a = g.gather_cols(block, ci)?;
        let b = g.gather_cols(block, pi)?;
        let d = g.sub(a, b)?;
        let sq = g.square(d);
        let ssq = g.sum_cols(sq);
        let guarded = g.add_scalar(ssq, EPS);
        let dist = g.sqrt(guarded);
        let dev = g.add_scalar(dist, -len);
        let dev_sq = g.square(dev);
        let s = g.sum_all(dev_sq);
        total = g.add(total, s)?;
    }
    Ok(total)
}

/// Undo the z-score normalization on the tape.
pub fn denormalize_graph(
    g: &mut Graph,
    block: NodeId,
    stats: &NormalizationStats,
) -> Result<NodeId> {
    let std = g.constant(Tensor::vector(&stats.std));
    let mean = g.constant(Tensor::vector(&stats.mean));
    let scaled = g.mul_row(block, std)?;
    g.add_row(scaled, mean)
}

/// Combine parts per regime; `l2` is added afterwards when present.
pub fn total_cost(
    g: &mut Graph,
    c_r: NodeId,
    c_s: Option<NodeId>,
    runtime: Option<NodeId>,
    weights: LossWeights,
    regime: CostRegime,
    l2: Option<NodeId>,
) -> Result<NodeId> {
    weights.validate()?;
    let mut total = match regime {
        CostRegime::Mse => c_r,
        CostRegime::LongHorizon => {
            let cs = c_s.ok_or_else(|| {
                Error::config("long-horizon regime needs a smoothness term".to_string())
            })?;
            let a = g.scale(c_r, weights.w_r);
            let b = g.scale(cs, weights.w_s);
            g.add(a, b)?
        }
        CostRegime::Runtime => {
            let cs = c_s.ok_or_else(|| {
                Error::config("runtime regime needs a smoothness term".to_string())
            })?;
            let rt = runtime.ok_or_else(|| {
                Error::config("runtime regime needs the control cost group".to_string())
            })?;
            let a = g.scale(c_r, weights.w_r);
            let b = g.scale(cs, weights.w_s);
            let ab = g.add(a, b)?;
            let c = g.scale(rt, weights.runtime_weight());
            g.add(ab, c)?
        }
    };
    if let Some(pen) = l2 {
        total = g.add(total, pen)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;
    use crate::layers::glorot_uniform;
    use crate::motion::{BodyPartition, FRAME_DIMS};
    use crate::params::{ParamId, ParamSet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn rand_block(rows: usize, seed: u64) -> Tensor {
        glorot_uniform(rows, FRAME_DIMS, 1, 1, &mut rng(seed))
    }

    #[test]
    fn reconstruction_examples() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let m = 4;
        let gt = rand_block(m, 1);
        let d_perfect = g.constant(gt.clone());
        let t1 = g.constant(gt.clone());
        let p_perfect = g.constant(gt.clone());
        let t2 = g.constant(gt.clone());
        let zero = reconstruction_loss(&mut g, d_perfect, p_perfect, t1, t2).unwrap();
        assert_eq!(g.value(zero).item(), 0.0);

        // decoded off by +1 everywhere, predicted perfect → C_r = 1
        let off = g.constant(gt.map(|v| v + 1.0));
        let t3 = g.constant(gt.clone());
        let t4 = g.constant(gt.clone());
        let p2 = g.constant(gt.clone());
        let one = reconstruction_loss(&mut g, off, p2, t3, t4).unwrap();
        assert!((g.value(one).item() - 1.0).abs() < 1e-12);

        // length mismatch errors
        let short = g.constant(rand_block(m - 1, 2));
        let t5 = g.constant(gt.clone());
        let t6 = g.constant(gt.clone());
        let p3 = g.constant(gt);
        assert!(reconstruction_loss(&mut g, short, p3, t5, t6).is_err());
    }

    #[test]
    fn reconstruction_gradient_is_scaled_difference() {
        // dC_d/d(decoded) = 2(decoded − gt)/(m·73)
        let mut ps = ParamSet::new();
        let m = 3;
        let id = ps.add("decoded", rand_block(m, 3));
        let gt = rand_block(m, 4);
        let grads = {
            let mut g = Graph::new(&ps);
            let d = g.param(id);
            let p = g.constant(gt.clone());
            let tp = g.constant(gt.clone());
            let td = g.constant(gt.clone());
            let loss = reconstruction_loss(&mut g, d, p, td, tp).unwrap();
            g.backward(loss).unwrap()
        };
        let ga = grads.get(id, &ps);
        let scale = 2.0 / (m as f64 * FRAME_DIMS as f64);
        for i in 0..ga.len() {
            let want = scale * (ps.get(id).data()[i] - gt.data()[i]);
            assert!((ga.data()[i] - want).abs() < 1e-12);
        }
    }

    fn root_idx() -> Arc<Vec<usize>> {
        Arc::new(BodyPartition::standard().root.clone())
    }

    #[test]
    fn smoothness_zero_for_constant_and_linear_body_motion() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        // constant motion
        let constant = Tensor::full(5, FRAME_DIMS, 0.7);
        let c = g.constant(constant);
        let v = smoothness_loss(&mut g, c, 1, &root_idx()).unwrap();
        assert!(g.value(v).item().abs() < 1e-18);

        // linear ramp on a body channel, root fixed → body term 0
        let mut ramp = Tensor::zeros(5, FRAME_DIMS);
        for t in 0..5 {
            ramp.set(t, 10, 0.3 * t as f64);
        }
        let r = g.constant(ramp);
        let v2 = smoothness_loss(&mut g, r, 1, &root_idx()).unwrap();
        assert!(g.value(v2).item().abs() < 1e-18, "{}", g.value(v2).item());
    }

    #[test]
    fn smoothness_single_spike_closed_form() {
        // body channel values [0,0,1] with m+n=3 → (1)²/3
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let mut block = Tensor::zeros(3, FRAME_DIMS);
        block.set(2, 10, 1.0);
        let b = g.constant(block);
        let v = smoothness_loss(&mut g, b, 1, &root_idx()).unwrap();
        assert!((g.value(v).item() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn smoothness_needs_three_frames() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let b = g.constant(Tensor::zeros(2, FRAME_DIMS));
        assert!(smoothness_loss(&mut g, b, 1, &root_idx()).is_err());
    }

    #[test]
    fn control_cost_examples() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let t = 6;
        let mut block = Tensor::zeros(t, FRAME_DIMS);
        for r in 0..t {
            block.set(r, 66, 0.1);
            block.set(r, 67, 0.4);
        }
        let target = Tensor::from_rows(&vec![vec![0.1, 0.4, 0.0]; t]).unwrap();
        let b = g.constant(block.clone());
        let tgt = g.constant(target);
        let zero = control_cost(&mut g, b, tgt).unwrap();
        assert!(g.value(zero).item().abs() < 1e-18);

        // constant deviation δ on one channel over T frames → T·δ²
        let delta = 0.03;
        let mut tweaked = block.clone();
        for r in 0..t {
            tweaked.set(r, 68, delta);
        }
        let b2 = g.constant(tweaked);
        let tgt2 = g.constant(Tensor::from_rows(&vec![vec![0.1, 0.4, 0.0]; t]).unwrap());
        let v = control_cost(&mut g, b2, tgt2).unwrap();
        assert!((g.value(v).item() - t as f64 * delta * delta).abs() < 1e-15);

        // length mismatch
        let b3 = g.constant(block);
        let bad = g.constant(Tensor::zeros(t - 1, 3));
        assert!(control_cost(&mut g, b3, bad).is_err());
    }

    #[test]
    fn footplant_cost_examples() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let t = 4;
        // planted foot, zero velocity → 0 even with flags set
        let block = Tensor::zeros(t, FRAME_DIMS);
        let flags = Tensor::full(t, 4, 1.0);
        let b = g.constant(block.clone());
        let v = footplant_cost(&mut g, b, &flags).unwrap();
        assert_eq!(g.value(v).item(), 0.0);

        // no flags → 0 regardless of motion
        let moving = rand_block(t, 9);
        let b2 = g.constant(moving.clone());
        let v2 = footplant_cost(&mut g, b2, &Tensor::zeros(t, 4)).unwrap();
        assert_eq!(g.value(v2).item(), 0.0);

        // contact frame with left-heel velocity (0.1, 0, 0) → 0.01
        let mut stepped = Tensor::zeros(t, FRAME_DIMS);
        let lh = joint_dims(CONTACT_JOINTS[0]).start;
        stepped.set(1, lh, 0.1);
        stepped.set(2, lh, 0.1); // moves at frame 1, still afterwards
        stepped.set(3, lh, 0.1);
        let mut flags1 = Tensor::zeros(t, 4);
        flags1.set(1, 0, 1.0);
        let b3 = g.constant(stepped);
        let v3 = footplant_cost(&mut g, b3, &flags1).unwrap();
        assert!((g.value(v3).item() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn bonelength_cost_examples() {
        let skel = Skeleton::standard();
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        // reference posture: place every joint to satisfy the bone lengths
        // exactly along distinct axes
        let t = 3;
        let mut block = Tensor::zeros(t, FRAME_DIMS);
        let mut pos = vec![[0.0f64; 3]; 20];
        for (j, parent, len) in skel.measurable_bones() {
            pos[j] = [pos[parent][0] + len, pos[parent][1], pos[parent][2]];
        }
        for r in 0..t {
            for (j, p) in pos.iter().enumerate() {
                let d = joint_dims(j);
                block.row_mut(r)[d.start..d.end].copy_from_slice(p);
            }
        }
        let b = g.constant(block.clone());
        let v = bonelength_cost(&mut g, b, &skel).unwrap();
        assert!(g.value(v).item() < 1e-12, "{}", g.value(v).item());

        // stretch one bone by 0.1 for one frame → ≈ 0.01 (leaf joint so only
        // a single bone changes)
        let mut stretched = block.clone();
        let leaf = 3; // left toe: nothing hangs off it
        assert!(skel.parent.iter().all(|p| *p != Some(leaf)));
        let d = joint_dims(leaf);
        stretched.row_mut(1)[d.start] += 0.1;
        let b2 = g.constant(stretched);
        let v2 = bonelength_cost(&mut g, b2, &skel).unwrap();
        assert!((g.value(v2).item() - 0.01).abs() < 1e-6, "{}", g.value(v2).item());
    }

    #[test]
    fn bonelength_gradient_finite_even_for_coincident_joints() {
        let skel = Skeleton::standard();
        let mut ps = ParamSet::new();
        let id = ps.add("block", Tensor::zeros(2, FRAME_DIMS)); // all joints coincide
        let grads = {
            let mut g = Graph::new(&ps);
            let b = g.param(id);
            let loss = bonelength_cost(&mut g, b, &skel).unwrap();
            g.backward(loss).unwrap()
        };
        let ga = grads.get(id, &ps);
        assert!(ga.is_finite(), "gradient has NaN/Inf at coincident joints");
    }

    #[test]
    fn runtime_costs_pass_finite_difference_checks() {
        let skel = Skeleton::standard();
        let t = 4;
        let mut ps = ParamSet::new();
        let id = ps.add("block", rand_block(t, 21));
        let ids: Vec<ParamId> = vec![id];
        let target = Tensor::from_rows(&vec![vec![0.02, 0.05, 0.01]; t]).unwrap();
        let mut flag_t = Tensor::zeros(t, 4);
        for r in 0..t {
            flag_t.set(r, r % 4, 1.0);
        }
        let build = |ps: &ParamSet, g: &mut Graph| -> Result<NodeId> {
            let b = g.param(id);
            let _ = ps;
            let tgt = g.constant(target.clone());
            let c1 = control_cost(g, b, tgt)?;
            let c2 = footplant_cost(g, b, &flag_t)?;
            let c3 = bonelength_cost(g, b, &skel)?;
            let c12 = g.add(c1, c2)?;
            g.add(c12, c3)
        };
        let grads = {
            let mut g = Graph::new(&ps);
            let loss = build(&ps, &mut g).unwrap();
            g.backward(loss).unwrap()
        };
        let report = finite_diff_check(
            &mut ps,
            &ids,
            &grads,
            |ps| {
                let mut g = Graph::new(ps);
                let loss = build(ps, &mut g)?;
                Ok(g.value(loss).item())
            },
            1e-4,
            40,
            22,
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn total_cost_combinations() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let c_r = g.scalar(2.0);
        let c_s = g.scalar(5.0);
        let w = LossWeights::new(0.8, 0.2).unwrap();

        let mse = total_cost(&mut g, c_r, None, None, w, CostRegime::Mse, None).unwrap();
        assert_eq!(g.value(mse).item(), 2.0);

        let lh = total_cost(&mut g, c_r, Some(c_s), None, w, CostRegime::LongHorizon, None)
            .unwrap();
        assert!((g.value(lh).item() - 2.6).abs() < 1e-15);

        // w_r=1, w_s=0 reduces LH to MSE
        let w1 = LossWeights::new(1.0, 0.0).unwrap();
        let lh2 = total_cost(&mut g, c_r, Some(c_s), None, w1, CostRegime::LongHorizon, None)
            .unwrap();
        assert_eq!(g.value(lh2).item(), 2.0);

        let rt = g.scalar(10.0);
        let w2 = LossWeights::new(0.6, 0.2).unwrap();
        let full =
            total_cost(&mut g, c_r, Some(c_s), Some(rt), w2, CostRegime::Runtime, None).unwrap();
        // 0.6·2 + 0.2·5 + 0.2·10 = 4.2
        assert!((g.value(full).item() - 4.2).abs() < 1e-12);

        assert!(LossWeights::new(0.9, 0.3).is_err());
        assert!(LossWeights::new(-0.1, 0.3).is_err());
    }
}
