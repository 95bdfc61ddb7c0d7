//! Metrics: nearest-neighbor manifold distance, per-horizon prediction
//! error, and denoising reconstruction error.

use crate::error::{Error, Result};
use crate::motion::{JOINTS, FRAME_DIMS};
use crate::tensor::Tensor;

/// Default segment length and sliding stride for the manifold distance.
pub const D1NN_SEGMENT: usize = 40;
pub const D1NN_STRIDE: usize = 10;

/// How per-generated-segment nearest distances are reduced to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum D1nnAggregate {
    /// Mean of per-generated-segment minima (default: a single lucky segment
    /// cannot dominate).
    Mean,
    /// Global minimum over all segment pairs.
    Min,
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub segment_len: usize,
    pub stride: usize,
    pub generated_segments: usize,
    pub corpus_segments: usize,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value,segment_len,stride,generated_segments,corpus_segments\n{},{},{},{},{},{}\n",
            self.metric,
            self.value,
            self.segment_len,
            self.stride,
            self.generated_segments,
            self.corpus_segments
        )
    }
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} = {:.6} ({} generated vs {} corpus segments, window {} stride {})",
            self.metric,
            self.value,
            self.generated_segments,
            self.corpus_segments,
            self.segment_len,
            self.stride
        )
    }
}

/// Frame-sequence distance: mean over frames of the squared L2 norm of the
/// per-frame difference.
pub fn frame_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::shape(format!(
            "distance over {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut total = 0.0;
    for t in 0..a.rows() {
        let mut frame = 0.0;
        for (x, y) in a.row(t).iter().zip(b.row(t)) {
            let d = x - y;
            frame += d * d;
        }
        total += frame;
    }
    Ok(total / a.rows() as f64)
}

fn chop(frames: &Tensor, segment: usize, stride: usize) -> Result<Vec<Tensor>> {
    crate::motion::pipeline::window_segments(frames, segment, stride)
}

/// Nearest-neighbor manifold distance between generated motion and a corpus.
/// Both sides are chopped into overlapping windows; each generated window is
/// scored by its nearest corpus window and the scores are aggregated.
pub fn d1nn(
    generated: &Tensor,
    corpus: &[&Tensor],
    segment: usize,
    stride: usize,
    aggregate: D1nnAggregate,
) -> Result<MetricReport> {
    let gen_segs = chop(generated, segment, stride)?;
    if gen_segs.is_empty() {
        return Err(Error::data(format!(
            "generated motion shorter than one {segment}-frame window"
        )));
    }
    let mut corpus_segs = Vec::new();
    for c in corpus {
        corpus_segs.extend(chop(c, segment, stride)?);
    }
    if corpus_segs.is_empty() {
        return Err(Error::data(format!(
            "corpus holds no {segment}-frame windows"
        )));
    }
    let mut per_segment_min = Vec::with_capacity(gen_segs.len());
    for gs in &gen_segs {
        let mut best = f64::INFINITY;
        for cs in &corpus_segs {
            let d = frame_distance(gs, cs)?;
            if d < best {
                best = d;
            }
        }
        per_segment_min.push(best);
    }
    let value = match aggregate {
        D1nnAggregate::Mean => {
            per_segment_min.iter().sum::<f64>() / per_segment_min.len() as f64
        }
        D1nnAggregate::Min => per_segment_min.iter().cloned().fold(f64::INFINITY, f64::min),
    };
    Ok(MetricReport {
        metric: "d1nn".to_string(),
        value,
        segment_len: segment,
        stride,
        generated_segments: gen_segs.len(),
        corpus_segments: corpus_segs.len(),
    })
}

/// Standard horizons in milliseconds.
pub const PREDICTION_HORIZONS_MS: [usize; 7] = [80, 160, 240, 320, 400, 480, 560];

/// Per-horizon Euclidean distance between generated frames and ground truth,
/// both starting at the first frame after the prefix. `fps` converts each
/// horizon to a frame index by rounding.
pub fn prediction_error(
    generated: &Tensor,
    ground_truth: &Tensor,
    horizons_ms: &[usize],
    fps: f64,
) -> Result<Vec<(usize, f64)>> {
    if generated.cols() != ground_truth.cols() {
        return Err(Error::shape("prediction error: channel mismatch".to_string()));
    }
    let mut out = Vec::with_capacity(horizons_ms.len());
    for &ms in horizons_ms {
        let frame = (ms as f64 * fps / 1000.0).round() as usize;
        if frame == 0 {
            return Err(Error::config(format!("horizon {ms} ms is below one frame")));
        }
        if frame > ground_truth.rows() || frame > generated.rows() {
            return Err(Error::data(format!(
                "horizon {ms} ms needs frame {frame}, only {} generated / {} truth",
                generated.rows(),
                ground_truth.rows()
            )));
        }
        let mut sq = 0.0;
        for (a, b) in generated.row(frame - 1).iter().zip(ground_truth.row(frame - 1)) {
            let d = a - b;
            sq += d * d;
        }
        out.push((ms, sq.sqrt()));
    }
    Ok(out)
}

/// Average per-horizon error over several prefixes.
pub fn prediction_error_mean(
    runs: &[(Tensor, Tensor)],
    horizons_ms: &[usize],
    fps: f64,
) -> Result<Vec<(usize, f64)>> {
    if runs.is_empty() {
        return Err(Error::data("no prediction runs".to_string()));
    }
    let mut acc = vec![0.0; horizons_ms.len()];
    for (generated, truth) in runs {
        for (i, (_, v)) in prediction_error(generated, truth, horizons_ms, fps)?.iter().enumerate()
        {
            acc[i] += v;
        }
    }
    Ok(horizons_ms
        .iter()
        .zip(acc)
        .map(|(&ms, v)| (ms, v / runs.len() as f64))
        .collect())
}

/// Sum of squared errors over the joint-position channels only (root block,
/// velocities and contacts excluded).
pub fn denoise_error(original: &Tensor, denoised: &Tensor) -> Result<f64> {
    if original.rows() != denoised.rows() || original.cols() != denoised.cols() {
        return Err(Error::shape(format!(
            "denoise error over {}x{} vs {}x{}",
            original.rows(),
            original.cols(),
            denoised.rows(),
            denoised.cols()
        )));
    }
    if original.cols() != FRAME_DIMS {
        return Err(Error::shape(format!(
            "denoise error expects {FRAME_DIMS}-channel frames"
        )));
    }
    let mut sse = 0.0;
    for t in 0..original.rows() {
        let a = original.row(t);
        let b = denoised.row(t);
        for c in JOINTS {
            let d = a[c] - b[c];
            sse += d * d;
        }
    }
    Ok(sse)
}
