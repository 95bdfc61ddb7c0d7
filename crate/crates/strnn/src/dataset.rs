//! Windowed, normalized training datasets and their on-disk layout.
//!
//! `prepare-data` writes a directory of this layout:
//!
//! ```text
//! out/
//!   dataset.json        manifest: window config, split indices, file list
//!   stats.txt           per-channel mean/std of the training split
//!   skeleton.txt        joint tree with reference bone lengths
//!   clips/clip_NNN.txt  localized source clips (unnormalized)
//!   segments/seg_NNNNN.txt  normalized training windows
//! ```

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::motion::io;
use crate::motion::pipeline::{compute_stats, normalize, split_dataset, window_segments};
use crate::motion::{DatasetSplit, MotionClip, NormalizationStats, Skeleton};
use crate::tensor::Tensor;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetManifest {
    pub fps: f64,
    pub segment_len: usize,
    pub stride: usize,
    pub seed: u64,
    pub split: DatasetSplit,
    pub clips: Vec<String>,
    pub segments: Vec<String>,
}

/// In-memory dataset: normalized segments plus everything needed to map
/// model outputs back to meters.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub segments: Vec<Tensor>,
    pub split: DatasetSplit,
    pub stats: NormalizationStats,
    pub skeleton: Skeleton,
    pub fps: f64,
    pub segment_len: usize,
    pub stride: usize,
    /// Localized source clips, unnormalized (evaluation corpus).
    pub clips: Vec<MotionClip>,
}

impl Dataset {
    /// Window and normalize already-localized clips. Segment boundaries never
    /// cross clip boundaries, and statistics come from the training split
    /// only.
    pub fn prepare(
        clips: Vec<MotionClip>,
        segment_len: usize,
        stride: usize,
        seed: u64,
    ) -> Result<Dataset> {
        if clips.is_empty() {
            return Err(Error::data("no input clips".to_string()));
        }
        let fps = clips[0].fps;
        let skeleton = clips[0].skeleton.clone();
        let mut raw_segments = Vec::new();
        for clip in &clips {
            raw_segments.extend(window_segments(&clip.frames, segment_len, stride)?);
        }
        if raw_segments.is_empty() {
            return Err(Error::data(format!(
                "no clip is long enough for {segment_len}-frame windows"
            )));
        }
        let split = split_dataset(raw_segments.len(), seed);
        split.verify(raw_segments.len())?;
        if split.train.is_empty() {
            return Err(Error::data("training split is empty".to_string()));
        }
        let train_refs: Vec<&Tensor> = split.train.iter().map(|&i| &raw_segments[i]).collect();
        let stats = compute_stats(&train_refs)?;
        let segments = raw_segments
            .iter()
            .map(|s| normalize(s, &stats))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { segments, split, stats, skeleton, fps, segment_len, stride, clips })
    }

    pub fn train_count(&self) -> usize {
        self.split.train.len()
    }

    pub fn segment(&self, i: usize) -> &Tensor {
        &self.segments[i]
    }

    /// Save the full directory layout. Deterministic: same dataset, same
    /// bytes.
    pub fn save(&self, dir: &Path, manifest_seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir.join("clips"))?;
        std::fs::create_dir_all(dir.join("segments"))?;
        let mut clip_names = Vec::new();
        for (i, clip) in self.clips.iter().enumerate() {
            let name = format!("clips/clip_{i:03}.txt");
            io::save_motion(clip, &dir.join(&name))?;
            clip_names.push(name);
        }
        let mut seg_names = Vec::new();
        for (i, seg) in self.segments.iter().enumerate() {
            let name = format!("segments/seg_{i:05}.txt");
            let clip = MotionClip::new(self.fps, seg.clone(), self.skeleton.clone())?;
            io::save_motion(&clip, &dir.join(&name))?;
            seg_names.push(name);
        }
        io::save_stats(&self.stats, &dir.join("stats.txt"))?;
        io::save_skeleton(&self.skeleton, &dir.join("skeleton.txt"))?;
        let manifest = DatasetManifest {
            fps: self.fps,
            segment_len: self.segment_len,
            stride: self.stride,
            seed: manifest_seed,
            split: self.split.clone(),
            clips: clip_names,
            segments: seg_names,
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::data(format!("manifest serialization failed: {e}")))?;
        std::fs::write(dir.join("dataset.json"), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest_path = dir.join("dataset.json");
        let json = std::fs::read_to_string(&manifest_path).map_err(|e| {
            Error::data(format!("cannot read {}: {e}", manifest_path.display()))
        })?;
        let manifest: DatasetManifest = serde_json::from_str(&json)
            .map_err(|e| Error::data(format!("bad dataset manifest: {e}")))?;
        let skeleton = io::load_skeleton(&dir.join("skeleton.txt"))?;
        let stats = io::load_stats(&dir.join("stats.txt"))?;
        let mut clips = Vec::new();
        for name in &manifest.clips {
            clips.push(io::load_motion(&dir.join(name), skeleton.clone())?);
        }
        let mut segments = Vec::new();
        for name in &manifest.segments {
            let clip = io::load_motion(&dir.join(name), skeleton.clone())?;
            if clip.len() != manifest.segment_len {
                return Err(Error::data(format!(
                    "segment {name} has {} frames, manifest says {}",
                    clip.len(),
                    manifest.segment_len
                )));
            }
            segments.push(clip.frames);
        }
        manifest.split.verify(segments.len())?;
        Ok(Dataset {
            segments,
            split: manifest.split,
            stats,
            skeleton,
            fps: manifest.fps,
            segment_len: manifest.segment_len,
            stride: manifest.stride,
            clips,
        })
    }
}

/// Resolved dataset directory paths used by the CLI.
pub fn dataset_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (dir.join("dataset.json"), dir.join("stats.txt"), dir.join("skeleton.txt"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::pipeline::to_local_frame;
    use crate::motion::synth::{synth_dataset, SynthKind};

    fn gait_dataset(frames: usize) -> Dataset {
        let world = synth_dataset(SynthKind::Gait, frames, 5).unwrap();
        let local = to_local_frame(&world).unwrap();
        Dataset::prepare(vec![local], 40, 10, 7).unwrap()
    }

    #[test]
    fn prepare_counts_and_normalization() {
        let ds = gait_dataset(2000);
        assert_eq!(ds.segments.len(), 197);
        assert_eq!(ds.split.validation.len(), 20);
        assert_eq!(ds.split.test.len(), 20);
        // training split is z-scored
        let train_refs: Vec<&Tensor> = ds.split.train.iter().map(|&i| &ds.segments[i]).collect();
        let mom = compute_stats(&train_refs).unwrap();
        for c in 0..73 {
            assert!(mom.mean[c].abs() < 1e-9, "channel {c} mean {}", mom.mean[c]);
        }
    }

    #[test]
    fn save_load_roundtrip_is_deterministic() {
        let ds = gait_dataset(400);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        ds.save(&a, 7).unwrap();
        ds.save(&b, 7).unwrap();
        // identical bytes across saves
        for name in ["dataset.json", "stats.txt", "skeleton.txt"] {
            assert_eq!(
                std::fs::read(a.join(name)).unwrap(),
                std::fs::read(b.join(name)).unwrap(),
                "{name} differs"
            );
        }
        let loaded = Dataset::load(&a).unwrap();
        assert_eq!(loaded.segments.len(), ds.segments.len());
        assert_eq!(loaded.split, ds.split);
        for (x, y) in loaded.segments.iter().zip(&ds.segments) {
            assert_eq!(x.data(), y.data());
        }
    }
}
