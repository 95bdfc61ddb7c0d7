//! Text file formats: motion clips, skeletons, normalization statistics and
//! control signals.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! load-save cycle is byte-identical and a save-load cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{
    joint_index_by_name, MotionClip, NormalizationStats, Skeleton, FRAME_DIMS, JOINT_COUNT,
    JOINT_NAMES,
};

pub const MOTION_MAGIC: &str = "STRNN-MOTION v1";

/// Serialize a clip: header line then one line of 73 values per frame.
pub fn motion_to_string(clip: &MotionClip) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} fps={} frames={} dims={}",
        MOTION_MAGIC,
        clip.fps as i64,
        clip.len(),
        FRAME_DIMS
    );
    for t in 0..clip.len() {
        let row = clip.frame(t);
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn motion_from_str(text: &str, skeleton: Skeleton) -> Result<MotionClip> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::data("empty motion file".to_string()))?;
    let rest = header
        .strip_prefix(MOTION_MAGIC)
        .ok_or_else(|| Error::data(format!("bad motion header: {header}")))?;
    let mut fps = None;
    let mut frames = None;
    let mut dims = None;
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::data(format!("bad header field '{field}'")))?;
        match key {
            "fps" => fps = Some(value.parse::<f64>().map_err(|e| Error::data(format!("bad fps: {e}")))?),
            "frames" => frames = Some(value.parse::<usize>().map_err(|e| Error::data(format!("bad frame count: {e}")))?),
            "dims" => dims = Some(value.parse::<usize>().map_err(|e| Error::data(format!("bad dims: {e}")))?),
            other => return Err(Error::data(format!("unknown header field '{other}'"))),
        }
    }
    let fps = fps.ok_or_else(|| Error::data("header missing fps".to_string()))?;
    let n_frames = frames.ok_or_else(|| Error::data("header missing frames".to_string()))?;
    let dims = dims.ok_or_else(|| Error::data("header missing dims".to_string()))?;
    if dims != FRAME_DIMS {
        return Err(Error::data(format!("expected dims={FRAME_DIMS}, got {dims}")));
    }
    let mut data = Vec::with_capacity(n_frames * FRAME_DIMS);
    let mut seen = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|e| Error::data(format!("frame {lineno}: bad value '{tok}': {e}")))?;
            data.push(v);
        }
        if data.len() - before != FRAME_DIMS {
            return Err(Error::data(format!(
                "frame {lineno}: expected {FRAME_DIMS} values, got {}",
                data.len() - before
            )));
        }
        seen += 1;
    }
    if seen != n_frames {
        return Err(Error::data(format!(
            "header promises {n_frames} frames, file holds {seen}"
        )));
    }
    let frames = Tensor::new(seen, FRAME_DIMS, data)?;
    MotionClip::new(fps, frames, skeleton)
}

pub fn save_motion(clip: &MotionClip, path: &Path) -> Result<()> {
    std::fs::write(path, motion_to_string(clip))?;
    Ok(())
}

pub fn load_motion(path: &Path, skeleton: Skeleton) -> Result<MotionClip> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    motion_from_str(&text, skeleton)
}

/// One line per joint: `name parent_name length_to_parent`, root listed as
/// `Root none 0`.
pub fn skeleton_to_string(s: &Skeleton) -> String {
    let mut out = String::from("Root none 0\n");
    for j in 0..JOINT_COUNT {
        let parent = match s.parent[j] {
            Some(p) => JOINT_NAMES[p],
            None => "Root",
        };
        let _ = writeln!(out, "{} {} {}", JOINT_NAMES[j], parent, s.length_to_parent[j]);
    }
    out
}

pub fn skeleton_from_str(text: &str) -> Result<Skeleton> {
    let by_name = joint_index_by_name();
    let mut parent = vec![None; JOINT_COUNT];
    let mut length = vec![0.0; JOINT_COUNT];
    let mut seen = vec![false; JOINT_COUNT];
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (name, parent_name, len_word) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::data(format!("bad skeleton line: {line}"))),
        };
        if name == "Root" {
            continue;
        }
        let j = *by_name
            .get(name)
            .ok_or_else(|| Error::data(format!("unknown joint '{name}'")))?;
        parent[j] = if parent_name == "Root" {
            None
        } else {
            Some(*by_name.get(parent_name).ok_or_else(|| {
                Error::data(format!("unknown parent joint '{parent_name}'"))
            })?)
        };
        length[j] = len_word
            .parse()
            .map_err(|e| Error::data(format!("bad bone length '{len_word}': {e}")))?;
        seen[j] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::data(format!(
            "skeleton file missing joint {}",
            JOINT_NAMES[missing]
        )));
    }
    let skel = Skeleton { parent, length_to_parent: length };
    skel.validate()?;
    Ok(skel)
}

pub fn save_skeleton(s: &Skeleton, path: &Path) -> Result<()> {
    std::fs::write(path, skeleton_to_string(s))?;
    Ok(())
}

pub fn load_skeleton(path: &Path) -> Result<Skeleton> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    skeleton_from_str(&text)
}

/// Two lines: `mean <73 values>` and `std <73 values>`.
pub fn stats_to_string(stats: &NormalizationStats) -> String {
    let mut out = String::new();
    for (label, values) in [("mean", &stats.mean), ("std", &stats.std)] {
        out.push_str(label);
        for v in values {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

pub fn stats_from_str(text: &str) -> Result<NormalizationStats> {
    let mut mean = None;
    let mut std = None;
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("mean") => {
                mean = Some(parse_floats(parts)?);
            }
            Some("std") => {
                std = Some(parse_floats(parts)?);
            }
            Some(other) => return Err(Error::data(format!("bad stats line '{other}'"))),
            None => {}
        }
    }
    let mean = mean.ok_or_else(|| Error::data("stats file missing mean".to_string()))?;
    let std = std.ok_or_else(|| Error::data("stats file missing std".to_string()))?;
    if mean.len() != FRAME_DIMS || std.len() != FRAME_DIMS {
        return Err(Error::data(format!(
            "stats must have {FRAME_DIMS} values per line, got {}/{}",
            mean.len(),
            std.len()
        )));
    }
    if std.iter().any(|&s| s <= 0.0) {
        return Err(Error::data("stats std values must be positive".to_string()));
    }
    Ok(NormalizationStats { mean, std })
}

fn parse_floats<'a>(parts: impl Iterator<Item = &'a str>) -> Result<Vec<f64>> {
    parts
        .map(|t| t.parse::<f64>().map_err(|e| Error::data(format!("bad float '{t}': {e}"))))
        .collect()
}

pub fn save_stats(stats: &NormalizationStats, path: &Path) -> Result<()> {
    std::fs::write(path, stats_to_string(stats))?;
    Ok(())
}

pub fn load_stats(path: &Path) -> Result<NormalizationStats> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    stats_from_str(&text)
}

/// Control signal: desired root planar velocity, angular velocity, and
/// optional contact flags per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    /// (vx, vz, omega) per frame.
    pub velocity: Vec<[f64; 3]>,
    /// Contact flags per frame, when provided.
    pub contacts: Option<Vec<[f64; 4]>>,
}

impl ControlSignal {
    pub fn len(&self) -> usize {
        self.velocity.len()
    }
    pub fn is_empty(&self) -> bool {
        self.velocity.is_empty()
    }

    pub fn constant(vx: f64, vz: f64, omega: f64, frames: usize) -> Self {
        ControlSignal { velocity: vec![[vx, vz, omega]; frames], contacts: None }
    }
}

/// Text lines `frame vx vz omega [c1 c2 c3 c4]`, frame indices 0-based and
/// consecutive.
pub fn control_from_str(text: &str) -> Result<ControlSignal> {
    let mut velocity = Vec::new();
    let mut contacts: Vec<[f64; 4]> = Vec::new();
    let mut has_contacts = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 && toks.len() != 8 {
            return Err(Error::data(format!(
                "control line needs 4 or 8 fields, got {}: {line}",
                toks.len()
            )));
        }
        let idx: usize = toks[0]
            .parse()
            .map_err(|e| Error::data(format!("bad frame index '{}': {e}", toks[0])))?;
        if idx != velocity.len() {
            return Err(Error::data(format!(
                "control frames must be consecutive: expected {}, got {idx}",
                velocity.len()
            )));
        }
        let f: Vec<f64> = toks[1..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|e| Error::data(format!("bad value '{t}': {e}"))))
            .collect::<Result<_>>()?;
        velocity.push([f[0], f[1], f[2]]);
        let with_c = toks.len() == 8;
        match has_contacts {
            None => has_contacts = Some(with_c),
            Some(h) if h != with_c => {
                return Err(Error::data(
                    "control lines must consistently include or omit contacts".to_string(),
                ))
            }
            _ => {}
        }
        if with_c {
            contacts.push([f[3], f[4], f[5], f[6]]);
        }
    }
    if velocity.is_empty() {
        return Err(Error::data("control file holds no frames".to_string()));
    }
    Ok(ControlSignal {
        velocity,
        contacts: if has_contacts == Some(true) { Some(contacts) } else { None },
    })
}

pub fn control_to_string(c: &ControlSignal) -> String {
    let mut out = String::new();
    for (t, v) in c.velocity.iter().enumerate() {
        let _ = write!(out, "{t} {} {} {}", v[0], v[1], v[2]);
        if let Some(flags) = &c.contacts {
            let f = flags[t];
            let _ = write!(out, " {} {} {} {}", f[0], f[1], f[2], f[3]);
        }
        out.push('\n');
    }
    out
}

pub fn load_control(path: &Path) -> Result<ControlSignal> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    control_from_str(&text)
}
