//! Full model assembly: spatial stack, temporal network and residual filter,
//! plus checkpoint persistence.
//!
//! Inside a graph, sequences are time-major: a batch of B segments of T
//! frames is one ((T·B)×73) tensor whose row t·B+b holds frame t of segment
//! b. Time slicing is then contiguous; the residual filter permutes to
//! batch-major internally to flatten whole blocks.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{
    dense_graph, Activation, BatchNormConfig, BnBuffers, DenseIds, ForwardPass, Mode,
};
use crate::motion::{BodyPartition, NormalizationStats, Skeleton, FRAME_DIMS};
use crate::optim::{AdaDeltaConfig, AdaDeltaState};
use crate::params::{BufferSet, ParamId, ParamSet};
use crate::spatial::SpatialNet;
use crate::temporal::TemporalNet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Component {
    Temporal,
    SpatioTemporal,
    Composite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Regime {
    Mse,
    LongHorizon,
    Hybrid,
}

/// Model naming scheme, e.g. `Composite_20_20_HY`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelTag {
    pub component: Component,
    pub encode_len: usize,
    pub predict_len: usize,
    pub regime: Regime,
}

impl ModelTag {
    /// Segment length the model consumes: encode_len + predict_len, with
    /// decode_len always equal to encode_len.
    pub fn segment_len(&self) -> usize {
        self.encode_len + self.predict_len
    }
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let comp = match self.component {
            Component::Temporal => "Temporal",
            Component::SpatioTemporal => "SpatioTemp",
            Component::Composite => "Composite",
        };
        let reg = match self.regime {
            Regime::Mse => "MSE",
            Regime::LongHorizon => "LH",
            Regime::Hybrid => "HY",
        };
        write!(f, "{}_{}_{}_{}", comp, self.encode_len, self.predict_len, reg)
    }
}

impl std::str::FromStr for ModelTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('_').collect();
        if parts.len() != 4 {
            return Err(Error::config(format!(
                "model tag '{s}' must look like Composite_20_20_HY"
            )));
        }
        let component = match parts[0] {
            "Temporal" => Component::Temporal,
            "SpatioTemp" => Component::SpatioTemporal,
            "Composite" => Component::Composite,
            other => return Err(Error::config(format!("unknown component '{other}'"))),
        };
        let encode_len: usize = parts[1]
            .parse()
            .map_err(|e| Error::config(format!("bad encode length: {e}")))?;
        let predict_len: usize = parts[2]
            .parse()
            .map_err(|e| Error::config(format!("bad predict length: {e}")))?;
        let regime = match parts[3] {
            "MSE" => Regime::Mse,
            "LH" => Regime::LongHorizon,
            "HY" => Regime::Hybrid,
            other => return Err(Error::config(format!("unknown regime '{other}'"))),
        };
        if encode_len == 0 || predict_len == 0 {
            return Err(Error::config("encode and predict lengths must be positive".to_string()));
        }
        Ok(ModelTag { component, encode_len, predict_len, regime })
    }
}

/// Structural hyperparameters. Together with a seed these determine the
/// parameter set exactly.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub tag: ModelTag,
    pub spatial_widths: [usize; 4],
    pub hidden: usize,
    pub residual_hidden: usize,
    pub dropout: f64,
    pub bn: BatchNormConfig,
    pub fold_input_projection: bool,
}

impl ModelConfig {
    pub fn new(tag: ModelTag) -> Self {
        ModelConfig {
            tag,
            spatial_widths: [64, 128, 256, 512],
            hidden: 512,
            residual_hidden: 512,
            dropout: 0.1,
            bn: BatchNormConfig::default(),
            fold_input_projection: false,
        }
    }

    pub fn with_widths(mut self, spatial: [usize; 4], hidden: usize) -> Self {
        self.spatial_widths = spatial;
        self.hidden = hidden;
        self.residual_hidden = hidden;
        self
    }

    fn structural_eq(&self, other: &ModelConfig) -> bool {
        self.tag == other.tag
            && self.spatial_widths == other.spatial_widths
            && self.hidden == other.hidden
            && self.residual_hidden == other.residual_hidden
            && self.fold_input_projection == other.fold_input_projection
    }
}

/// Block-level filter: a four-layer ELU stack over the flattened motion
/// block, applied as an additive correction (output = input + F(input)).
/// The final layer starts at zero so composition starts as a no-op.
#[derive(Debug, Clone)]
pub struct ResidualNet {
    layers: [DenseIds; 4],
    block_len: usize,
    frame_dims: usize,
}

impl ResidualNet {
    pub fn init(
        params: &mut ParamSet,
        block_len: usize,
        frame_dims: usize,
        hidden: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let flat = block_len * frame_dims;
        let layers = [
            DenseIds::init(params, "residual.l0", hidden, flat, rng),
            DenseIds::init(params, "residual.l1", hidden, hidden, rng),
            DenseIds::init(params, "residual.l2", hidden, hidden, rng),
            DenseIds::init_zero(params, "residual.l3", flat, hidden),
        ];
        ResidualNet { layers, block_len, frame_dims }
    }

    /// block is time-major (T·B)×d; returns the filtered block, same layout.
    pub fn apply(&self, g: &mut Graph, block: NodeId, batch: usize) -> Result<NodeId> {
        let t = self.block_len;
        let d = self.frame_dims;
        let rows = g.value(block).rows();
        if rows != t * batch || g.value(block).cols() != d {
            return Err(Error::shape(format!(
                "residual expects ({t}·{batch})×{d}, got {rows}×{}",
                g.value(block).cols()
            )));
        }
        // time-major → batch-major
        let to_batch: Arc<Vec<usize>> =
            Arc::new((0..batch).flat_map(|b| (0..t).map(move |tt| tt * batch + b)).collect());
        let bm = g.gather_rows(block, to_batch)?;
        let flat = g.reshape(bm, batch, t * d)?;
        let h0 = dense_graph(g, self.layers[0], flat, Activation::Elu)?;
        let h1 = dense_graph(g, self.layers[1], h0, Activation::Elu)?;
        let h2 = dense_graph(g, self.layers[2], h1, Activation::Elu)?;
        let correction = dense_graph(g, self.layers[3], h2, Activation::Identity)?;
        let unflat = g.reshape(correction, batch * t, d)?;
        // batch-major → time-major
        let to_time: Arc<Vec<usize>> =
            Arc::new((0..t).flat_map(|tt| (0..batch).map(move |b| b * t + tt)).collect());
        let tm = g.gather_rows(unflat, to_time)?;
        g.add(block, tm)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }

    pub fn final_layer(&self) -> DenseIds {
        self.layers[3]
    }
}

/// Nodes produced by one forward pass.
pub struct ForwardNodes {
    pub decoded: NodeId,
    pub predicted: NodeId,
    /// Decoded and predicted halves concatenated along time, after the
    /// residual filter when one is active.
    pub block: NodeId,
}

/// Plain-tensor result of an evaluation forward.
pub struct ForwardResult {
    pub decoded: Tensor,
    pub predicted: Tensor,
    pub block: Tensor,
}

pub struct StrnnModel {
    pub config: ModelConfig,
    pub partition: BodyPartition,
    pub skeleton: Skeleton,
    pub stats: NormalizationStats,
    pub params: ParamSet,
    pub buffers: BufferSet,
    pub spatial: Option<SpatialNet>,
    pub temporal: TemporalNet,
    pub residual: Option<ResidualNet>,
}

impl StrnnModel {
    pub fn init(
        config: ModelConfig,
        skeleton: Skeleton,
        stats: NormalizationStats,
        seed: u64,
    ) -> Result<Self> {
        skeleton.validate()?;
        let partition = BodyPartition::standard();
        partition.verify()?;
        if stats.mean.len() != FRAME_DIMS || stats.std.len() != FRAME_DIMS {
            return Err(Error::config(format!(
                "normalization stats must cover {FRAME_DIMS} channels"
            )));
        }
        let mut params = ParamSet::new();
        let mut buffers = BufferSet::new();
        let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0x57a71c));

        let spatial = match config.tag.component {
            Component::Temporal => None,
            _ => {
                let net = SpatialNet::init(
                    &mut params,
                    &mut buffers,
                    &partition,
                    config.spatial_widths,
                    FRAME_DIMS,
                    &mut rng,
                )?;
                debug_assert_eq!(
                    net.encoder_weight_elements(&params),
                    net.decoder_weight_elements(&params)
                );
                Some(net)
            }
        };
        let feature_width = match &spatial {
            Some(s) => s.latent_width(),
            None => FRAME_DIMS,
        };
        let temporal = TemporalNet::init(
            &mut params,
            feature_width,
            config.hidden,
            config.fold_input_projection,
            &mut rng,
        );
        let residual = match config.tag.component {
            Component::Composite => Some(ResidualNet::init(
                &mut params,
                config.tag.segment_len(),
                FRAME_DIMS,
                config.residual_hidden,
                &mut rng,
            )),
            _ => None,
        };
        Ok(StrnnModel {
            config,
            partition,
            skeleton,
            stats,
            params,
            buffers,
            spatial,
            temporal,
            residual,
        })
    }

    pub fn encode_len(&self) -> usize {
        self.config.tag.encode_len
    }
    pub fn predict_len(&self) -> usize {
        self.config.tag.predict_len
    }
    pub fn segment_len(&self) -> usize {
        self.config.tag.segment_len()
    }

    /// Parameters the long-horizon phase trains (everything but the residual).
    pub fn spatiotemporal_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.temporal.param_ids();
        if let Some(s) = &self.spatial {
            ids.extend(s.param_ids());
        }
        ids
    }

    pub fn residual_param_ids(&self) -> Vec<ParamId> {
        self.residual.as_ref().map(|r| r.param_ids()).unwrap_or_default()
    }

    pub fn all_param_ids(&self) -> Vec<ParamId> {
        self.params.ids().collect()
    }

    /// Dense weights and biases subject to L2 regularization.
    pub fn l2_param_ids(&self, include_residual: bool) -> Vec<ParamId> {
        let mut ids = self.temporal.l2_param_ids();
        if let Some(s) = &self.spatial {
            ids.extend(s.l2_param_ids());
        }
        if include_residual {
            ids.extend(self.residual_param_ids());
        }
        ids
    }

    /// Forward pass over a time-major normalized input of at least
    /// encode_len·batch rows. Only the first encode_len frames are read.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        input: NodeId,
        batch: usize,
        fw: &mut ForwardPass,
        include_residual: bool,
    ) -> Result<ForwardNodes> {
        let m = self.encode_len();
        let n = self.predict_len();
        let rows = g.value(input).rows();
        if rows < m * batch {
            return Err(Error::shape(format!(
                "forward needs at least {}×{batch} input rows, got {rows}",
                m
            )));
        }
        if g.value(input).cols() != FRAME_DIMS {
            return Err(Error::shape(format!(
                "forward expects {FRAME_DIMS} channels, got {}",
                g.value(input).cols()
            )));
        }
        let enc_in = g.slice_rows(input, 0, m * batch)?;
        let features = match &self.spatial {
            Some(s) => s.encode(g, enc_in, fw)?,
            None => enc_in,
        };
        let (h, c) = self.temporal.encode(g, features, batch, m)?;
        let seed = g.slice_rows(features, (m - 1) * batch, m * batch)?;
        let dec_feats = self.temporal.decode(g, (h, c), seed, m, batch)?;
        let pred_feats = self.temporal.predict(g, (h, c), seed, n, batch)?;
        let all_feats = g.concat_rows(&[dec_feats, pred_feats])?;
        let frames = match &self.spatial {
            Some(s) => s.decode(g, all_feats, fw)?,
            None => all_feats,
        };
        let block = match (&self.residual, include_residual) {
            (Some(r), true) => r.apply(g, frames, batch)?,
            _ => frames,
        };
        let decoded = g.slice_rows(block, 0, m * batch)?;
        let predicted = g.slice_rows(block, m * batch, (m + n) * batch)?;
        Ok(ForwardNodes { decoded, predicted, block })
    }

    /// Deterministic eval-mode forward on one normalized segment (l×73 or
    /// just the encode window). Returns plain tensors.
    pub fn infer(&self, segment: &Tensor) -> Result<ForwardResult> {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut fw = ForwardPass {
            mode: Mode::Eval,
            dropout: 0.0,
            bn: self.config.bn,
            rng: &mut rng,
            buffers: BnBuffers::Shared(&self.buffers),
        };
        let mut g = Graph::new(&self.params);
        let input = g.constant(segment.clone());
        let nodes = self.forward_graph(&mut g, input, 1, &mut fw, true)?;
        Ok(ForwardResult {
            decoded: g.value(nodes.decoded).clone(),
            predicted: g.value(nodes.predicted).clone(),
            block: g.value(nodes.block).clone(),
        })
    }

    /// Bit-exact hash of parameters and buffers.
    pub fn state_hash(&self) -> u64 {
        self.params.state_hash() ^ self.buffers.state_hash().rotate_left(1)
    }
}

// ---------------------------------------------------------------------------
// Time-major batch helpers
// ---------------------------------------------------------------------------

/// Interleave equal-length segments into one time-major tensor.
pub fn time_major(segments: &[&Tensor]) -> Result<Tensor> {
    let batch = segments.len();
    if batch == 0 {
        return Err(Error::shape("time_major: empty batch".to_string()));
    }
    let t = segments[0].rows();
    let d = segments[0].cols();
    if segments.iter().any(|s| s.rows() != t || s.cols() != d) {
        return Err(Error::shape("time_major: ragged segment shapes".to_string()));
    }
    let mut out = Tensor::zeros(t * batch, d);
    for (b, s) in segments.iter().enumerate() {
        for tt in 0..t {
            out.row_mut(tt * batch + b).copy_from_slice(s.row(tt));
        }
    }
    Ok(out)
}

/// Extract segment `b` from a time-major tensor.
pub fn from_time_major(data: &Tensor, batch: usize, b: usize) -> Result<Tensor> {
    if data.rows() % batch != 0 || b >= batch {
        return Err(Error::shape(format!(
            "from_time_major: {} rows, batch {batch}, index {b}",
            data.rows()
        )));
    }
    let t = data.rows() / batch;
    let mut out = Tensor::zeros(t, data.cols());
    for tt in 0..t {
        out.row_mut(tt).copy_from_slice(data.row(tt * batch + b));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"STRNNCK1";

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct OptimizerMeta {
    config: AdaDeltaConfig,
    step: u64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SkeletonMeta {
    parent: Vec<Option<usize>>,
    length_to_parent: Vec<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest {
    config: ModelConfig,
    stats_mean: Vec<f64>,
    stats_std: Vec<f64>,
    skeleton: SkeletonMeta,
    params: Vec<TensorMeta>,
    buffers: Vec<TensorMeta>,
    optimizer: Option<OptimizerMeta>,
}

fn write_tensor(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_tensor(read: &mut impl Read, rows: usize, cols: usize) -> Result<Tensor> {
    let mut buf = vec![0u8; rows * cols * 8];
    read.read_exact(&mut buf)
        .map_err(|e| Error::data(format!("checkpoint truncated: {e}")))?;
    let data = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::new(rows, cols, data)
}

impl StrnnModel {
    /// Versioned binary container: magic, manifest length, JSON manifest of
    /// shapes, then raw little-endian f64 blobs. Bit-exact round trip.
    pub fn save_checkpoint(&self, path: &Path, optimizer: Option<&AdaDeltaState>) -> Result<()> {
        let manifest = Manifest {
            config: self.config.clone(),
            stats_mean: self.stats.mean.clone(),
            stats_std: self.stats.std.clone(),
            skeleton: SkeletonMeta {
                parent: self.skeleton.parent.clone(),
                length_to_parent: self.skeleton.length_to_parent.clone(),
            },
            params: self
                .params
                .iter()
                .map(|(_, n, t)| TensorMeta { name: n.to_string(), rows: t.rows(), cols: t.cols() })
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|(_, n, t)| TensorMeta { name: n.to_string(), rows: t.rows(), cols: t.cols() })
                .collect(),
            optimizer: optimizer.map(|o| OptimizerMeta { config: o.config, step: o.steps_taken() }),
        };
        let manifest_json = serde_json::to_vec(&manifest)
            .map_err(|e| Error::data(format!("manifest serialization failed: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest_json);
        for (_, _, t) in self.params.iter() {
            write_tensor(&mut out, t);
        }
        for (_, _, t) in self.buffers.iter() {
            write_tensor(&mut out, t);
        }
        if let Some(o) = optimizer {
            for (_, eg, ex) in o.export(&self.params) {
                write_tensor(&mut out, &eg);
                write_tensor(&mut out, &ex);
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<(StrnnModel, Option<AdaDeltaState>)> {
        let mut file = std::fs::File::open(path)
            .map_err(|e| Error::data(format!("cannot open checkpoint {}: {e}", path.display())))?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)
            .map_err(|e| Error::data(format!("checkpoint truncated: {e}")))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::data("not a model checkpoint (bad magic)".to_string()));
        }
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)
            .map_err(|e| Error::data(format!("checkpoint truncated: {e}")))?;
        let manifest_len = u64::from_le_bytes(len_bytes) as usize;
        let mut manifest_buf = vec![0u8; manifest_len];
        file.read_exact(&mut manifest_buf)
            .map_err(|e| Error::data(format!("checkpoint truncated: {e}")))?;
        let manifest: Manifest = serde_json::from_slice(&manifest_buf)
            .map_err(|e| Error::data(format!("bad checkpoint manifest: {e}")))?;

        let skeleton = Skeleton {
            parent: manifest.skeleton.parent,
            length_to_parent: manifest.skeleton.length_to_parent,
        };
        let stats =
            NormalizationStats { mean: manifest.stats_mean, std: manifest.stats_std };
        let mut model = StrnnModel::init(manifest.config, skeleton, stats, 0)?;

        if manifest.params.len() != model.params.len()
            || manifest.buffers.len() != model.buffers.len()
        {
            return Err(Error::data(format!(
                "checkpoint holds {} params / {} buffers, model expects {} / {}",
                manifest.params.len(),
                manifest.buffers.len(),
                model.params.len(),
                model.buffers.len()
            )));
        }
        for (meta, id) in manifest.params.iter().zip(model.params.ids().collect::<Vec<_>>()) {
            let want = model.params.get(id);
            if meta.name != model.params.name(id)
                || meta.rows != want.rows()
                || meta.cols != want.cols()
            {
                return Err(Error::data(format!(
                    "checkpoint parameter '{}' ({}x{}) does not match model parameter '{}' ({}x{})",
                    meta.name,
                    meta.rows,
                    meta.cols,
                    model.params.name(id),
                    want.rows(),
                    want.cols()
                )));
            }
            *model.params.get_mut(id) = read_tensor(&mut file, meta.rows, meta.cols)?;
        }
        let buffer_ids: Vec<_> = model.buffers.iter().map(|(id, _, _)| id).collect();
        for (meta, id) in manifest.buffers.iter().zip(buffer_ids) {
            let want = model.buffers.get(id);
            if meta.name != model.buffers.name(id)
                || meta.rows != want.rows()
                || meta.cols != want.cols()
            {
                return Err(Error::data(format!(
                    "checkpoint buffer '{}' does not match model buffer '{}'",
                    meta.name,
                    model.buffers.name(id)
                )));
            }
            *model.buffers.get_mut(id) = read_tensor(&mut file, meta.rows, meta.cols)?;
        }
        let optimizer = match manifest.optimizer {
            Some(meta) => {
                let mut acc = Vec::with_capacity(model.params.len());
                let shapes: Vec<(usize, usize)> = model
                    .params
                    .iter()
                    .map(|(_, _, t)| (t.rows(), t.cols()))
                    .collect();
                for (rows, cols) in shapes {
                    let eg = read_tensor(&mut file, rows, cols)?;
                    let ex = read_tensor(&mut file, rows, cols)?;
                    acc.push((eg, ex));
                }
                Some(AdaDeltaState::import(meta.config, meta.step, &model.params, acc)?)
            }
            None => None,
        };
        // require exact end of file
        let mut extra = [0u8; 1];
        match file.read(&mut extra) {
            Ok(0) => {}
            Ok(_) => return Err(Error::data("checkpoint has trailing bytes".to_string())),
            Err(e) => return Err(Error::data(format!("checkpoint read error: {e}"))),
        }
        Ok((model, optimizer))
    }

    /// Error unless the checkpoint's structure matches `expected`.
    pub fn ensure_structure(&self, expected: &ModelConfig) -> Result<()> {
        if !self.config.structural_eq(expected) {
            return Err(Error::config(format!(
                "checkpoint is {} (widths {:?}, hidden {}), expected {} (widths {:?}, hidden {})",
                self.config.tag,
                self.config.spatial_widths,
                self.config.hidden,
                expected.tag,
                expected.spatial_widths,
                expected.hidden
            )));
        }
        Ok(())
    }
}
