//! Hybrid three-phase training.
//!
//! Phase 1 trains the spatio-temporal stack (reconstruction plus smoothness
//! under the tag's regime) with decaying input corruption on the encoder
//! window. Phase 2 pre-trains the residual standalone as a denoising block
//! autoencoder under the same schedule. Phase 3 freezes the spatio-temporal
//! parameters exactly and fine-tunes only the residual on the composed
//! model's own outputs; the frozen features are cached, which is valid
//! because evaluation-mode forwards are pure.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::{BnBuffers, ForwardPass, Mode};
use crate::losses::{
    reconstruction_loss, smoothness_loss, total_cost, CostRegime, LossWeights,
};
use crate::model::{from_time_major, time_major, Component, Regime, StrnnModel};
use crate::motion::pipeline::corrupt;
use crate::motion::NoiseSchedule;
use crate::optim::{l2_penalty_graph, AdaDeltaConfig, AdaDeltaState};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Iteration caps for phases 1–3.
    pub max_iters: [u64; 3],
    pub adadelta: AdaDeltaConfig,
    pub l2_coefficient: f64,
    pub dropout: f64,
    pub noise: NoiseSchedule,
    pub weights: LossWeights,
    pub seed: u64,
    /// Stop a phase after this many epochs without validation improvement.
    pub patience_epochs: u64,
    /// Optional early target: stop once validation C_r falls below it.
    pub stop_at_val: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_iters: [20_000, 3_000, 3_000],
            adadelta: AdaDeltaConfig::default(),
            l2_coefficient: 0.01,
            dropout: 0.1,
            noise: NoiseSchedule::default(),
            weights: LossWeights::default(),
            seed: 1,
            patience_epochs: 50,
            stop_at_val: None,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainLogRow {
    pub iter: u64,
    pub phase: u8,
    pub sigma: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,phase,sigma,train_loss,val_loss\n");
        for r in &self.rows {
            let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iter, r.phase, r.sigma, r.train_loss, val
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: TrainLog,
    pub best_val: f64,
    pub iterations: u64,
}

fn batches<'a>(
    order: &'a [usize],
    batch: usize,
) -> impl Iterator<Item = &'a [usize]> + 'a {
    order.chunks(batch)
}

/// Mean squared error of a model output block against clean targets,
/// split into decoded and predicted halves: C_r = C_d + C_p.
fn block_cr(block: &Tensor, clean: &Tensor, m_rows: usize) -> f64 {
    let half = |a: &Tensor, b: &Tensor, lo: usize, hi: usize| {
        let mut s = 0.0;
        let mut n = 0usize;
        for r in lo..hi {
            for (x, y) in a.row(r).iter().zip(b.row(r)) {
                let d = x - y;
                s += d * d;
                n += 1;
            }
        }
        s / n as f64
    };
    half(block, clean, 0, m_rows) + half(block, clean, m_rows, block.rows())
}

/// Eval-mode validation C_r of the (optionally residual-filtered) model over
/// the given segment indices.
pub fn validation_cr(
    model: &StrnnModel,
    data: &Dataset,
    indices: &[usize],
    include_residual: bool,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::data("validation split is empty".to_string()));
    }
    let segs: Vec<&Tensor> = indices.iter().map(|&i| data.segment(i)).collect();
    let batch = segs.len();
    let input = time_major(&segs)?;
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut fw = ForwardPass {
        mode: Mode::Eval,
        dropout: 0.0,
        bn: model.config.bn,
        rng: &mut rng,
        buffers: BnBuffers::Shared(&model.buffers),
    };
    let mut g = Graph::new(&model.params);
    let input_n = g.constant(input.clone());
    let nodes = model.forward_graph(&mut g, input_n, batch, &mut fw, include_residual)?;
    let block = g.value(nodes.block);
    Ok(block_cr(block, &input, model.encode_len() * batch))
}

struct PhaseState {
    best_val: f64,
    best_params: ParamSet,
    best_buffers: crate::params::BufferSet,
    epochs_since_best: u64,
}

impl PhaseState {
    fn new(model: &StrnnModel) -> Self {
        PhaseState {
            best_val: f64::INFINITY,
            best_params: model.params.clone(),
            best_buffers: model.buffers.clone(),
            epochs_since_best: 0,
        }
    }

    /// Returns true when this validation improved on the best.
    fn observe(&mut self, model: &StrnnModel, val: f64) -> bool {
        if val < self.best_val {
            self.best_val = val;
            self.best_params = model.params.clone();
            self.best_buffers = model.buffers.clone();
            self.epochs_since_best = 0;
            true
        } else {
            self.epochs_since_best += 1;
            false
        }
    }

    fn restore(self, model: &mut StrnnModel) -> f64 {
        model.params = self.best_params;
        model.buffers = self.best_buffers;
        self.best_val
    }
}

/// Phase 1: train the spatio-temporal stack. The tag's regime picks the loss
/// (MSE or MSE+smoothness); the residual, if present, is bypassed unless
/// `joint` is set (non-hybrid composite training).
pub fn train_spatiotemporal(
    model: &mut StrnnModel,
    data: &Dataset,
    cfg: &TrainConfig,
    joint: bool,
) -> Result<TrainReport> {
    let regime = match model.config.tag.regime {
        Regime::Mse => CostRegime::Mse,
        Regime::LongHorizon | Regime::Hybrid => CostRegime::LongHorizon,
    };
    let trainable: Vec<ParamId> = if joint {
        model.all_param_ids()
    } else {
        model.spatiotemporal_param_ids()
    };
    let l2_ids = model.l2_param_ids(joint);
    let include_residual = joint && model.residual.is_some();
    run_phase(
        model,
        data,
        cfg,
        PhaseSpec {
            phase: 1,
            max_iters: cfg.max_iters[0],
            trainable,
            l2_ids,
            regime,
            include_residual,
            corrupt_encoder_window: true,
            select_best: true,
        },
    )
}

/// Phase 2: pre-train the residual standalone as a denoising block
/// autoencoder. Returns the final state (the schedule ends at zero noise, so
/// late iterations are the anchor, not the best-validation snapshot).
pub fn train_residual(model: &mut StrnnModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    let residual = model
        .residual
        .as_ref()
        .ok_or_else(|| Error::config("model has no residual component".to_string()))?
        .clone();
    if data.segment_len != model.segment_len() {
        return Err(Error::config(format!(
            "dataset windows are {} frames, model expects {}",
            data.segment_len,
            model.segment_len()
        )));
    }
    let trainable = model.residual_param_ids();
    let mut opt = AdaDeltaState::new(cfg.adadelta);
    let mut log = TrainLog::default();
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x0002_5eed);
    let mut noise_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x0002_c0de);
    let mut order: Vec<usize> = data.split.train.to_vec();
    let iters_per_epoch = order.len().div_ceil(cfg.batch_size) as u64;
    let mut iter = 0u64;
    let max = cfg.max_iters[1];
    let mut last_val = f64::INFINITY;
    'outer: loop {
        order.shuffle(&mut shuffle_rng);
        for chunk in batches(&order, cfg.batch_size) {
            if iter >= max {
                break 'outer;
            }
            let sigma = cfg.noise.sigma(iter);
            let clean_refs: Vec<&Tensor> = chunk.iter().map(|&i| data.segment(i)).collect();
            let clean = time_major(&clean_refs)?;
            let noisy = corrupt(&clean, sigma, &mut noise_rng)?;
            let mut g = Graph::with_trainable(&model.params, &trainable);
            let noisy_n = g.constant(noisy);
            let out = residual.apply(&mut g, noisy_n, chunk.len())?;
            let clean_n = g.constant(clean);
            let d = g.sub(out, clean_n)?;
            let sq = g.square(d);
            let mse = g.mean_all(sq);
            let l2 = l2_penalty_graph(&mut g, &trainable, cfg.l2_coefficient)?;
            let loss = g.add(mse, l2)?;
            let loss_val = g.value(loss).item();
            if !loss_val.is_finite() {
                return Err(Error::numerical(format!(
                    "residual pre-training diverged at iteration {iter}"
                )));
            }
            let grads = g.backward(loss)?;
            opt.step(&mut model.params, &grads, &trainable)?;

            let at_epoch_end = (iter + 1) % iters_per_epoch == 0;
            let val = if at_epoch_end {
                let v = residual_validation(model, &residual, data)?;
                last_val = v;
                Some(v)
            } else {
                None
            };
            log.rows.push(TrainLogRow { iter, phase: 2, sigma, train_loss: loss_val, val_loss: val });
            iter += 1;
        }
    }
    Ok(TrainReport { log, best_val: last_val, iterations: iter })
}

fn residual_validation(
    model: &StrnnModel,
    residual: &crate::model::ResidualNet,
    data: &Dataset,
) -> Result<f64> {
    let refs: Vec<&Tensor> = data.split.validation.iter().map(|&i| data.segment(i)).collect();
    if refs.is_empty() {
        return Err(Error::data("validation split is empty".to_string()));
    }
    let clean = time_major(&refs)?;
    let mut g = Graph::new(&model.params);
    let x = g.constant(clean.clone());
    let out = residual.apply(&mut g, x, refs.len())?;
    let y = g.value(out);
    let mut s = 0.0;
    for (a, b) in y.data().iter().zip(clean.data()) {
        let d = a - b;
        s += d * d;
    }
    Ok(s / y.len() as f64)
}

/// Phase 3: freeze the spatio-temporal stack exactly and fine-tune only the
/// residual against the composed model's own (cached) outputs.
pub fn compose_and_finetune(
    model: &mut StrnnModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let residual = model
        .residual
        .as_ref()
        .ok_or_else(|| Error::config("model has no residual component".to_string()))?
        .clone();
    let trainable = model.residual_param_ids();
    let m_rows = model.encode_len();

    // Frozen eval-mode features are deterministic, so compute them once.
    let st_train = cached_blocks(model, data, &data.split.train, cfg.batch_size)?;
    let st_val = cached_blocks(model, data, &data.split.validation, cfg.batch_size)?;

    let mut opt = AdaDeltaState::new(cfg.adadelta);
    let mut log = TrainLog::default();
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x0003_5eed);
    let mut state = PhaseState::new(model);

    let val_now = |model: &StrnnModel| -> Result<f64> {
        let mut total = 0.0;
        for (block, &idx) in st_val.iter().zip(&data.split.validation) {
            let mut g = Graph::new(&model.params);
            let b = g.constant(block.clone());
            let out = residual.apply(&mut g, b, 1)?;
            total += block_cr(g.value(out), data.segment(idx), m_rows);
        }
        Ok(total / st_val.len() as f64)
    };

    // Baseline: the pristine composition is a selection candidate.
    let v0 = val_now(model)?;
    state.observe(model, v0);
    log.rows.push(TrainLogRow { iter: 0, phase: 3, sigma: 0.0, train_loss: f64::NAN, val_loss: Some(v0) });

    let mut order: Vec<usize> = (0..st_train.len()).collect();
    let iters_per_epoch = order.len().div_ceil(cfg.batch_size) as u64;
    let mut iter = 0u64;
    let max = cfg.max_iters[2];
    'outer: loop {
        order.shuffle(&mut shuffle_rng);
        for chunk in batches(&order, cfg.batch_size) {
            if iter >= max {
                break 'outer;
            }
            let st_refs: Vec<&Tensor> = chunk.iter().map(|&i| &st_train[i]).collect();
            let st_block = time_major(&st_refs)?;
            let clean_refs: Vec<&Tensor> =
                chunk.iter().map(|&i| data.segment(data.split.train[i])).collect();
            let clean = time_major(&clean_refs)?;
            let batch = chunk.len();
            let mut g = Graph::with_trainable(&model.params, &trainable);
            let b = g.constant(st_block);
            let out = residual.apply(&mut g, b, batch)?;
            let decoded = g.slice_rows(out, 0, m_rows * batch)?;
            let predicted = g.slice_rows(out, m_rows * batch, g.value(out).rows())?;
            let clean_n = g.constant(clean);
            let tgt_d = g.slice_rows(clean_n, 0, m_rows * batch)?;
            let tgt_p = g.slice_rows(clean_n, m_rows * batch, g.value(clean_n).rows())?;
            let c_r = reconstruction_loss(&mut g, decoded, predicted, tgt_d, tgt_p)?;
            let l2 = l2_penalty_graph(&mut g, &trainable, cfg.l2_coefficient)?;
            let loss = g.add(c_r, l2)?;
            let loss_val = g.value(loss).item();
            if !loss_val.is_finite() {
                let best = state.restore(model);
                let _ = best;
                return Err(Error::numerical(format!(
                    "fine-tuning diverged at iteration {iter}; best checkpoint restored"
                )));
            }
            let grads = g.backward(loss)?;
            opt.step(&mut model.params, &grads, &trainable)?;

            let at_epoch_end = (iter + 1) % iters_per_epoch == 0;
            let mut val = None;
            if at_epoch_end {
                let v = val_now(model)?;
                val = Some(v);
                state.observe(model, v);
            }
            log.rows.push(TrainLogRow {
                iter: iter + 1,
                phase: 3,
                sigma: 0.0,
                train_loss: loss_val,
                val_loss: val,
            });
            iter += 1;
            if state.epochs_since_best > cfg.patience_epochs {
                break 'outer;
            }
            if let Some(target) = cfg.stop_at_val {
                if state.best_val < target {
                    break 'outer;
                }
            }
        }
    }
    let best = state.restore(model);
    Ok(TrainReport { log, best_val: best, iterations: iter })
}

/// Eval-mode spatio-temporal output blocks (residual bypassed) per segment.
fn cached_blocks(
    model: &StrnnModel,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor> = chunk.iter().map(|&i| data.segment(i)).collect();
        let batch = refs.len();
        let input = time_major(&refs)?;
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut fw = ForwardPass {
            mode: Mode::Eval,
            dropout: 0.0,
            bn: model.config.bn,
            rng: &mut rng,
            buffers: BnBuffers::Shared(&model.buffers),
        };
        let mut g = Graph::new(&model.params);
        let x = g.constant(input);
        let nodes = model.forward_graph(&mut g, x, batch, &mut fw, false)?;
        let block = g.value(nodes.block);
        for b in 0..batch {
            out.push(from_time_major(block, batch, b)?);
        }
    }
    Ok(out)
}

struct PhaseSpec {
    phase: u8,
    max_iters: u64,
    trainable: Vec<ParamId>,
    l2_ids: Vec<ParamId>,
    regime: CostRegime,
    include_residual: bool,
    corrupt_encoder_window: bool,
    select_best: bool,
}

fn run_phase(
    model: &mut StrnnModel,
    data: &Dataset,
    cfg: &TrainConfig,
    spec: PhaseSpec,
) -> Result<TrainReport> {
    if data.segment_len != model.segment_len() {
        return Err(Error::config(format!(
            "dataset windows are {} frames, model expects {}",
            data.segment_len,
            model.segment_len()
        )));
    }
    cfg.weights.validate()?;
    let mut opt = AdaDeltaState::new(cfg.adadelta);
    let mut log = TrainLog::default();
    let phase_salt = spec.phase as u64;
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ (0x5eed << phase_salt));
    let mut noise_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ (0xc0de << phase_salt));
    let mut dropout_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ (0xd209 << phase_salt));
    let mut state = PhaseState::new(model);
    let m = model.encode_len();

    let mut order: Vec<usize> = data.split.train.to_vec();
    let iters_per_epoch = order.len().div_ceil(cfg.batch_size) as u64;
    let mut iter = 0u64;
    'outer: loop {
        order.shuffle(&mut shuffle_rng);
        for chunk in batches(&order, cfg.batch_size) {
            if iter >= spec.max_iters {
                break 'outer;
            }
            let sigma = if spec.corrupt_encoder_window { cfg.noise.sigma(iter) } else { 0.0 };
            let clean_refs: Vec<&Tensor> = chunk.iter().map(|&i| data.segment(i)).collect();
            let batch = chunk.len();
            let clean = time_major(&clean_refs)?;
            // corrupt only the encoder window; targets stay clean
            let input = if sigma > 0.0 {
                let mut noisy = clean.clone();
                let enc = noisy.slice_rows(0, m * batch)?;
                let enc_noisy = corrupt(&enc, sigma, &mut noise_rng)?;
                for r in 0..m * batch {
                    noisy.row_mut(r).copy_from_slice(enc_noisy.row(r));
                }
                noisy
            } else {
                clean.clone()
            };

            let mut g = Graph::with_trainable(&model.params, &spec.trainable);
            let input_n = g.constant(input);
            // buffers leave the model for the duration of the pass so the
            // batch-norm side effects and the shared model borrow can coexist
            let mut buffers = std::mem::take(&mut model.buffers);
            let forward = {
                let mut fw = ForwardPass {
                    mode: Mode::Train,
                    dropout: cfg.dropout,
                    bn: model.config.bn,
                    rng: &mut dropout_rng,
                    buffers: BnBuffers::Exclusive(&mut buffers),
                };
                model.forward_graph(&mut g, input_n, batch, &mut fw, spec.include_residual)
            };
            model.buffers = buffers;
            let nodes = forward?;
            let clean_n = g.constant(clean);
            let tgt_d = g.slice_rows(clean_n, 0, m * batch)?;
            let tgt_p = g.slice_rows(clean_n, m * batch, g.value(clean_n).rows())?;
            let c_r = reconstruction_loss(&mut g, nodes.decoded, nodes.predicted, tgt_d, tgt_p)?;
            let c_s = match spec.regime {
                CostRegime::Mse => None,
                _ => Some(smoothness_loss(
                    &mut g,
                    nodes.block,
                    batch,
                    &std::sync::Arc::new(model.partition.root.clone()),
                )?),
            };
            let l2 = l2_penalty_graph(&mut g, &spec.l2_ids, cfg.l2_coefficient)?;
            let loss = total_cost(&mut g, c_r, c_s, None, cfg.weights, spec.regime, Some(l2))?;
            let loss_val = g.value(loss).item();
            if !loss_val.is_finite() {
                let best = state.restore(model);
                let _ = best;
                return Err(Error::numerical(format!(
                    "phase {} diverged at iteration {iter}; best checkpoint restored",
                    spec.phase
                )));
            }
            let grads = g.backward(loss)?;
            drop(g);
            opt.step(&mut model.params, &grads, &spec.trainable)?;

            let at_epoch_end = (iter + 1) % iters_per_epoch == 0;
            let mut val = None;
            if at_epoch_end {
                let v = validation_cr(model, data, &data.split.validation, spec.include_residual)?;
                val = Some(v);
                state.observe(model, v);
            }
            log.rows.push(TrainLogRow {
                iter,
                phase: spec.phase,
                sigma,
                train_loss: loss_val,
                val_loss: val,
            });
            iter += 1;
            if at_epoch_end {
                if state.epochs_since_best > cfg.patience_epochs {
                    break 'outer;
                }
                if let Some(target) = cfg.stop_at_val {
                    if state.best_val < target {
                        break 'outer;
                    }
                }
            }
        }
    }
    let best = if spec.select_best {
        state.restore(model)
    } else {
        state.best_val
    };
    Ok(TrainReport { log, best_val: best, iterations: iter })
}

/// The full recipe for a tag: single-phase for the ablations, three-phase
/// for hybrid composite training. Returns one report per executed phase.
pub fn train_model(
    model: &mut StrnnModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<TrainReport>> {
    match (model.config.tag.component, model.config.tag.regime) {
        (Component::Composite, Regime::Hybrid) => {
            let r1 = train_spatiotemporal(model, data, cfg, false)?;
            let r2 = train_residual(model, data, cfg)?;
            let r3 = compose_and_finetune(model, data, cfg)?;
            Ok(vec![r1, r2, r3])
        }
        (Component::Composite, _) => {
            // non-hybrid composite: joint end-to-end training
            Ok(vec![train_spatiotemporal(model, data, cfg, true)?])
        }
        _ => Ok(vec![train_spatiotemporal(model, data, cfg, false)?]),
    }
}
