//! Layer primitives: dense, LSTM cell, batch normalization, dropout.
//!
//! Each primitive exists as a plain tensor function (the contract checked by
//! the unit oracles) and, where the networks need gradients, as a graph
//! builder over the same math.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::graph::{elu, sigmoid, Graph, NodeId};
use crate::params::{BufferId, BufferSet, ParamId, ParamSet};
use crate::tensor::Tensor;

/// Forward-pass mode. Dropout and batch normalization behave differently in
/// the two modes; everything else is mode-independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Tanh,
    Elu,
    Identity,
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Elu => elu(x),
            Activation::Identity => x,
        }
    }

    pub fn apply_graph(&self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Elu => g.elu(x),
            Activation::Identity => x,
        }
    }
}

/// Fully-connected layer: `activation(W·x + b)` with `W` stored out×in.
#[derive(Debug, Clone)]
pub struct DenseLayerParams {
    pub w: Tensor,
    pub b: Tensor,
    pub activation: Activation,
}

impl DenseLayerParams {
    pub fn zeros(out: usize, input: usize, activation: Activation) -> Self {
        DenseLayerParams { w: Tensor::zeros(out, input), b: Tensor::zeros(1, out), activation }
    }

    pub fn input_width(&self) -> usize {
        self.w.cols()
    }
    pub fn output_width(&self) -> usize {
        self.w.rows()
    }
}

/// Batched dense forward: rows of `x` are independent inputs.
pub fn dense_forward(x: &Tensor, p: &DenseLayerParams) -> Result<Tensor> {
    if x.cols() != p.input_width() {
        return Err(Error::config(format!(
            "dense layer expects input width {}, got {}x{}",
            p.input_width(),
            x.rows(),
            x.cols()
        )));
    }
    let wt = p.w.transpose();
    let lin = x.matmul(&wt)?.broadcast_row(&p.b, |a, b| a + b)?;
    Ok(lin.map(|v| p.activation.apply(v)))
}

/// Hidden and cell vectors of one recurrent cell, both 1×H.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: Tensor::zeros(1, hidden), c: Tensor::zeros(1, hidden) }
    }

    pub fn hidden(&self) -> usize {
        self.h.cols()
    }
}

/// Per-gate weight matrices (H×(D+H)) and biases for one LSTM cell.
#[derive(Debug, Clone)]
pub struct LstmCellParams {
    pub w_input: Tensor,
    pub w_forget: Tensor,
    pub w_output: Tensor,
    pub w_candidate: Tensor,
    pub b_input: Tensor,
    pub b_forget: Tensor,
    pub b_output: Tensor,
    pub b_candidate: Tensor,
    pub hidden: usize,
    pub input: usize,
}

impl LstmCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(hidden, input + hidden);
        let b = || Tensor::zeros(1, hidden);
        LstmCellParams {
            w_input: w(),
            w_forget: w(),
            w_output: w(),
            w_candidate: w(),
            b_input: b(),
            b_forget: b(),
            b_output: b(),
            b_candidate: b(),
            hidden,
            input,
        }
    }

    fn validate(&self) -> Result<()> {
        let want = [self.hidden, self.input + self.hidden];
        for (name, w) in [
            ("input", &self.w_input),
            ("forget", &self.w_forget),
            ("output", &self.w_output),
            ("candidate", &self.w_candidate),
        ] {
            if w.shape() != want {
                return Err(Error::config(format!(
                    "lstm {} gate matrix is {}x{}, expected {}x{}",
                    name,
                    w.rows(),
                    w.cols(),
                    want[0],
                    want[1]
                )));
            }
        }
        Ok(())
    }
}

/// One step of the standard LSTM recurrence:
/// i,f,o = σ(W·[x;h]+b), g = tanh(W·[x;h]+b), c' = f⊙c + i⊙g, h' = o⊙tanh(c').
pub fn lstm_cell_step(x: &Tensor, s: &LstmState, p: &LstmCellParams) -> Result<LstmState> {
    p.validate()?;
    if x.len() != p.input {
        return Err(Error::config(format!(
            "lstm cell expects input width {}, got {}",
            p.input,
            x.len()
        )));
    }
    if s.hidden() != p.hidden {
        return Err(Error::config(format!(
            "lstm cell expects state width {}, got {}",
            p.hidden,
            s.hidden()
        )));
    }
    let xr = x.reshape(1, p.input)?;
    let xh = Tensor::concat_cols(&[&xr, &s.h])?;
    let gate = |w: &Tensor, b: &Tensor| -> Result<Tensor> {
        Ok(xh.matmul(&w.transpose())?.broadcast_row(b, |a, bb| a + bb)?)
    };
    let i = gate(&p.w_input, &p.b_input)?.map(sigmoid);
    let f = gate(&p.w_forget, &p.b_forget)?.map(sigmoid);
    let o = gate(&p.w_output, &p.b_output)?.map(sigmoid);
    let gc = gate(&p.w_candidate, &p.b_candidate)?.map(f64::tanh);
    let c_new = f.mul(&s.c)?.add(&i.mul(&gc)?)?;
    let h_new = o.mul(&c_new.map(f64::tanh))?;
    Ok(LstmState { h: h_new, c: c_new })
}

/// Batch normalization state for one feature width.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: Mode,
}

impl BatchNormState {
    pub fn new(width: usize, momentum: f64, epsilon: f64) -> Self {
        BatchNormState {
            gamma: Tensor::full(1, width, 1.0),
            beta: Tensor::zeros(1, width),
            running_mean: Tensor::zeros(1, width),
            running_var: Tensor::full(1, width, 1.0),
            momentum,
            epsilon,
            mode: Mode::Train,
        }
    }
}

/// Train mode normalizes by batch statistics (population variance) and
/// updates the running stats; eval mode is a pure function of the input.
pub fn batch_norm_forward(x: &Tensor, st: &mut BatchNormState) -> Result<Tensor> {
    if x.cols() != st.gamma.cols() {
        return Err(Error::config(format!(
            "batch norm expects width {}, got {}",
            st.gamma.cols(),
            x.cols()
        )));
    }
    match st.mode {
        Mode::Train => {
            if x.rows() < 2 {
                return Err(Error::config(
                    "batch norm in train mode needs a batch of at least 2 rows".to_string(),
                ));
            }
            let mean = x.mean_rows();
            let centered = x.broadcast_row(&mean, |a, m| a - m)?;
            let var = centered.map(|v| v * v).mean_rows();
            let m = st.momentum;
            st.running_mean = st
                .running_mean
                .zip(&mean, |r, b| m * r + (1.0 - m) * b)?;
            st.running_var = st.running_var.zip(&var, |r, b| m * r + (1.0 - m) * b)?;
            let denom = var.map(|v| (v + st.epsilon).sqrt());
            let norm = centered.broadcast_row(&denom, |a, d| a / d)?;
            let scaled = norm.broadcast_row(&st.gamma, |a, g| a * g)?;
            Ok(scaled.broadcast_row(&st.beta, |a, b| a + b)?)
        }
        Mode::Eval => {
            let denom = st.running_var.map(|v| (v + st.epsilon).sqrt());
            let centered = x.broadcast_row(&st.running_mean, |a, m| a - m)?;
            let norm = centered.broadcast_row(&denom, |a, d| a / d)?;
            let scaled = norm.broadcast_row(&st.gamma, |a, g| a * g)?;
            Ok(scaled.broadcast_row(&st.beta, |a, b| a + b)?)
        }
    }
}

/// Inverted dropout mask: entries are 0 with probability `rate`, otherwise
/// 1/(1−rate). Drawn row-major so the stream is reproducible.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut ChaCha12Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must be in [0,1), got {rate}")));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep_scale })
        .collect();
    Tensor::new(rows, cols, data)
}

/// Inverted dropout: identity in eval mode; in train mode zeroes each element
/// with probability `rate` and scales survivors by 1/(1−rate).
pub fn dropout_forward(
    x: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut ChaCha12Rng,
) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must be in [0,1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.rows(), x.cols(), rate, rng)?;
    x.mul(&mask)
}

/// Glorot uniform initialization in ±√(6/(fan_in+fan_out)).
pub fn glorot_uniform(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha12Rng,
) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::new(rows, cols, data).expect("shape consistent by construction")
}

// ---------------------------------------------------------------------------
// Graph builders. Parameter ids instead of tensors; same math as above.
// ---------------------------------------------------------------------------

/// Ids of a dense layer inside a `ParamSet`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DenseIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl DenseIds {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        out: usize,
        input: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let w = glorot_uniform(out, input, input, out, rng);
        DenseIds {
            w: params.add(format!("{name}.w"), w),
            b: params.add(format!("{name}.b"), Tensor::zeros(1, out)),
        }
    }

    pub fn init_zero(params: &mut ParamSet, name: &str, out: usize, input: usize) -> Self {
        DenseIds {
            w: params.add(format!("{name}.w"), Tensor::zeros(out, input)),
            b: params.add(format!("{name}.b"), Tensor::zeros(1, out)),
        }
    }
}

pub fn dense_graph(
    g: &mut Graph,
    ids: DenseIds,
    x: NodeId,
    activation: Activation,
) -> Result<NodeId> {
    let w = g.param(ids.w);
    let b = g.param(ids.b);
    let wt = g.transpose(w);
    let lin = g.matmul(x, wt)?;
    let biased = g.add_row(lin, b)?;
    Ok(activation.apply_graph(g, biased))
}

/// Ids of one batch-norm layer: learnable affine in the `ParamSet`, running
/// statistics in the `BufferSet`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct BatchNormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNormIds {
    pub fn init(
        params: &mut ParamSet,
        buffers: &mut BufferSet,
        name: &str,
        width: usize,
    ) -> Self {
        BatchNormIds {
            gamma: params.add(format!("{name}.gamma"), Tensor::full(1, width, 1.0)),
            beta: params.add(format!("{name}.beta"), Tensor::zeros(1, width)),
            running_mean: buffers.add(format!("{name}.running_mean"), Tensor::zeros(1, width)),
            running_var: buffers.add(format!("{name}.running_var"), Tensor::full(1, width, 1.0)),
        }
    }
}

/// Batch-norm hyperparameters shared by every layer of a model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig { momentum: 0.99, epsilon: 1e-5 }
    }
}

pub fn batch_norm_graph(
    g: &mut Graph,
    ids: BatchNormIds,
    cfg: BatchNormConfig,
    x: NodeId,
    mode: Mode,
    buffers: &mut BufferSet,
) -> Result<NodeId> {
    let mut wrap = BnBuffers::Exclusive(buffers);
    batch_norm_graph_buf(g, ids, cfg, x, mode, &mut wrap)
}

/// Batch-norm buffer access during a forward pass. Training needs exclusive
/// access to fold batch statistics into the running estimates; evaluation
/// only reads them, so shared access suffices.
pub enum BnBuffers<'a> {
    Shared(&'a BufferSet),
    Exclusive(&'a mut BufferSet),
}

impl BnBuffers<'_> {
    pub fn get(&self, id: BufferId) -> &Tensor {
        match self {
            BnBuffers::Shared(b) => b.get(id),
            BnBuffers::Exclusive(b) => b.get(id),
        }
    }

    fn get_mut(&mut self, id: BufferId) -> Result<&mut Tensor> {
        match self {
            BnBuffers::Shared(_) => Err(Error::config(
                "batch norm in train mode needs exclusive buffer access".to_string(),
            )),
            BnBuffers::Exclusive(b) => Ok(b.get_mut(id)),
        }
    }
}

/// Everything a network builder needs besides the graph itself.
pub struct ForwardPass<'a> {
    pub mode: Mode,
    pub dropout: f64,
    pub bn: BatchNormConfig,
    pub rng: &'a mut ChaCha12Rng,
    pub buffers: BnBuffers<'a>,
}

impl<'a> ForwardPass<'a> {
    pub fn eval(rng: &'a mut ChaCha12Rng, buffers: &'a BufferSet) -> Self {
        ForwardPass {
            mode: Mode::Eval,
            dropout: 0.0,
            bn: BatchNormConfig::default(),
            rng,
            buffers: BnBuffers::Shared(buffers),
        }
    }

    pub fn train(
        rng: &'a mut ChaCha12Rng,
        buffers: &'a mut BufferSet,
        dropout: f64,
        bn: BatchNormConfig,
    ) -> Self {
        ForwardPass { mode: Mode::Train, dropout, bn, rng, buffers: BnBuffers::Exclusive(buffers) }
    }
}

/// Dense(tanh-or-other) → dropout → batch norm, the block every spatial
/// level is built from.
pub fn block_graph(
    g: &mut Graph,
    dense: DenseIds,
    bn: BatchNormIds,
    activation: Activation,
    x: NodeId,
    fw: &mut ForwardPass,
) -> Result<NodeId> {
    let a = dense_graph(g, dense, x, activation)?;
    let d = dropout_graph(g, a, fw.dropout, fw.mode, Some(fw.rng))?;
    batch_norm_graph_buf(g, bn, fw.bn, d, fw.mode, &mut fw.buffers)
}

/// Batch norm over the [`BnBuffers`] wrapper.
pub fn batch_norm_graph_buf(
    g: &mut Graph,
    ids: BatchNormIds,
    cfg: BatchNormConfig,
    x: NodeId,
    mode: Mode,
    buffers: &mut BnBuffers,
) -> Result<NodeId> {
    let gamma = g.param(ids.gamma);
    let beta = g.param(ids.beta);
    match mode {
        Mode::Train => {
            if g.value(x).rows() < 2 {
                return Err(Error::config(
                    "batch norm in train mode needs a batch of at least 2 rows".to_string(),
                ));
            }
            let mean = g.mean_rows(x);
            let centered = g.sub_row(x, mean)?;
            let sq = g.square(centered);
            let var = g.mean_rows(sq);
            let m = cfg.momentum;
            let bm = g.value(mean).clone();
            let bv = g.value(var).clone();
            let rm = buffers.get_mut(ids.running_mean)?;
            *rm = rm.zip(&bm, |r, b| m * r + (1.0 - m) * b)?;
            let rv = buffers.get_mut(ids.running_var)?;
            *rv = rv.zip(&bv, |r, b| m * r + (1.0 - m) * b)?;
            let var_eps = g.add_scalar(var, cfg.epsilon);
            let denom = g.sqrt(var_eps);
            let norm = g.div_row(centered, denom)?;
            let scaled = g.mul_row(norm, gamma)?;
            g.add_row(scaled, beta)
        }
        Mode::Eval => {
            let rm = g.constant(buffers.get(ids.running_mean).clone());
            let denom_t = buffers.get(ids.running_var).map(|v| (v + cfg.epsilon).sqrt());
            let denom = g.constant(denom_t);
            let centered = g.sub_row(x, rm)?;
            let norm = g.div_row(centered, denom)?;
            let scaled = g.mul_row(norm, gamma)?;
            g.add_row(scaled, beta)
        }
    }
}

/// Dropout on the tape: multiplies by a freshly drawn constant mask.
pub fn dropout_graph(
    g: &mut Graph,
    x: NodeId,
    rate: f64,
    mode: Mode,
    rng: Option<&mut ChaCha12Rng>,
) -> Result<NodeId> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must be in [0,1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let rng = rng.ok_or_else(|| {
        Error::config("dropout in train mode needs a seeded rng".to_string())
    })?;
    let [rows, cols] = g.value(x).shape();
    let mask = g.constant(dropout_mask(rows, cols, rate, rng)?);
    g.mul(x, mask)
}

/// Gather the listed columns of `x` on the tape.
pub fn gather(g: &mut Graph, x: NodeId, idx: &Arc<Vec<usize>>) -> Result<NodeId> {
    g.gather_cols(x, Arc::clone(idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn dense_zero_weight_bias_half_tanh() {
        let mut p = DenseLayerParams::zeros(1, 2, Activation::Tanh);
        p.b = Tensor::vector(&[0.5]);
        let y = dense_forward(&Tensor::vector(&[0.0, 0.0]), &p).unwrap();
        assert!((y.item() - 0.5f64.tanh()).abs() < 1e-15);
        assert!((y.item() - 0.46211715726000974).abs() < 1e-12);
    }

    #[test]
    fn dense_identity_passthrough() {
        let mut p = DenseLayerParams::zeros(2, 2, Activation::Identity);
        p.w = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = dense_forward(&Tensor::vector(&[1.0, 2.0]), &p).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_elu_negative_closed_form() {
        let mut p = DenseLayerParams::zeros(1, 1, Activation::Elu);
        p.w = Tensor::new(1, 1, vec![1.0]).unwrap();
        let y = dense_forward(&Tensor::vector(&[-1.0]), &p).unwrap();
        assert!((y.item() - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!((y.item() + 0.6321205588285577).abs() < 1e-12);
    }

    #[test]
    fn dense_shape_mismatch_names_both_shapes() {
        let p = DenseLayerParams::zeros(3, 4, Activation::Tanh);
        let err = dense_forward(&Tensor::vector(&[1.0, 2.0]), &p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('4') && msg.contains('2'), "unhelpful message: {msg}");
    }

    #[test]
    fn lstm_zero_params_is_fixed_point() {
        let p = LstmCellParams::zeros(3, 2);
        let s = LstmState::zeros(2);
        let out = lstm_cell_step(&Tensor::vector(&[1.0, -2.0, 0.5]), &s, &p).unwrap();
        assert_eq!(out.h.data(), &[0.0, 0.0]);
        assert_eq!(out.c.data(), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_scalar_hand_oracle() {
        // H=1, D=1 with hand-picked gate weights; the expected values are the
        // five gate equations evaluated step by step with scalar math.
        let mut p = LstmCellParams::zeros(1, 1);
        p.w_input = Tensor::new(1, 2, vec![0.6, -0.4]).unwrap();
        p.w_forget = Tensor::new(1, 2, vec![-0.3, 0.8]).unwrap();
        p.w_output = Tensor::new(1, 2, vec![0.2, 0.5]).unwrap();
        p.w_candidate = Tensor::new(1, 2, vec![1.1, -0.7]).unwrap();
        p.b_input = Tensor::vector(&[0.1]);
        p.b_forget = Tensor::vector(&[0.2]);
        p.b_output = Tensor::vector(&[-0.1]);
        p.b_candidate = Tensor::vector(&[0.05]);
        let s = LstmState { h: Tensor::vector(&[0.3]), c: Tensor::vector(&[-0.2]) };
        let x = 0.7;

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(0.6 * x - 0.4 * 0.3 + 0.1);
        let f = sig(-0.3 * x + 0.8 * 0.3 + 0.2);
        let o = sig(0.2 * x + 0.5 * 0.3 - 0.1);
        let g = (1.1 * x - 0.7 * 0.3 + 0.05f64).tanh();
        let c_new = f * (-0.2) + i * g;
        let h_new = o * c_new.tanh();

        let out = lstm_cell_step(&Tensor::vector(&[x]), &s, &p).unwrap();
        assert!((out.c.item() - c_new).abs() < 1e-12);
        assert!((out.h.item() - h_new).abs() < 1e-12);
    }

    #[test]
    fn lstm_step_is_deterministic() {
        let mut r = rng(11);
        let mut p = LstmCellParams::zeros(2, 3);
        p.w_input = glorot_uniform(3, 5, 5, 3, &mut r);
        p.w_forget = glorot_uniform(3, 5, 5, 3, &mut r);
        p.w_output = glorot_uniform(3, 5, 5, 3, &mut r);
        p.w_candidate = glorot_uniform(3, 5, 5, 3, &mut r);
        let s = LstmState { h: Tensor::vector(&[0.1, -0.2, 0.3]), c: Tensor::vector(&[0.0, 0.5, -0.5]) };
        let x = Tensor::vector(&[0.4, -0.9]);
        let a = lstm_cell_step(&x, &s, &p).unwrap();
        let b = lstm_cell_step(&x, &s, &p).unwrap();
        assert_eq!(a.h.data(), b.h.data());
        assert_eq!(a.c.data(), b.c.data());
    }

    #[test]
    fn lstm_hidden_components_stay_in_open_unit_interval() {
        let mut r = rng(5);
        for trial in 0..20 {
            let mut p = LstmCellParams::zeros(4, 4);
            for w in [&mut p.w_input, &mut p.w_forget, &mut p.w_output, &mut p.w_candidate] {
                *w = glorot_uniform(4, 8, 8, 4, &mut r).scale(5.0);
            }
            let s = LstmState {
                h: glorot_uniform(1, 4, 4, 4, &mut r),
                c: glorot_uniform(1, 4, 4, 4, &mut r).scale(10.0),
            };
            let x = glorot_uniform(1, 4, 4, 4, &mut r).scale(10.0);
            let out = lstm_cell_step(&x, &s, &p).unwrap();
            for &v in out.h.data() {
                assert!(v > -1.0 && v < 1.0, "trial {trial}: h component {v} out of (-1,1)");
            }
        }
    }

    #[test]
    fn batch_norm_already_normalized_passthrough() {
        let mut st = BatchNormState::new(1, 0.99, 1e-5);
        // batch with mean 0, population variance 1
        let x = Tensor::new(2, 1, vec![1.0, -1.0]).unwrap();
        let y = batch_norm_forward(&x, &mut st).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn batch_norm_eval_affine_closed_form() {
        let mut st = BatchNormState::new(1, 0.99, 0.0);
        st.gamma = Tensor::vector(&[2.0]);
        st.beta = Tensor::vector(&[3.0]);
        st.mode = Mode::Eval;
        let y = batch_norm_forward(&Tensor::vector(&[1.0]), &mut st).unwrap();
        assert!((y.item() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_constant_batch_zero_before_affine() {
        let mut st = BatchNormState::new(2, 0.99, 1e-5);
        st.beta = Tensor::vector(&[7.0, -7.0]);
        let x = Tensor::new(3, 2, vec![4.0, -2.0, 4.0, -2.0, 4.0, -2.0]).unwrap();
        let y = batch_norm_forward(&x, &mut st).unwrap();
        // zero variance → normalized part exactly 0 → output = beta
        for r in 0..3 {
            assert_eq!(y.get(r, 0), 7.0);
            assert_eq!(y.get(r, 1), -7.0);
        }
    }

    #[test]
    fn batch_norm_batch_of_one_errors_in_train_mode() {
        let mut st = BatchNormState::new(2, 0.99, 1e-5);
        assert!(batch_norm_forward(&Tensor::vector(&[1.0, 2.0]), &mut st).is_err());
        st.mode = Mode::Eval;
        assert!(batch_norm_forward(&Tensor::vector(&[1.0, 2.0]), &mut st).is_ok());
    }

    #[test]
    fn dropout_rate_zero_and_eval_are_identity() {
        let x = Tensor::vector(&[1.0, 2.0, 3.0]);
        let mut r = rng(3);
        let y = dropout_forward(&x, 0.0, Mode::Train, &mut r).unwrap();
        assert_eq!(y.data(), x.data());
        let y = dropout_forward(&x, 0.7, Mode::Eval, &mut r).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let x = Tensor::vector(&[1.0]);
        let mut r = rng(3);
        assert!(dropout_forward(&x, 1.0, Mode::Train, &mut r).is_err());
    }

    #[test]
    fn dropout_preserves_mean_at_scale() {
        // 10^6 ones at rate 0.1: the inverted scaling keeps the mean within 1%.
        let n = 1_000_000;
        let x = Tensor::full(1, n, 1.0);
        let mut r = rng(42);
        let y = dropout_forward(&x, 0.1, Mode::Train, &mut r).unwrap();
        let mean = y.mean();
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        // deterministic per seed
        let mut r2 = rng(42);
        let y2 = dropout_forward(&x, 0.1, Mode::Train, &mut r2).unwrap();
        assert_eq!(y.data(), y2.data());
    }

    #[test]
    fn graph_dense_matches_plain_op() {
        let mut r = rng(9);
        let mut params = ParamSet::new();
        let ids = DenseIds::init(&mut params, "d", 3, 4, &mut r);
        let plain = DenseLayerParams {
            w: params.get(ids.w).clone(),
            b: params.get(ids.b).clone(),
            activation: Activation::Tanh,
        };
        let x = glorot_uniform(2, 4, 4, 3, &mut r);
        let want = dense_forward(&x, &plain).unwrap();
        let mut g = Graph::new(&params);
        let xn = g.constant(x);
        let y = dense_graph(&mut g, ids, xn, Activation::Tanh).unwrap();
        assert_eq!(g.value(y).data(), want.data());
    }

    #[test]
    fn graph_batch_norm_matches_plain_op_in_both_modes() {
        let mut r = rng(10);
        let mut params = ParamSet::new();
        let mut buffers = BufferSet::new();
        let cfg = BatchNormConfig::default();
        let ids = BatchNormIds::init(&mut params, &mut buffers, "bn", 3);
        let x = glorot_uniform(5, 3, 3, 3, &mut r).scale(2.0);

        let mut plain = BatchNormState::new(3, cfg.momentum, cfg.epsilon);
        let want_train = batch_norm_forward(&x, &mut plain).unwrap();

        let mut g = Graph::new(&params);
        let xn = g.constant(x.clone());
        let y = batch_norm_graph(&mut g, ids, cfg, xn, Mode::Train, &mut buffers).unwrap();
        for (a, b) in g.value(y).data().iter().zip(want_train.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // running stats advanced identically
        for (a, b) in buffers
            .get(ids.running_mean)
            .data()
            .iter()
            .zip(plain.running_mean.data())
        {
            assert!((a - b).abs() < 1e-15);
        }

        plain.mode = Mode::Eval;
        let want_eval = batch_norm_forward(&x, &mut plain).unwrap();
        let mut g2 = Graph::new(&params);
        let xn2 = g2.constant(x);
        let y2 = batch_norm_graph(&mut g2, ids, cfg, xn2, Mode::Eval, &mut buffers).unwrap();
        for (a, b) in g2.value(y2).data().iter().zip(want_eval.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
