//! Sequence-to-sequence temporal network: an encoder whose final state seeds
//! both a backward-in-time decoder and a forward-in-time predictor.
//!
//! Generation is conditional in both branches: every step consumes the
//! branch's own previous output, in training and inference alike. Inputs
//! pass through a per-branch projection before the cell; an optional output
//! projection maps the hidden state back to the feature width when the two
//! differ (the raw-frame ablation).

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{dense_graph, glorot_uniform, Activation, DenseIds};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// Fused LSTM cell parameters: gate rows ordered input, forget, output,
/// candidate. The weight is 4H×(D+H); the bias 1×4H with the forget block
/// initialized to one.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CellIds {
    pub w: ParamId,
    pub b: ParamId,
    pub hidden: usize,
    pub input: usize,
}

impl CellIds {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let mut w = Tensor::zeros(4 * hidden, input + hidden);
        for gate in 0..4 {
            let block = glorot_uniform(hidden, input + hidden, input + hidden, hidden, rng);
            for r in 0..hidden {
                w.row_mut(gate * hidden + r).copy_from_slice(block.row(r));
            }
        }
        let mut b = Tensor::zeros(1, 4 * hidden);
        for c in hidden..2 * hidden {
            b.set(0, c, 1.0);
        }
        CellIds {
            w: params.add(format!("{name}.gates.w"), w),
            b: params.add(format!("{name}.gates.b"), b),
            hidden,
            input,
        }
    }
}

/// Transposed-weight handles prepared once per graph so the recurrence can
/// reuse them across steps.
struct CellNodes {
    wt: NodeId,
    b: NodeId,
}

/// One batched recurrence step: x is B×D, h and c are B×H.
fn cell_step(
    g: &mut Graph,
    cell: &CellIds,
    nodes: &CellNodes,
    x: NodeId,
    h: NodeId,
    c: NodeId,
) -> Result<(NodeId, NodeId)> {
    let hval = cell.hidden;
    let xh = g.concat_cols(&[x, h])?;
    let lin = g.matmul(xh, nodes.wt)?;
    let z = g.add_row(lin, nodes.b)?;
    let zi = g.slice_cols(z, 0, hval)?;
    let zf = g.slice_cols(z, hval, 2 * hval)?;
    let zo = g.slice_cols(z, 2 * hval, 3 * hval)?;
    let zg = g.slice_cols(z, 3 * hval, 4 * hval)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let o = g.sigmoid(zo);
    let gc = g.tanh(zg);
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, gc)?;
    let c_new = g.add(fc, ig)?;
    let ct = g.tanh(c_new);
    let h_new = g.mul(o, ct)?;
    Ok((h_new, c_new))
}

#[derive(Debug, Clone)]
pub struct TemporalNet {
    pub feature_width: usize,
    pub hidden: usize,
    fold_input_projection: bool,
    enc_proj: Option<DenseIds>,
    dec_proj: Option<DenseIds>,
    pred_proj: Option<DenseIds>,
    enc_cell: CellIds,
    dec_cell: CellIds,
    pred_cell: CellIds,
    out_proj: Option<DenseIds>,
}

impl TemporalNet {
    /// `feature_width` is the width of the sequence elements (the spatial
    /// latent width, or 73 for the raw-frame ablation). When it differs from
    /// `hidden`, an identity-activated output projection maps hidden states
    /// back to features.
    pub fn init(
        params: &mut ParamSet,
        feature_width: usize,
        hidden: usize,
        fold_input_projection: bool,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let cell_input = if fold_input_projection { feature_width } else { hidden };
        let mk_proj = |params: &mut ParamSet, name: &str, rng: &mut ChaCha12Rng| {
            if fold_input_projection {
                None
            } else {
                Some(DenseIds::init(params, name, hidden, feature_width, rng))
            }
        };
        let enc_proj = mk_proj(params, "temporal.enc.proj", rng);
        let dec_proj = mk_proj(params, "temporal.dec.proj", rng);
        let pred_proj = mk_proj(params, "temporal.pred.proj", rng);
        let enc_cell = CellIds::init(params, "temporal.enc", cell_input, hidden, rng);
        let dec_cell = CellIds::init(params, "temporal.dec", cell_input, hidden, rng);
        let pred_cell = CellIds::init(params, "temporal.pred", cell_input, hidden, rng);
        let out_proj = if feature_width != hidden {
            Some(DenseIds::init(params, "temporal.out", feature_width, hidden, rng))
        } else {
            None
        };
        TemporalNet {
            feature_width,
            hidden,
            fold_input_projection,
            enc_proj,
            dec_proj,
            pred_proj,
            enc_cell,
            dec_cell,
            pred_cell,
            out_proj,
        }
    }

    fn prep(&self, g: &mut Graph, cell: &CellIds) -> CellNodes {
        let w = g.param(cell.w);
        let wt = g.transpose(w);
        let b = g.param(cell.b);
        CellNodes { wt, b }
    }

    fn project(&self, g: &mut Graph, proj: &Option<DenseIds>, x: NodeId) -> Result<NodeId> {
        match proj {
            Some(ids) => dense_graph(g, *ids, x, Activation::Identity),
            None => Ok(x),
        }
    }

    fn emit(&self, g: &mut Graph, h: NodeId) -> Result<NodeId> {
        match &self.out_proj {
            Some(ids) => dense_graph(g, *ids, h, Activation::Identity),
            None => Ok(h),
        }
    }

    /// Consume a time-major feature sequence ((len·B)×F) and return the final
    /// (h, c), both B×H.
    pub fn encode(
        &self,
        g: &mut Graph,
        features: NodeId,
        batch: usize,
        len: usize,
    ) -> Result<(NodeId, NodeId)> {
        let rows = g.value(features).rows();
        if rows != len * batch {
            return Err(Error::shape(format!(
                "temporal encoder expects {len}×{batch} rows, got {rows}"
            )));
        }
        if g.value(features).cols() != self.feature_width {
            return Err(Error::shape(format!(
                "temporal encoder expects feature width {}, got {}",
                self.feature_width,
                g.value(features).cols()
            )));
        }
        let nodes = self.prep(g, &self.enc_cell);
        let mut h = g.constant(Tensor::zeros(batch, self.hidden));
        let mut c = g.constant(Tensor::zeros(batch, self.hidden));
        for t in 0..len {
            let x = g.slice_rows(features, t * batch, (t + 1) * batch)?;
            let u = self.project(g, &self.enc_proj, x)?;
            let (h2, c2) = cell_step(g, &self.enc_cell, &nodes, u, h, c)?;
            h = h2;
            c = c2;
        }
        Ok((h, c))
    }

    /// Backward-in-time conditional decoding from a copied encoder state.
    /// Step outputs are returned oldest-first (already re-reversed to forward
    /// time order): output[k] corresponds to encoded frame `len-1-k` before
    /// the reversal, `k` after.
    pub fn decode(
        &self,
        g: &mut Graph,
        init: (NodeId, NodeId),
        seed: NodeId,
        steps: usize,
        batch: usize,
    ) -> Result<NodeId> {
        if steps < 1 {
            return Err(Error::config("decode needs at least one step".to_string()));
        }
        let outs = self.run_conditional(g, &self.dec_cell, &self.dec_proj, init, seed, steps)?;
        let rev: Vec<NodeId> = outs.into_iter().rev().collect();
        let cat = g.concat_rows(&rev)?;
        debug_assert_eq!(g.value(cat).rows(), steps * batch);
        Ok(cat)
    }

    /// Forward-in-time conditional prediction from a copied encoder state.
    pub fn predict(
        &self,
        g: &mut Graph,
        init: (NodeId, NodeId),
        seed: NodeId,
        steps: usize,
        batch: usize,
    ) -> Result<NodeId> {
        if steps < 1 {
            return Err(Error::config("predict needs at least one step".to_string()));
        }
        let outs = self.run_conditional(g, &self.pred_cell, &self.pred_proj, init, seed, steps)?;
        let cat = g.concat_rows(&outs)?;
        debug_assert_eq!(g.value(cat).rows(), steps * batch);
        Ok(cat)
    }

    fn run_conditional(
        &self,
        g: &mut Graph,
        cell: &CellIds,
        proj: &Option<DenseIds>,
        init: (NodeId, NodeId),
        seed: NodeId,
        steps: usize,
    ) -> Result<Vec<NodeId>> {
        let nodes = self.prep(g, cell);
        let (mut h, mut c) = init;
        let mut input = seed;
        let mut outs = Vec::with_capacity(steps);
        for _ in 0..steps {
            let u = self.project(g, proj, input)?;
            let (h2, c2) = cell_step(g, cell, &nodes, u, h, c)?;
            h = h2;
            c = c2;
            let out = self.emit(g, h)?;
            outs.push(out);
            input = out;
        }
        Ok(outs)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.enc_cell.w,
            self.enc_cell.b,
            self.dec_cell.w,
            self.dec_cell.b,
            self.pred_cell.w,
            self.pred_cell.b,
        ];
        for p in [&self.enc_proj, &self.dec_proj, &self.pred_proj, &self.out_proj]
            .into_iter()
            .flatten()
        {
            ids.push(p.w);
            ids.push(p.b);
        }
        ids
    }

    /// Dense weights and biases for L2 regularization (cell gates included).
    pub fn l2_param_ids(&self) -> Vec<ParamId> {
        self.param_ids()
    }

    pub fn folded(&self) -> bool {
        self.fold_input_projection
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{lstm_cell_step, LstmCellParams, LstmState};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn features(rows: usize, cols: usize, seed: u64) -> Tensor {
        glorot_uniform(rows, cols, 1, 1, &mut rng(seed))
    }

    #[test]
    fn zero_parameters_give_zero_state_and_outputs() {
        let mut params = ParamSet::new();
        let net = TemporalNet::init(&mut params, 6, 6, false, &mut rng(1));
        // zero everything
        let ids = net.param_ids();
        for id in ids {
            let t = params.get(id).clone();
            *params.get_mut(id) = Tensor::zeros(t.rows(), t.cols());
        }
        let mut g = Graph::new(&params);
        let x = g.constant(features(8, 6, 2)); // 4 steps × batch 2
        let (h, c) = net.encode(&mut g, x, 2, 4).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c).data().iter().all(|&v| v == 0.0));
        let seed = g.slice_rows(x, 6, 8).unwrap();
        let dec = net.decode(&mut g, (h, c), seed, 3, 2).unwrap();
        assert!(g.value(dec).data().iter().all(|&v| v == 0.0));
        assert_eq!(g.value(dec).shape(), [6, 6]);
    }

    #[test]
    fn encode_len_one_reduces_to_single_cell_step() {
        // With the projection folded away, one encoder step must equal the
        // plain LSTM cell op on the same parameters.
        let mut params = ParamSet::new();
        let net = TemporalNet::init(&mut params, 3, 3, true, &mut rng(5));
        let x = features(1, 3, 6);
        let mut g = Graph::new(&params);
        let xn = g.constant(x.clone());
        let (h, c) = net.encode(&mut g, xn, 1, 1).unwrap();

        // mirror the fused matrix into the per-gate plain params
        let fused = params.get(net.enc_cell.w);
        let bias = params.get(net.enc_cell.b);
        let hidden = 3;
        let gate = |k: usize| {
            let mut w = Tensor::zeros(hidden, 3 + hidden);
            for r in 0..hidden {
                w.row_mut(r).copy_from_slice(fused.row(k * hidden + r));
            }
            let b = Tensor::vector(&bias.data()[k * hidden..(k + 1) * hidden]);
            (w, b)
        };
        let (wi, bi) = gate(0);
        let (wf, bf) = gate(1);
        let (wo, bo) = gate(2);
        let (wg, bg) = gate(3);
        let plain = LstmCellParams {
            w_input: wi,
            w_forget: wf,
            w_output: wo,
            w_candidate: wg,
            b_input: bi,
            b_forget: bf,
            b_output: bo,
            b_candidate: bg,
            hidden,
            input: 3,
        };
        let out = lstm_cell_step(&x, &LstmState::zeros(hidden), &plain).unwrap();
        for (a, b) in g.value(h).data().iter().zip(out.h.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in g.value(c).data().iter().zip(out.c.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn input_order_changes_final_state() {
        let mut params = ParamSet::new();
        let net = TemporalNet::init(&mut params, 5, 7, false, &mut rng(8));
        let x = features(4, 5, 9);
        let run = |seq: &Tensor| {
            let mut g = Graph::new(&params);
            let xn = g.constant(seq.clone());
            let (h, _) = net.encode(&mut g, xn, 1, 4).unwrap();
            g.value(h).clone()
        };
        let forward = run(&x);
        let reversed = run(&x.reverse_rows());
        let diff: f64 = forward
            .data()
            .iter()
            .zip(reversed.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-6, "permuted input produced identical state");
    }

    #[test]
    fn decoder_output_lengths_and_state_copy() {
        let mut params = ParamSet::new();
        let net = TemporalNet::init(&mut params, 4, 6, false, &mut rng(10));
        let x = features(6, 4, 11); // 3 steps × batch 2
        let mut g = Graph::new(&params);
        let xn = g.constant(x);
        let (h, c) = net.encode(&mut g, xn, 2, 3).unwrap();
        let seed = g.slice_rows(xn, 4, 6).unwrap();
        let dec = net.decode(&mut g, (h, c), seed, 3, 2).unwrap();
        let pred = net.predict(&mut g, (h, c), seed, 5, 2).unwrap();
        assert_eq!(g.value(dec).shape(), [6, 4]);
        assert_eq!(g.value(pred).shape(), [10, 4]);
    }

    #[test]
    fn generation_is_conditional_on_previous_output() {
        // Perturbing the seed input changes the second step's output: the
        // chain input is the branch's own previous output.
        let mut params = ParamSet::new();
        let net = TemporalNet::init(&mut params, 4, 4, false, &mut rng(13));
        let x = features(2, 4, 14);
        let run = |seed_tensor: Tensor| {
            let mut g = Graph::new(&params);
            let xn = g.constant(x.clone());
            let (h, c) = net.encode(&mut g, xn, 1, 2).unwrap();
            let seed = g.constant(seed_tensor);
            let pred = net.predict(&mut g, (h, c), seed, 3, 1).unwrap();
            g.value(pred).clone()
        };
        let base = run(features(1, 4, 15));
        let tweaked = run(features(1, 4, 16));
        let step2_diff: f64 = base
            .row(1)
            .iter()
            .zip(tweaked.row(1))
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(step2_diff > 1e-9, "later steps ignore earlier outputs");
    }

    #[test]
    fn tiny_configuration_passes_gradient_check() {
        // hidden 4, encode 3, predict 2
        fn pipeline_loss(
            net: &TemporalNet,
            g: &mut Graph,
            x: &Tensor,
            target: &Tensor,
        ) -> crate::error::Result<NodeId> {
            let xn = g.constant(x.clone());
            let (h, c) = net.encode(g, xn, 1, 3)?;
            let seed = g.slice_rows(xn, 2, 3)?;
            let dec = net.decode(g, (h, c), seed, 3, 1)?;
            let pred = net.predict(g, (h, c), seed, 2, 1)?;
            let tgt = g.constant(target.clone());
            let d = g.sub(pred, tgt)?;
            let sq = g.square(d);
            let l1 = g.mean_all(sq);
            let sq2 = g.square(dec);
            let l2 = g.mean_all(sq2);
            let loss = g.add(l1, l2)?;
            Ok(loss)
        }

        let mut params = ParamSet::new();
        let net = TemporalNet::init(&mut params, 4, 4, false, &mut rng(20));
        let ids = net.param_ids();
        let x = features(3, 4, 21);
        let target = features(2, 4, 22);
        let grads = {
            let mut g = Graph::new(&params);
            let loss = pipeline_loss(&net, &mut g, &x, &target).unwrap();
            g.backward(loss).unwrap()
        };
        let report = crate::gradcheck::finite_diff_check(
            &mut params,
            &ids,
            &grads,
            |params| {
                let mut g = Graph::new(params);
                let loss = pipeline_loss(&net, &mut g, &x, &target)?;
                Ok(g.value(loss).item())
            },
            1e-4,
            6,
            23,
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }
}
