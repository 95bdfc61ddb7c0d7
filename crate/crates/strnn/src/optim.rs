//! AdaDelta optimizer and L2 weight regularization.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, NodeId};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// AdaDelta hyperparameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdaDeltaConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// Learning-rate decay per step: lr_t = lr / (1 + decay·t).
    pub decay: f64,
}

impl Default for AdaDeltaConfig {
    fn default() -> Self {
        AdaDeltaConfig { learning_rate: 1.0, rho: 0.95, epsilon: 1e-8, decay: 0.0 }
    }
}

/// Per-parameter accumulators E[g²] and E[Δx²].
#[derive(Debug, Clone)]
pub struct AdaDeltaState {
    pub config: AdaDeltaConfig,
    acc_grad: HashMap<ParamId, Tensor>,
    acc_update: HashMap<ParamId, Tensor>,
    step: u64,
}

impl AdaDeltaState {
    pub fn new(config: AdaDeltaConfig) -> Self {
        AdaDeltaState { config, acc_grad: HashMap::new(), acc_update: HashMap::new(), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over the given parameters. Parameters without a recorded
    /// gradient are left untouched but their accumulators still decay.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &Gradients,
        targets: &[ParamId],
    ) -> Result<()> {
        let cfg = self.config;
        let lr = cfg.learning_rate / (1.0 + cfg.decay * self.step as f64);
        for &id in targets {
            let zero = Tensor::zeros(params.get(id).rows(), params.get(id).cols());
            let g = match grads.get_ref(id) {
                Some(g) => {
                    if let Some(pos) = g.first_non_finite() {
                        return Err(Error::numerical(format!(
                            "NaN/Inf gradient for parameter '{}' at element {}",
                            params.name(id),
                            pos
                        )));
                    }
                    g.clone()
                }
                None => zero.clone(),
            };
            let eg = self.acc_grad.entry(id).or_insert_with(|| zero.clone());
            *eg = eg.zip(&g, |e, gv| cfg.rho * e + (1.0 - cfg.rho) * gv * gv)?;
            let ex = self.acc_update.entry(id).or_insert_with(|| zero.clone());
            // Δx = −(√(E[Δx²]+ε)/√(E[g²]+ε))·g·lr
            let eg_now = self.acc_grad.get(&id).expect("inserted above");
            let mut delta = g.clone();
            for ((d, e_up), e_g) in delta
                .data_mut()
                .iter_mut()
                .zip(ex.data().iter())
                .zip(eg_now.data().iter())
            {
                *d = -((e_up + cfg.epsilon).sqrt() / (e_g + cfg.epsilon).sqrt()) * *d * lr;
            }
            *ex = ex.zip(&delta, |e, dv| cfg.rho * e + (1.0 - cfg.rho) * dv * dv)?;
            params.get_mut(id).add_assign(&delta)?;
        }
        self.step += 1;
        Ok(())
    }

    pub fn accumulator_grad(&self, id: ParamId) -> Option<&Tensor> {
        self.acc_grad.get(&id)
    }
    pub fn accumulator_update(&self, id: ParamId) -> Option<&Tensor> {
        self.acc_update.get(&id)
    }

    /// Named accumulator tensors for checkpointing, in parameter order.
    pub fn export(&self, params: &ParamSet) -> Vec<(String, Tensor, Tensor)> {
        let mut out = Vec::new();
        for (id, name, p) in params.iter() {
            let zero = || Tensor::zeros(p.rows(), p.cols());
            let eg = self.acc_grad.get(&id).cloned().unwrap_or_else(zero);
            let ex = self.acc_update.get(&id).cloned().unwrap_or_else(zero);
            out.push((name.to_string(), eg, ex));
        }
        out
    }

    /// Rebuild optimizer state from checkpointed accumulators, given in
    /// parameter order.
    pub fn import(
        config: AdaDeltaConfig,
        step: u64,
        params: &ParamSet,
        accumulators: Vec<(Tensor, Tensor)>,
    ) -> Result<Self> {
        if accumulators.len() != params.len() {
            return Err(Error::data(format!(
                "optimizer state holds {} entries for {} parameters",
                accumulators.len(),
                params.len()
            )));
        }
        let mut st = AdaDeltaState::new(config);
        st.step = step;
        for (id, (eg, ex)) in params.ids().zip(accumulators) {
            if !eg.same_shape(params.get(id)) || !ex.same_shape(params.get(id)) {
                return Err(Error::data(format!(
                    "optimizer accumulator shape mismatch for '{}'",
                    params.name(id)
                )));
            }
            st.acc_grad.insert(id, eg);
            st.acc_update.insert(id, ex);
        }
        Ok(st)
    }
}

/// coefficient · Σ‖p‖² over the given parameters, recorded on the tape so it
/// participates in the backward pass.
pub fn l2_penalty_graph(
    g: &mut Graph,
    ids: &[ParamId],
    coefficient: f64,
) -> Result<NodeId> {
    if coefficient < 0.0 {
        return Err(Error::config(format!("l2 coefficient must be >= 0, got {coefficient}")));
    }
    let mut total = g.scalar(0.0);
    if coefficient == 0.0 {
        return Ok(total);
    }
    for &id in ids {
        let p = g.param(id);
        let sq = g.square(p);
        let s = g.sum_all(sq);
        total = g.add(total, s)?;
    }
    Ok(g.scale(total, coefficient))
}

/// Plain value of the penalty, for reporting.
pub fn l2_penalty_value(params: &ParamSet, ids: &[ParamId], coefficient: f64) -> f64 {
    coefficient * ids.iter().map(|&id| params.get(id).sum_squares()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> (ParamSet, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::scalar(v));
        (ps, id)
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let (mut ps, id) = one_param(1.5);
        let mut st = AdaDeltaState::new(AdaDeltaConfig::default());
        for _ in 0..10 {
            let grads = Gradients::default();
            st.step(&mut ps, &grads, &[id]).unwrap();
        }
        assert_eq!(ps.get(id).item(), 1.5);
        // accumulators exist and decayed toward zero (they started there)
        assert_eq!(st.accumulator_grad(id).unwrap().item(), 0.0);
    }

    #[test]
    fn first_step_matches_hand_evaluated_update() {
        // g=1, ρ=0.95, ε=1e-8 → E[g²]=0.05, Δx = −√(1e-8)/√(0.05+1e-8) ≈ −4.4721e-4
        let (mut ps, id) = one_param(0.0);
        let mut st = AdaDeltaState::new(AdaDeltaConfig::default());
        let mut g = Graph::new(&ps);
        let p = g.param(id);
        let loss = g.sum_all(p); // dL/dw = 1
        let grads = g.backward(loss).unwrap();
        st.step(&mut ps, &grads, &[id]).unwrap();
        let expected = -(1e-8f64.sqrt() / (0.05f64 + 1e-8).sqrt());
        assert!((ps.get(id).item() - expected).abs() < 1e-12);
        assert!((expected + 4.47213e-4).abs() < 1e-8);
    }

    #[test]
    fn descends_quadratic_monotonically() {
        // f(w) = w² from w=1: |w| decreases every step.
        let (mut ps, id) = one_param(1.0);
        let mut st = AdaDeltaState::new(AdaDeltaConfig::default());
        let mut prev = 1.0f64;
        for _ in 0..2 {
            let mut g = Graph::new(&ps);
            let p = g.param(id);
            let sq = g.square(p);
            let loss = g.sum_all(sq);
            let grads = g.backward(loss).unwrap();
            st.step(&mut ps, &grads, &[id]).unwrap();
            let w = ps.get(id).item();
            assert!(w.abs() < prev.abs(), "{w} not closer to 0 than {prev}");
            prev = w;
        }
    }

    #[test]
    fn nan_gradient_aborts_naming_parameter() {
        let (mut ps, id) = one_param(1.0);
        let mut st = AdaDeltaState::new(AdaDeltaConfig::default());
        // force a NaN loss gradient via 0/0
        let mut g = Graph::new(&ps);
        let p = g.param(id);
        let zero = g.scale(p, 0.0);
        let nan = g.div_row(zero, zero).unwrap(); // 0/0
        let loss = g.sum_all(nan);
        let grads = g.backward(loss).unwrap();
        let err = st.step(&mut ps, &grads, &[id]).unwrap_err();
        assert!(err.to_string().contains('w'), "missing parameter name: {err}");
    }

    #[test]
    fn l2_penalty_examples() {
        let mut ps = ParamSet::new();
        let id = ps.add("v", Tensor::vector(&[3.0, 4.0]));
        let mut g = Graph::new(&ps);
        let zero = l2_penalty_graph(&mut g, &[id], 0.0).unwrap();
        assert_eq!(g.value(zero).item(), 0.0);
        let pen = l2_penalty_graph(&mut g, &[id], 0.01).unwrap();
        assert!((g.value(pen).item() - 0.25).abs() < 1e-15);
        assert_eq!(l2_penalty_value(&ps, &[id], 0.01), 0.25);
    }
}
