//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of a forward pass as a node holding
//! its value and its parents. [`Graph::backward`] walks the tape in reverse
//! and produces exact gradients for every parameter leaf that was touched.
//! Node creation order is a topological order by construction, so no sorting
//! is needed. Evaluation is single-threaded and bit-reproducible.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// (r×c) + (1×c), broadcast over rows.
    AddRow(NodeId, NodeId),
    /// (r×c) − (1×c)
    SubRow(NodeId, NodeId),
    /// (r×c) ⊙ (1×c)
    MulRow(NodeId, NodeId),
    /// (r×c) ⊘ (1×c)
    DivRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Elu(NodeId),
    Sqrt(NodeId),
    Square(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    MeanRows(NodeId),
    SumCols(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize, usize),
    GatherCols(NodeId, Arc<Vec<usize>>),
    GatherRows(NodeId, Arc<Vec<usize>>),
    ScatterCols(NodeId, Arc<Vec<usize>>, usize),
    ReverseRows(NodeId),
    Reshape(NodeId),
    Transpose(NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients keyed by parameter id, produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    by_param: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient for `id`; zero tensor if the parameter never entered the graph.
    pub fn get(&self, id: ParamId, params: &ParamSet) -> Tensor {
        match self.by_param.get(&id) {
            Some(g) => g.clone(),
            None => {
                let p = params.get(id);
                Tensor::zeros(p.rows(), p.cols())
            }
        }
    }

    pub fn get_ref(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor)> {
        self.by_param.iter()
    }
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, NodeId>,
    /// When set, only these parameters propagate gradients; everything else
    /// is treated as constant. Used to freeze sub-networks.
    trainable: Option<Vec<bool>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph { params, nodes: Vec::new(), param_leaves: HashMap::new(), trainable: None }
    }

    /// Restrict gradient propagation to the given parameters.
    pub fn with_trainable(params: &'p ParamSet, trainable: &[ParamId]) -> Self {
        let mut mask = vec![false; params.len()];
        for id in trainable {
            mask[id.0] = true;
        }
        Graph {
            params,
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
            trainable: Some(mask),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Constant, false)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf for a parameter. Repeated calls return the same node, so shared
    /// weights accumulate their gradients naturally.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_leaves.get(&id) {
            return n;
        }
        let grad = match &self.trainable {
            Some(mask) => mask[id.0],
            None => true,
        };
        let value = self.params.get(id).clone();
        let n = self.push(value, Op::Param(id), grad);
        self.param_leaves.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).broadcast_row(self.value(row), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(v, Op::AddRow(a, row), rg))
    }

    pub fn sub_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).broadcast_row(self.value(row), |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(v, Op::SubRow(a, row), rg))
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).broadcast_row(self.value(row), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(v, Op::MulRow(a, row), rg))
    }

    pub fn div_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).broadcast_row(self.value(row), |x, y| x / y)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(v, Op::DivRow(a, row), rg))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a, s), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn elu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(elu);
        let rg = self.rg(a);
        self.push(v, Op::Elu(a), rg)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::sqrt);
        let rg = self.rg(a);
        self.push(v, Op::Sqrt(a), rg)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(v, Op::Square(a), rg)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(v, Op::MeanAll(a), rg)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mean_rows();
        let rg = self.rg(a);
        self.push(v, Op::MeanRows(a), rg)
    }

    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).sum_cols();
        let rg = self.rg(a);
        self.push(v, Op::SumCols(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&tensors)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_rows(&tensors)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a).slice_cols(start, end)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::SliceCols(a, start, end), rg))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a).slice_rows(start, end)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::SliceRows(a, start, end), rg))
    }

    pub fn gather_cols(&mut self, a: NodeId, idx: Arc<Vec<usize>>) -> Result<NodeId> {
        let v = self.value(a).gather_cols(&idx)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::GatherCols(a, idx), rg))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Arc<Vec<usize>>) -> Result<NodeId> {
        let v = self.value(a).gather_rows(&idx)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::GatherRows(a, idx), rg))
    }

    pub fn scatter_cols(
        &mut self,
        a: NodeId,
        idx: Arc<Vec<usize>>,
        width: usize,
    ) -> Result<NodeId> {
        let v = self.value(a).scatter_cols(&idx, width)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::ScatterCols(a, idx, width), rg))
    }

    pub fn reverse_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).reverse_rows();
        let rg = self.rg(a);
        self.push(v, Op::ReverseRows(a), rg)
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let v = self.value(a).reshape(rows, cols)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    /// Reverse pass from a scalar loss. Returns gradients for every parameter
    /// leaf that requires grad; untouched parameters read back as zero.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {}x{}",
                loss_node.value.rows(),
                loss_node.value.cols()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_parents(i, &g, &mut grads)?;
            // Parameter leaves keep their gradient for collection.
            if matches!(self.nodes[i].op, Op::Param(_)) {
                grads[i] = Some(g);
            }
        }

        let mut out = Gradients::default();
        for (&pid, &node) in &self.param_leaves {
            if !self.nodes[node.0].requires_grad {
                continue;
            }
            if let Some(g) = grads[node.0].take() {
                out.by_param.insert(pid, g);
            }
        }
        Ok(out)
    }

    fn add_grad(
        grads: &mut [Option<Tensor>],
        nodes: &[Node],
        id: NodeId,
        g: Tensor,
    ) -> Result<()> {
        if !nodes[id.0].requires_grad {
            return Ok(());
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn accumulate_parents(
        &self,
        i: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let nodes = &self.nodes;
        let val = |id: NodeId| -> &Tensor { &nodes[id.0].value };
        match &nodes[i].op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if nodes[a.0].requires_grad {
                    let ga = g.matmul(&val(*b).transpose())?;
                    Self::add_grad(grads, nodes, *a, ga)?;
                }
                if nodes[b.0].requires_grad {
                    let gb = val(*a).transpose().matmul(g)?;
                    Self::add_grad(grads, nodes, *b, gb)?;
                }
            }
            Op::Add(a, b) => {
                Self::add_grad(grads, nodes, *a, g.clone())?;
                Self::add_grad(grads, nodes, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                Self::add_grad(grads, nodes, *a, g.clone())?;
                Self::add_grad(grads, nodes, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                if nodes[a.0].requires_grad {
                    Self::add_grad(grads, nodes, *a, g.mul(val(*b))?)?;
                }
                if nodes[b.0].requires_grad {
                    Self::add_grad(grads, nodes, *b, g.mul(val(*a))?)?;
                }
            }
            Op::AddRow(a, r) => {
                Self::add_grad(grads, nodes, *a, g.clone())?;
                Self::add_grad(grads, nodes, *r, g.sum_rows())?;
            }
            Op::SubRow(a, r) => {
                Self::add_grad(grads, nodes, *a, g.clone())?;
                Self::add_grad(grads, nodes, *r, g.sum_rows().scale(-1.0))?;
            }
            Op::MulRow(a, r) => {
                if nodes[a.0].requires_grad {
                    Self::add_grad(grads, nodes, *a, g.broadcast_row(val(*r), |x, y| x * y)?)?;
                }
                if nodes[r.0].requires_grad {
                    let gr = g.mul(val(*a))?.sum_rows();
                    Self::add_grad(grads, nodes, *r, gr)?;
                }
            }
            Op::DivRow(a, r) => {
                if nodes[a.0].requires_grad {
                    Self::add_grad(grads, nodes, *a, g.broadcast_row(val(*r), |x, y| x / y)?)?;
                }
                if nodes[r.0].requires_grad {
                    // d/dr (a/r) = -a/r² ; y = a/r, so -y/r
                    let y = &nodes[i].value;
                    let gy = g.mul(y)?;
                    let mut gr = gy.sum_rows();
                    let rv = val(*r);
                    for (x, d) in gr.data_mut().iter_mut().zip(rv.data().iter()) {
                        *x = -*x / d;
                    }
                    Self::add_grad(grads, nodes, *r, gr)?;
                }
            }
            Op::Scale(a, s) => Self::add_grad(grads, nodes, *a, g.scale(*s))?,
            Op::AddScalar(a, _) => Self::add_grad(grads, nodes, *a, g.clone())?,
            Op::Tanh(a) => {
                let y = &nodes[i].value;
                let ga = g.zip(y, |gv, yv| gv * (1.0 - yv * yv))?;
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::Sigmoid(a) => {
                let y = &nodes[i].value;
                let ga = g.zip(y, |gv, yv| gv * yv * (1.0 - yv))?;
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::Elu(a) => {
                let x = val(*a);
                let ga = g.zip(x, |gv, xv| if xv > 0.0 { gv } else { gv * xv.exp() })?;
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::Sqrt(a) => {
                let y = &nodes[i].value;
                let ga = g.zip(y, |gv, yv| gv * 0.5 / yv)?;
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::Square(a) => {
                let x = val(*a);
                let ga = g.zip(x, |gv, xv| gv * 2.0 * xv)?;
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::SumAll(a) => {
                let x = val(*a);
                let ga = Tensor::full(x.rows(), x.cols(), g.item());
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::MeanAll(a) => {
                let x = val(*a);
                let ga = Tensor::full(x.rows(), x.cols(), g.item() / x.len() as f64);
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::MeanRows(a) => {
                let x = val(*a);
                let scale = 1.0 / x.rows() as f64;
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for c in 0..x.cols() {
                        ga.set(r, c, g.get(0, c) * scale);
                    }
                }
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::SumCols(a) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let gv = g.get(r, 0);
                    for c in 0..x.cols() {
                        ga.set(r, c, gv);
                    }
                }
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if nodes[p.0].requires_grad {
                        let gp = g.slice_cols(start, start + w)?;
                        Self::add_grad(grads, nodes, *p, gp)?;
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let h = val(*p).rows();
                    if nodes[p.0].requires_grad {
                        let gp = g.slice_rows(start, start + h)?;
                        Self::add_grad(grads, nodes, *p, gp)?;
                    }
                    start += h;
                }
            }
            Op::SliceCols(a, start, end) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for c in *start..*end {
                        ga.set(r, c, g.get(r, c - start));
                    }
                }
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::SliceRows(a, start, end) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for r in *start..*end {
                    let src = g.row(r - start).to_vec();
                    ga.row_mut(r).copy_from_slice(&src);
                }
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::GatherCols(a, idx) => {
                // Backward of gather is scatter-add (indices may repeat).
                let x = val(*a);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for (c, &i_src) in idx.iter().enumerate() {
                        let v = ga.get(r, i_src) + g.get(r, c);
                        ga.set(r, i_src, v);
                    }
                }
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::GatherRows(a, idx) => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for (r, &i_src) in idx.iter().enumerate() {
                    let src = g.row(r).to_vec();
                    for (dst, v) in ga.row_mut(i_src).iter_mut().zip(src) {
                        *dst += v;
                    }
                }
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::ScatterCols(a, idx, _w) => {
                let ga = g.gather_cols(idx)?;
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::ReverseRows(a) => {
                Self::add_grad(grads, nodes, *a, g.reverse_rows())?;
            }
            Op::Reshape(a) => {
                let x = val(*a);
                let ga = g.reshape(x.rows(), x.cols())?;
                Self::add_grad(grads, nodes, *a, ga)?;
            }
            Op::Transpose(a) => {
                Self::add_grad(grads, nodes, *a, g.transpose())?;
            }
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// ELU with α = 1.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param_set(entries: &[(&str, Tensor)]) -> (ParamSet, Vec<ParamId>) {
        let mut ps = ParamSet::new();
        let ids = entries.iter().map(|(n, t)| ps.add(*n, t.clone())).collect();
        (ps, ids)
    }

    #[test]
    fn linear_map_gradient_is_input_outer_structure() {
        // loss = sum(W·x) with x fixed → dL/dW has x^T replicated per row.
        let w = Tensor::new(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let (ps, ids) = param_set(&[("w", w)]);
        let mut g = Graph::new(&ps);
        let wn = g.param(ids[0]);
        let x = g.constant(Tensor::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.matmul(wn, x).unwrap();
        let loss = g.sum_all(y);
        let grads = g.backward(loss).unwrap();
        let gw = grads.get(ids[0], &ps);
        assert_eq!(gw.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let (ps, ids) = param_set(&[
            ("used", Tensor::scalar(2.0)),
            ("unused", Tensor::scalar(5.0)),
        ]);
        let mut g = Graph::new(&ps);
        let a = g.param(ids[0]);
        let loss = g.square(a);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(ids[0], &ps).item(), 4.0);
        assert_eq!(grads.get(ids[1], &ps).item(), 0.0);
        assert!(grads.get_ref(ids[1]).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let (ps, ids) = param_set(&[("w", Tensor::vector(&[1.0, 2.0]))]);
        let mut g = Graph::new(&ps);
        let w = g.param(ids[0]);
        assert!(g.backward(w).is_err());
    }

    #[test]
    fn shared_parameter_accumulates_from_both_uses() {
        // loss = w·w (via two param() calls referencing the same leaf) = w²
        let (ps, ids) = param_set(&[("w", Tensor::scalar(3.0))]);
        let mut g = Graph::new(&ps);
        let a = g.param(ids[0]);
        let b = g.param(ids[0]);
        assert_eq!(a, b);
        let prod = g.mul(a, b).unwrap();
        let loss = g.sum_all(prod);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(ids[0], &ps).item(), 6.0);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let (ps, ids) = param_set(&[("a", Tensor::scalar(2.0)), ("b", Tensor::scalar(3.0))]);
        let mut g = Graph::with_trainable(&ps, &[ids[1]]);
        let a = g.param(ids[0]);
        let b = g.param(ids[1]);
        let prod = g.mul(a, b).unwrap();
        let loss = g.sum_all(prod);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get_ref(ids[0]).is_none());
        assert_eq!(grads.get(ids[1], &ps).item(), 2.0);
    }
}
