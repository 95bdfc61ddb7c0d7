//! Named parameter and buffer stores.
//!
//! Learnable tensors live in a [`ParamSet`]; non-learnable state that still
//! has to be checkpointed (batch-norm running statistics) lives in a
//! [`BufferSet`]. Both are addressed by small copyable ids so the network
//! structs can stay plain data.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BufferId(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }
    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (ParamId(i), self.names[i].as_str(), v))
    }

    /// Total number of scalar values.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    /// Bit-exact hash over every value, in id order.
    pub fn state_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for t in &self.values {
            t.rows().hash(&mut h);
            t.cols().hash(&mut h);
            for v in t.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

#[derive(Debug, Clone, Default)]
pub struct BufferSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl BufferSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> BufferId {
        self.names.push(name.into());
        self.values.push(value);
        BufferId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: BufferId) -> &Tensor {
        &self.values[id.0]
    }
    pub fn get_mut(&mut self, id: BufferId) -> &mut Tensor {
        &mut self.values[id.0]
    }
    pub fn name(&self, id: BufferId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (BufferId, &str, &Tensor)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (BufferId(i), self.names[i].as_str(), v))
    }

    pub fn state_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for t in &self.values {
            t.rows().hash(&mut h);
            t.cols().hash(&mut h);
            for v in t.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}
