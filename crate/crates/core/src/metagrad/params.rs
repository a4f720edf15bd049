use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named collection of every meta-learned leaf of a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    tensors: Vec<ParamTensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor, replacing an existing one of the same name.
    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data mismatch for {name}"
        );
        if let Some(id) = self.id(&name) {
            self.tensors[id.0] = ParamTensor { name, shape, data };
            return id;
        }
        self.tensors.push(ParamTensor { name, shape, data });
        ParamId(self.tensors.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| SmaError::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.0].data
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.id(name).map(|id| self.data(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Copies every tensor whose name starts with `prefix` from `other`.
    pub fn merge_prefix(&mut self, other: &ParameterSet, prefix: &str) {
        for t in &other.tensors {
            if t.name.starts_with(prefix) {
                self.insert(t.name.clone(), t.shape.clone(), t.data.clone());
            }
        }
    }

    /// Order-sensitive FNV-1a hash over names and the bit patterns of all values.
    pub fn checksum(&self) -> u64 {
        self.checksum_prefix("")
    }

    pub fn checksum_prefix(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for t in self.tensors.iter().filter(|t| t.name.starts_with(prefix)) {
            eat(t.name.as_bytes());
            for x in &t.data {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            names: self.tensors.iter().map(|t| t.name.clone()).collect(),
            values: self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }
}

/// Gradients aligned index-for-index with a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i].as_slice())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().flatten().for_each(|x| *x *= c);
    }

    pub fn global_norm(&self) -> f64 {
        self.values.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    /// Zeroes every tensor whose name does not start with one of `prefixes`.
    pub fn retain_prefixes(&mut self, prefixes: &[&str]) {
        for (name, v) in self.names.iter().zip(self.values.iter_mut()) {
            if !prefixes.iter().any(|p| name.starts_with(p)) {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// Sums a sequence of gradients in iteration order.
    pub fn sum_ordered<'a>(mut it: impl Iterator<Item = &'a Gradients>) -> Option<Gradients> {
        let mut acc = it.next()?.clone();
        for g in it {
            acc.add_assign(g);
        }
        Some(acc)
    }
}

impl fmt::Display for ParameterSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            writeln!(f, "{:<24} {:?}", t.name, t.shape)?;
        }
        Ok(())
    }
}
