//! Named model parameters.

use crate::error::{Error, Result};

use super::graph::numel;

/// One named tensor of a model. `trainable = false` entries (e.g. a frozen
/// head borrowed from another model) are bound as constants during forward
/// passes and skipped by the optimizer.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub trainable: bool,
}

/// Ordered collection of parameters with unique names. Order is the identity
/// used by optimizer state, graph binding slots, and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<usize> {
        self.add_with(name, shape, data, true)
    }

    pub fn add_frozen(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<usize> {
        self.add_with(name, shape, data, false)
    }

    fn add_with(
        &mut self,
        name: &str,
        shape: &[usize],
        data: Vec<f64>,
        trainable: bool,
    ) -> Result<usize> {
        if self.index_of(name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::Dim(format!(
                "parameter {name}: shape {shape:?} implies {} elements, got {}",
                numel(shape),
                data.len()
            )));
        }
        self.params.push(Parameter {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
            grad: None,
            trainable,
        });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn get(&self, slot: usize) -> &Parameter {
        &self.params[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Parameter {
        &mut self.params[slot]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Reset every trainable parameter's gradient accumulator to zeros.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            if p.trainable {
                p.grad = Some(vec![0.0; p.data.len()]);
            }
        }
    }

    /// Add `(slot, grad)` contributions into the accumulators.
    pub fn accumulate_grads(&mut self, grads: &[(usize, Vec<f64>)]) {
        for (slot, g) in grads {
            let p = &mut self.params[*slot];
            let acc = p.grad.get_or_insert_with(|| vec![0.0; p.data.len()]);
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Order-sensitive checksum over names, shapes, and exact data bits.
    pub fn checksum(&self) -> u64 {
        // FNV-1a over the byte stream.
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for p in &self.params {
            eat(p.name.as_bytes());
            for &d in &p.shape {
                eat(&(d as u64).to_le_bytes());
            }
            for &v in &p.data {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}
