use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

/// Named trainable parameters backed by one flat value buffer and one flat
/// gradient buffer, so the optimizer can treat them as a single vector. The
/// gradient buffer is allocated on first use, keeping inference-only models
/// at half the memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    values: Vec<f64>,
    grads: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> ParamId {
        let len: usize = shape.iter().product();
        assert_eq!(len, values.len(), "parameter value count");
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name,
            shape: shape.to_vec(),
            offset: self.values.len(),
            len,
        });
        self.values.extend(values);
        id
    }

    /// Zero-mean Gaussian weights with std `sqrt(2 / fan_in)`.
    pub fn add_gaussian<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let values = (0..n).map(|_| normal.sample(rng)).collect();
        self.add(name, shape, values)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.values.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        let e = &self.entries[id.0];
        &self.values[e.offset..e.offset + e.len]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        let e = &self.entries[id.0];
        &mut self.values[e.offset..e.offset + e.len]
    }

    fn ensure_grads(&mut self) {
        if self.grads.len() != self.values.len() {
            self.grads.resize(self.values.len(), 0.0);
        }
    }

    /// Accumulated gradient; `None` before any gradient was accumulated.
    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        let e = &self.entries[id.0];
        self.grads.get(e.offset..e.offset + e.len)
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.ensure_grads();
        let e = &self.entries[id.0];
        &mut self.grads[e.offset..e.offset + e.len]
    }

    /// Copy of one parameter as a tensor carrying its gradient.
    pub fn tensor(&self, id: ParamId) -> Tensor {
        let mut t = Tensor::new(self.shape(id), self.value(id).to_vec())
            .expect("stored shapes are valid")
            .with_requires_grad(true);
        if let Some(g) = self.grad(id) {
            t.set_grad(g.to_vec()).expect("same length");
        }
        t
    }

    pub fn flat_values(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Flat gradient buffer; empty before any gradient was accumulated.
    pub fn flat_grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn values_and_grads_mut(&mut self) -> (&mut [f64], &[f64]) {
        self.ensure_grads();
        (&mut self.values, &self.grads)
    }

    pub fn zero_grads(&mut self) {
        self.ensure_grads();
        self.grads.fill(0.0);
    }

    /// Replace a parameter's values, checking the shape.
    pub fn assign(&mut self, id: ParamId, shape: &[usize], values: &[f64]) -> Result<()> {
        if self.shape(id) != shape {
            return Err(TensorError::Invalid {
                op: "assign",
                msg: format!(
                    "parameter {} has shape {:?}, got {:?}",
                    self.name(id),
                    self.shape(id),
                    shape
                ),
            });
        }
        self.value_mut(id).copy_from_slice(values);
        Ok(())
    }
}
