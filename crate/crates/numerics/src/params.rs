use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NumericsError, Result};
use crate::tensor::Tensor;

/// Dense handle of a parameter inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adam-family moment buffers for one parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MomentState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Option<Vec<f64>>,
    state: MomentState,
    /// Distance from the top of the network, used by layer-wise learning rate decay.
    depth: usize,
}

/// Named learnable tensors with their gradients and optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, ParamId>,
    /// Optimizer steps taken so far.
    pub step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, depth: usize) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(NumericsError::DuplicateParameter(name.to_string()));
        }
        let id = ParamId(self.entries.len());
        let n = value.len();
        self.entries.push(Entry {
            name: name.to_string(),
            value: value.with_grad(),
            grad: None,
            state: MomentState {
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
            depth,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Truncated normal (two standard deviations) weights.
    pub fn insert_normal<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f64,
        depth: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| truncated_normal(rng) * std).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?, depth)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize], depth: usize) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(shape), depth)
    }

    pub fn insert_ones(&mut self, name: &str, shape: &[usize], depth: usize) -> Result<ParamId> {
        self.insert(name, Tensor::filled(shape, 1.0), depth)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(self.value(self.id(name)?))
    }

    pub fn depth(&self, id: ParamId) -> usize {
        self.entries[id.0].depth
    }

    /// Overwrites values in place; the shape is fixed at insertion.
    pub fn set_values(&mut self, id: ParamId, data: &[f64]) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.len() != data.len() {
            return Err(NumericsError::Contract(format!(
                "parameter `{}` holds {} values, got {}",
                e.name,
                e.value.len(),
                data.len()
            )));
        }
        e.value.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.entries[id.0].value.data_mut()
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.entries[id.0].grad.as_deref()
    }

    pub fn state(&self, id: ParamId) -> &MomentState {
        &self.entries[id.0].state
    }

    pub fn state_mut(&mut self, id: ParamId) -> &mut MomentState {
        &mut self.entries[id.0].state
    }

    pub(crate) fn parts_mut(&mut self, id: ParamId) -> (&mut [f64], Option<&[f64]>, &mut MomentState) {
        let e = &mut self.entries[id.0];
        (e.value.data_mut(), e.grad.as_deref(), &mut e.state)
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Adds `grads` into the stored gradients. Parameters the graph never
    /// reached receive an explicit zero gradient.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (i, e) in self.entries.iter_mut().enumerate() {
            let slot = e.grad.get_or_insert_with(|| vec![0.0; e.value.len()]);
            if let Some(Some(g)) = grads.slots.get(i) {
                for (s, v) in slot.iter_mut().zip(g) {
                    *s += v;
                }
            }
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for e in &mut self.entries {
            if let Some(g) = &mut e.grad {
                g.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Layout check used when restoring values from disk.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.value.shape().to_vec()))
            .collect()
    }
}

fn truncated_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let x: f64 = StandardNormal.sample(rng);
        if x.abs() <= 2.0 {
            return x;
        }
    }
}

/// Per-parameter gradients produced by one backward pass; `None` means unreached.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub(crate) slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Self {
            slots: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    /// Gradient with unreached parameters reported as zeros.
    pub fn dense(&self, store: &ParameterStore, id: ParamId) -> Vec<f64> {
        self.get(id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; store.value(id).len()])
    }

    pub(crate) fn add_into(&mut self, id: ParamId, g: &[f64]) {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        match &mut self.slots[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub fn merge(&mut self, other: &Gradients) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.add_into(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn names_are_unique() {
        let mut s = ParameterStore::new();
        s.insert_zeros("w", &[2], 0).unwrap();
        assert!(matches!(
            s.insert_zeros("w", &[3], 0),
            Err(NumericsError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn shape_is_fixed() {
        let mut s = ParameterStore::new();
        let id = s.insert_zeros("w", &[2, 2], 0).unwrap();
        assert!(s.set_values(id, &[1.0; 3]).is_err());
        s.set_values(id, &[1.0; 4]).unwrap();
    }

    #[test]
    fn truncated_init_is_bounded() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let mut s = ParameterStore::new();
        let id = s.insert_normal("w", &[64, 64], 0.02, 0, &mut rng).unwrap();
        assert!(s.value(id).data().iter().all(|x| x.abs() <= 0.04));
    }

    #[test]
    fn accumulate_zero_fills_unreached() {
        let mut s = ParameterStore::new();
        let a = s.insert_zeros("a", &[2], 0).unwrap();
        let b = s.insert_zeros("b", &[3], 0).unwrap();
        let mut g = Gradients::new(2);
        g.add_into(a, &[1.0, 2.0]);
        s.accumulate(&g);
        assert_eq!(s.grad(a).unwrap(), &[1.0, 2.0]);
        assert_eq!(s.grad(b).unwrap(), &[0.0, 0.0, 0.0]);
    }
}
