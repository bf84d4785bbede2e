use indexmap::IndexMap;

use crate::error::{shape_err, NumError, Result};
use crate::{Scalar, Tensor};

/// Handle to one underlying parameter tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors. Several names may resolve to the same tensor
/// (aliases); an update through any name is visible through all of them.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    tensors: Vec<Tensor<T>>,
    /// First name registered for each tensor.
    canonical: Vec<String>,
    names: IndexMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
            canonical: Vec::new(),
            names: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(NumError::Invalid(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.tensors.push(tensor);
        self.canonical.push(name.clone());
        self.names.insert(name, id);
        Ok(id)
    }

    /// Registers `name` as another view of `target`.
    pub fn alias(&mut self, name: impl Into<String>, target: ParamId) -> Result<()> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(NumError::Invalid(format!("duplicate parameter name {name}")));
        }
        if target.0 >= self.tensors.len() {
            return Err(NumError::Invalid(format!("alias {name} targets unknown parameter")));
        }
        self.names.insert(name, target);
        Ok(())
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| &self.tensors[id.0])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(|id| &mut self.tensors[id.0])
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    /// Replaces a tensor's values; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.tensors[id.0];
        if slot.shape() != value.shape() {
            return Err(shape_err(
                "set",
                format!(
                    "{}: expected {:?}, got {:?}",
                    self.canonical[id.0],
                    slot.shape(),
                    value.shape()
                ),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn canonical_name(&self, id: ParamId) -> &str {
        &self.canonical[id.0]
    }

    /// Number of distinct tensors.
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Distinct tensors with their canonical names, in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.canonical[i].as_str(), t))
    }

    /// Every registered name including aliases.
    pub fn names(&self) -> impl Iterator<Item = (&str, ParamId)> {
        self.names.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Scalar count over distinct tensors (aliases counted once).
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            canonical: self.canonical.clone(),
            names: self.names.clone(),
        }
    }
}

/// Gradients for every tensor of a store. Parameters the loss does not
/// depend on hold zeros and are outside [`Gradients::support`].
#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    grads: Vec<Tensor<T>>,
    reached: Vec<bool>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect(),
            reached: vec![false; store.len()],
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[T]) {
        let slot = self.grads[id.0].data_mut();
        for (g, &d) in slot.iter_mut().zip(grad) {
            *g += d;
        }
        self.reached[id.0] = true;
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.grads[id.0]
    }

    /// Whether the loss graph reached this parameter.
    pub fn is_reached(&self, id: ParamId) -> bool {
        self.reached[id.0]
    }

    pub fn mark_reached(&mut self, id: ParamId) {
        self.reached[id.0] = true;
    }

    /// Parameters the loss graph reached.
    pub fn support(&self) -> Vec<ParamId> {
        (0..self.grads.len())
            .filter(|&i| self.reached[i])
            .map(ParamId)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Global L2 norm over all gradients.
    pub fn norm(&self) -> T {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aliases_share_storage() {
        let mut store = ParamStore::<f32>::new();
        let id = store.insert("speech.layer6.w", Tensor::zeros(&[2])).unwrap();
        store.alias("text.layer0.w", id).unwrap();
        store.get_mut("text.layer0.w").unwrap().data_mut()[1] = 3.0;
        assert_eq!(store.get("speech.layer6.w").unwrap().data(), &[0.0, 3.0]);
        assert_eq!(store.len(), 1);
        assert_eq!(store.num_scalars(), 2);
        assert!(store.alias("text.layer0.w", id).is_err());
    }

    #[test]
    fn set_rejects_new_shape() {
        let mut store = ParamStore::<f32>::new();
        let id = store.insert("w", Tensor::zeros(&[2, 2])).unwrap();
        let err = store.set(id, Tensor::zeros(&[4])).unwrap_err();
        assert!(err.to_string().contains("w"));
    }
}
