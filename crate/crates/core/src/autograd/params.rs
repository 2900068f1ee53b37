use std::collections::BTreeMap;

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Parameters keyed by id, iterated in id order.
///
/// `version` increases on every mutable access so an executor can tell whether
/// the activations it recorded are still consistent with the parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
    version: u64,
}

/// Gradients share the parameter store's layout.
pub type Gradients<T = f32> = BTreeMap<String, Tensor<T>>;

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
            version: 0,
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, tensor: Tensor<T>) {
        self.version += 1;
        self.tensors.insert(id.into(), tensor);
    }

    pub fn get(&self, id: &str) -> Option<&Tensor<T>> {
        self.tensors.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Tensor<T>> {
        self.version += 1;
        self.tensors.get_mut(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.version += 1;
        self.tensors.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn element_count(&self) -> u64 {
        self.tensors.values().map(|t| t.len() as u64).sum()
    }

    /// Re-keys every entry. Fails on the first key `f` rejects.
    pub fn map_ids(&self, mut f: impl FnMut(&str) -> Result<String>) -> Result<Self> {
        let mut out = Self::new();
        for (id, t) in &self.tensors {
            out.insert(f(id)?, t.clone());
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            version: 0,
        }
    }
}

impl ParamStore<f32> {
    pub fn bits_eq(&self, other: &ParamStore<f32>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, a), (kb, b))| ka == kb && a.bits_eq(b))
    }

    /// Flattened values of every parameter in id order.
    pub fn flat(&self) -> Vec<f32> {
        self.tensors.values().flat_map(|t| t.data().iter().copied()).collect()
    }
}

impl<T: Scalar> PartialEq for ParamStore<T> {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors
    }
}

impl<T: Scalar> FromIterator<(String, Tensor<T>)> for ParamStore<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        let mut s = Self::new();
        for (k, v) in iter {
            s.insert(k, v);
        }
        s
    }
}
