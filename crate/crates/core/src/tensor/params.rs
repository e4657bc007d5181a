use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::{Real, Tensor};
use super::TensorError;

/// Named trainable tensors in a fixed insertion order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<S: Real = f32> {
    tensors: IndexMap<String, Tensor<S>>,
}

/// Manifest entry describing one tensor inside a raw blob.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, t: Tensor<S>) -> Result<(), TensorError> {
        if self.tensors.contains_key(name) {
            return Err(TensorError::InvalidArgument(format!(
                "duplicate parameter {name}"
            )));
        }
        self.tensors.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Places every parameter on `graph` as a trainable leaf.
    pub fn bind(&self, graph: &mut Graph<S>) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), graph.param(k, v.clone())))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

impl ParamStore<f32> {
    /// Serializes all tensors, in order, as little-endian `f32` values.
    pub fn to_blob(&self) -> (Vec<TensorEntry>, Vec<u8>) {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut bytes = Vec::with_capacity(self.num_scalars() * 4);
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: "f32".into(),
                shape: t.shape().to_vec(),
            });
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        (entries, bytes)
    }

    pub fn from_blob(entries: &[TensorEntry], bytes: &[u8]) -> Result<Self, TensorError> {
        let expected: usize = entries
            .iter()
            .map(|e| e.shape.iter().product::<usize>() * 4)
            .sum();
        if expected != bytes.len() {
            return Err(TensorError::CorruptBlob {
                expected,
                found: bytes.len(),
            });
        }
        let mut store = ParamStore::new();
        let mut offset = 0;
        for e in entries {
            if e.dtype != "f32" {
                return Err(TensorError::InvalidArgument(format!(
                    "unsupported dtype {}",
                    e.dtype
                )));
            }
            let n: usize = e.shape.iter().product();
            let data = bytes[offset..offset + n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            offset += n * 4;
            store.insert(&e.name, Tensor::new(e.shape.clone(), data)?)?;
        }
        Ok(store)
    }
}

/// Graph handles of a [`ParamStore`] bound with [`ParamStore::bind`].
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var, TensorError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::MissingParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }
}
