use std::collections::HashMap;

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which parameters alias one storage across the cascade.
///
/// Everything under the `gtn.` prefix is a single set of weights reused by
/// every stage; everything under `stage<i>.` belongs to stage `i` alone.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SharingGroup {
    Shared(String),
    Stage(usize),
    Other,
}

impl SharingGroup {
    pub fn from_name(name: &str) -> Self {
        let head = name.split('.').next().unwrap_or("");
        if let Some(idx) = head.strip_prefix("stage") {
            if let Ok(i) = idx.parse() {
                return SharingGroup::Stage(i);
            }
        }
        match head {
            "gtn" => SharingGroup::Shared(head.to_string()),
            _ => SharingGroup::Other,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub group: SharingGroup,
    pub tensor: Tensor<T>,
}

/// Non-trainable named state (batch-norm running moments).
#[derive(Clone, Debug)]
pub struct Buffer<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub initialized: bool,
}

/// Named parameter tensors plus non-trainable buffers, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
    buffers: Vec<Buffer<T>>,
    buffer_index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
            buffers: Vec::new(),
            buffer_index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "parameter `{name}` registered twice"
            )));
        }
        let id = self.params.len();
        self.params.push(Parameter {
            name: name.to_string(),
            group: SharingGroup::from_name(name),
            tensor,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn insert_buffer(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        if self.buffer_index.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "buffer `{name}` registered twice"
            )));
        }
        self.buffer_index.insert(name.to_string(), self.buffers.len());
        self.buffers.push(Buffer {
            name: name.to_string(),
            tensor,
            initialized: false,
        });
        Ok(())
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.params[self.id(name)?.0].tensor)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let id = self.id(name)?;
        Ok(&mut self.params[id.0].tensor)
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn buffer(&self, name: &str) -> Result<&Buffer<T>> {
        self.buffer_index
            .get(name)
            .map(|&i| &self.buffers[i])
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Buffer<T>> {
        match self.buffer_index.get(name) {
            Some(&i) => Ok(&mut self.buffers[i]),
            None => Err(Error::MissingParameter(name.to_string())),
        }
    }

    /// Copy of the store in another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    group: p.group.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            index: self.index.clone(),
            buffers: self
                .buffers
                .iter()
                .map(|b| Buffer {
                    name: b.name.clone(),
                    tensor: b.tensor.cast(),
                    initialized: b.initialized,
                })
                .collect(),
            buffer_index: self.buffer_index.clone(),
        }
    }
}
