use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, in declaration order.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    uid: u64,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        for t in &mut self.tensors {
            t.requires_grad = requires_grad;
        }
    }

    /// Adds the gradients that belong to this store; others are ignored.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (uid, id, g) in &grads.entries {
            if *uid == self.uid {
                self.tensors[id.0].accumulate_grad(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Overwrites values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let id = other
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            let src = other.get(id);
            if src.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            t.data.copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.bit_eq(b))
    }
}

/// Leaf gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    pub(crate) entries: Vec<(u64, ParamId, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, store: &ParamStore<T>, id: ParamId) -> Option<&[T]> {
        self.entries
            .iter()
            .find(|(uid, pid, _)| *uid == store.uid && *pid == id)
            .map(|(_, _, g)| g.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
