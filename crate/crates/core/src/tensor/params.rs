use std::collections::HashMap;

use rand::Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Param<T> {
    name: String,
    tensor: Tensor<T>,
    requires_grad: bool,
}

/// Named, ordered collection of model parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        self.insert(name.into(), tensor, true)
    }

    pub fn add_frozen(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        self.insert(name.into(), tensor, false)
    }

    fn insert(&mut self, name: String, tensor: Tensor<T>, requires_grad: bool) -> Result<ParamId> {
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter `{name}`"
            )));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            tensor,
            requires_grad,
        });
        Ok(id)
    }

    /// Uniform Glorot initialisation for a weight matrix, zeros for anything of rank 1
    /// or with a single row (biases).
    pub fn add_init<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        rng: &mut R,
    ) -> Result<ParamId> {
        let tensor = if shape.len() == 2 && shape[0] > 1 {
            let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            uniform(shape, limit, rng)
        } else {
            Tensor::zeros(shape)
        };
        self.add(name, tensor)
    }

    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        limit: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        self.add(name, uniform(shape, limit, rng))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn requires_grad(&self, id: ParamId) -> bool {
        self.params[id.0].requires_grad
    }

    pub fn set_requires_grad(&mut self, id: ParamId, on: bool) {
        self.params[id.0].requires_grad = on;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> + '_ {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p.name.as_str(), &p.tensor))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Replaces the value of an existing parameter; the shape must not change.
    pub fn set(&mut self, id: ParamId, tensor: Tensor<T>) -> Result<()> {
        let slot = &mut self.params[id.0].tensor;
        if slot.shape() != tensor.shape() {
            return Err(Error::shape("set", slot.shape(), tensor.shape()));
        }
        *slot = tensor;
        Ok(())
    }

    /// Copies every parameter whose name also exists in `other` (shapes must agree).
    /// Returns the number of parameters copied.
    pub fn copy_shared_from(&mut self, other: &ParamStore<T>) -> Result<usize> {
        let mut copied = 0;
        for (_, name, tensor) in other.iter() {
            if let Some(id) = self.id(name) {
                self.set(id, tensor.clone())?;
                copied += 1;
            }
        }
        Ok(copied)
    }
}

fn uniform<T: Scalar, R: Rng>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.random_range(-limit..=limit)))
        .collect();
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}
