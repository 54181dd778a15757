//! Named parameter storage and its binding into a [`Graph`].

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of trainable tensors, addressed by name or id.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::Contract(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(|t| t.cast()).collect(), index: self.index.clone() }
    }

    /// Copies values from `other` for every name both stores share; returns
    /// the names of this store's parameters that `other` lacks.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<Vec<String>> {
        let mut missing = Vec::new();
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            match other.id(name) {
                Some(id) => {
                    let src = other.get(id);
                    if src.shape() != t.shape() {
                        return Err(TensorError::dim(
                            "load_from",
                            format!("parameter {name}: stored shape {:?}, model shape {:?}", src.shape(), t.shape()),
                        ));
                    }
                    t.data_mut().copy_from_slice(src.data());
                }
                None => missing.push(name.clone()),
            }
        }
        Ok(missing)
    }
}

/// Uniform fan-in initialization with gain for leaky ReLU of `slope`.
pub fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, slope: f64, rng: &mut R) -> Tensor<T> {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// Tracks which graph leaf each parameter was bound to during one episode.
#[derive(Debug, Clone, Default)]
pub struct Binder {
    vars: HashMap<ParamId, Var>,
}

impl Binder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf for `id`, created on first use.
    pub fn var<T: Scalar>(&mut self, g: &mut Graph<T>, store: &ParamStore<T>, id: ParamId) -> Var {
        *self.vars.entry(id).or_insert_with(|| g.variable(store.get(id).clone()))
    }

    pub fn bound(&self, id: ParamId) -> Option<Var> {
        self.vars.get(&id).copied()
    }

    /// Adds the gradients of every bound leaf into the store.
    pub fn harvest<T: Scalar>(&self, g: &Graph<T>, store: &mut ParamStore<T>) {
        let mut ids: Vec<_> = self.vars.iter().collect();
        ids.sort();
        for (id, var) in ids {
            if let Some(grad) = g.grad(*var) {
                store.get_mut(*id).accumulate_grad(grad);
            }
        }
    }
}
