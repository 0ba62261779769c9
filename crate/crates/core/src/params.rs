//! Named parameter buffers shared between the optimizer and forward graphs.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Real> Param<T> {
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Vec<T> {
        Arc::make_mut(&mut self.data)
    }

    pub fn tensor(&self) -> Tensor<T> {
        Tensor::new(&self.shape, self.data.to_vec()).expect("param shape")
    }
}

/// Ordered set of trainable tensors. Order of registration is the serialization order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let shape = t.shape().to_vec();
        self.params.push(Param { name: name.into(), shape, data: Arc::new(t.into_data()) });
        ParamId(self.params.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let dist = Uniform::new_inclusive(-bound, bound);
        let t = Tensor::from_fn(shape, |_| T::of(dist.sample(rng)));
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn set(&mut self, id: ParamId, t: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if t.shape() != p.shape.as_slice() {
            return Err(Error::Shape(format!(
                "parameter {} has shape {:?}, got {:?}",
                p.name,
                p.shape,
                t.shape()
            )));
        }
        p.data = Arc::new(t.into_data());
        Ok(())
    }

    pub fn fill(&mut self, id: ParamId, value: T) {
        let p = &mut self.params[id.0];
        p.data_mut().iter_mut().for_each(|v| *v = value);
    }

    /// Puts every parameter on `graph` as a gradient-tracked leaf.
    pub fn bind<'g>(&self, graph: &'g Graph<T>) -> Bound<'g, T> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| graph.shared_leaf(&p.shape, Arc::clone(&p.data)))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: Arc::new(p.tensor().cast::<U>().into_data()),
                })
                .collect(),
        }
    }
}

/// Parameters as graph variables for one forward pass.
pub struct Bound<'g, T: Real> {
    vars: Vec<Var<'g, T>>,
}

impl<'g, T: Real> Bound<'g, T> {
    pub fn var(&self, id: ParamId) -> Var<'g, T> {
        self.vars[id.0]
    }

    /// One gradient buffer per parameter, zero-filled where the loss did not depend on it.
    pub fn collect_grads(&self, grads: &mut Gradients<T>) -> Vec<Vec<T>> {
        self.vars
            .iter()
            .map(|v| grads.take(v.id).unwrap_or_else(|| vec![T::zero(); v.numel()]))
            .collect()
    }
}
