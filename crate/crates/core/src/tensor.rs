//! Minimal dense tensor and the named parameter store.
//!
//! Tensors are row-major f64 buffers with an explicit shape. Sequence layers
//! treat 2-D tensors as (channels, time). Parameters live in a [`ParamStore`]
//! that pairs every value tensor with a same-shape gradient accumulator and
//! the optimizer moment buffers; iteration order is by name so that updates
//! and serialization are deterministic.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} scalars, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform init in [-scale, scale].
    pub fn uniform(shape: &[usize], scale: f64, rng: &mut Rng) -> Tensor {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.range(-scale, scale)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| std * rng.normal()).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let w = self.shape[1];
        &self.data[r * w..(r + 1) * w]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let w = self.shape[1];
        &mut self.data[r * w..(r + 1) * w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

/// Named parameter tensors with gradient and Adam moment slots.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
    /// Indices sorted by name, rebuilt on insertion.
    name_order: Vec<usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let shape = value.shape().to_vec();
        let idx = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
        });
        self.by_name.insert(name.to_string(), idx);
        self.name_order.push(idx);
        self.name_order
            .sort_by(|&a, &b| self.params[a].name.cmp(&self.params[b].name));
        ParamId(idx)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn advance_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Parameters in name order.
    pub fn iter_named(&self) -> impl Iterator<Item = &Param> {
        self.name_order.iter().map(|&i| &self.params[i])
    }

    pub(crate) fn iter_named_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        // Indices in name_order are unique, so the unsafe-free route is to
        // sort a temporary view; simplest is index-based iteration.
        let order = self.name_order.clone();
        ParamIterMut {
            store: self,
            order,
            pos: 0,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }
}

struct ParamIterMut<'a> {
    store: &'a mut ParamStore,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> Iterator for ParamIterMut<'a> {
    type Item = &'a mut Param;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let idx = self.order[self.pos];
        self.pos += 1;
        // Each index is visited once, so handing out disjoint &mut is sound.
        unsafe {
            let p = &mut self.store.params[idx] as *mut Param;
            Some(&mut *p)
        }
    }
}
