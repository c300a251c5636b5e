use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry<F> {
    name: String,
    value: Tensor<F>,
    grad: Vec<F>,
}

/// Named parameter tensors with one gradient slot each, kept in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    entries: Vec<Entry<F>>,
    index: HashMap<String, ParamId>,
    seed: u64,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new(seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: &str, value: Tensor<F>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::contract(format!("duplicate parameter name `{name}`")));
        }
        if value.shape().len() > 3 {
            return Err(Error::shape("insert", format!("`{name}` has rank {}, at most 3 is supported", value.shape().len())));
        }
        let id = ParamId(self.entries.len());
        let grad = vec![F::zero(); value.len()];
        self.entries.push(Entry {
            name: name.to_owned(),
            value,
            grad,
        });
        self.index.insert(name.to_owned(), id);
        Ok(id)
    }

    /// Matrix drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let data = (0..rows * cols).map(|_| F::lit(dist.sample(rng))).collect();
        self.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn insert_normal<R: Rng>(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| F::lit(dist.sample(rng))).collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(shape))
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

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("no parameter named `{name}`")))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[F] {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.entries[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    /// Adds `other`'s gradients into this store's gradient slots.
    pub fn accumulate_grads(&mut self, other: &ParamStore<F>) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(Error::contract("gradient accumulation across different stores"));
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            if mine.grad.len() != theirs.grad.len() {
                return Err(Error::shape("accumulate_grads", mine.name.clone()));
            }
            for (g, h) in mine.grad.iter_mut().zip(&theirs.grad) {
                *g = *g + *h;
            }
        }
        Ok(())
    }

    pub fn check_grads_finite(&self) -> Result<()> {
        for e in &self.entries {
            if e.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("gradient of `{}`", e.name)));
            }
        }
        Ok(())
    }

    /// `param <- param - lr * grad`, then zero the gradients.
    ///
    /// Nothing is modified when any gradient is non-finite.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::contract(format!("learning rate must be positive, got {lr}")));
        }
        self.check_grads_finite()?;
        let lr = F::lit(lr);
        for e in &mut self.entries {
            for (p, g) in e.value.data_mut().iter_mut().zip(&e.grad) {
                *p = *p - lr * *g;
            }
        }
        self.zero_grad();
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: e.grad.iter().map(|g| G::lit(g.as_f64())).collect(),
                })
                .collect(),
            index: self.index.clone(),
            seed: self.seed,
        }
    }

    /// True when names, shapes and values are bitwise identical.
    pub fn bitwise_eq(&self, other: &ParamStore<F>) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits_u64() == y.to_bits_u64())
            })
    }
}

trait Bits {
    fn to_bits_u64(self) -> u64;
}

impl<F: Scalar> Bits for F {
    fn to_bits_u64(self) -> u64 {
        // f32 -> f64 is exact, so bit equality is preserved
        self.as_f64().to_bits()
    }
}
