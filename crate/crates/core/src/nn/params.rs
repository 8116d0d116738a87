//! Named parameter tensors with matching gradient buffers.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)`
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Parameter values, in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    info: Vec<ParamInfo>,
    values: Vec<Vec<T>>,
    by_name: HashMap<String, usize>,
}

/// Gradient accumulators, one per parameter, same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    values: Vec<Vec<T>>,
}

impl<T: Real> Params<T> {
    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.values[id.0]
    }

    pub fn info(&self) -> &[ParamInfo] {
        &self.info
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&[T]> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamInfo, &[T])> {
        self.info.iter().zip(self.values.iter().map(|v| v.as_slice()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&ParamInfo, &mut Vec<T>)> {
        self.info.iter().zip(self.values.iter_mut())
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }
}

impl<T: Real> Grads<T> {
    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.values[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    pub fn zero(&mut self) {
        for v in &mut self.values {
            v.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.values.iter().map(|v| v.as_slice())
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.values {
            v.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().flatten().all(|g| *g == T::zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: Params<T>,
    grads: Grads<T>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Params {
                info: Vec::new(),
                values: Vec::new(),
                by_name: HashMap::new(),
            },
            grads: Grads { values: Vec::new() },
        }
    }

    /// Register a zero-filled tensor; values are assigned by [`initialize`](Self::initialize).
    pub fn register(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Result<ParamId> {
        let name = name.into();
        if self.params.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let numel = shape.iter().product();
        if numel == 0 {
            return Err(Error::Config(format!("parameter {name} has an empty shape {shape:?}")));
        }
        let id = self.params.values.len();
        self.params.by_name.insert(name.clone(), id);
        self.params.info.push(ParamInfo {
            name,
            shape: shape.to_vec(),
            init,
        });
        self.params.values.push(vec![T::zero(); numel]);
        self.grads.values.push(vec![T::zero(); numel]);
        Ok(ParamId(id))
    }

    /// Deterministic initialization: one ChaCha stream over all parameters in
    /// registration order. Samples are drawn in `f64` so `f32` and `f64`
    /// stores built from one seed agree up to rounding.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (info, values) in self.params.info.iter().zip(self.params.values.iter_mut()) {
            match info.init {
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    for v in values.iter_mut() {
                        *v = T::cst(rng.random_range(-bound..bound));
                    }
                }
                Init::Zeros => values.iter_mut().for_each(|v| *v = T::zero()),
                Init::Ones => values.iter_mut().for_each(|v| *v = T::one()),
            }
        }
        self.grads.zero();
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn grads(&self) -> &Grads<T> {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut Grads<T> {
        &mut self.grads
    }

    /// Values and gradient buffers borrowed together.
    pub fn split(&mut self) -> (&Params<T>, &mut Grads<T>) {
        (&self.params, &mut self.grads)
    }

    pub fn zero_grads(&mut self) {
        self.grads.zero();
    }

    /// Fresh zeroed gradient set with this store's shapes.
    pub fn new_grads(&self) -> Grads<T> {
        Grads {
            values: self.params.values.iter().map(|v| vec![T::zero(); v.len()]).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.params.count()
    }

    /// Set every parameter whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (info, v) in self.params.iter_mut() {
            if info.name.starts_with(prefix) {
                v.iter_mut().for_each(|x| *x = T::zero());
            }
        }
    }

    /// Convert to another scalar type, keeping names and shapes.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let values: Vec<Vec<U>> = self
            .params
            .values
            .iter()
            .map(|v| v.iter().map(|x| U::cst(x.as_f64())).collect())
            .collect();
        let grads = values.iter().map(|v| vec![U::zero(); v.len()]).collect();
        ParamStore {
            params: Params {
                info: self.params.info.clone(),
                values,
                by_name: self.params.by_name.clone(),
            },
            grads: Grads { values: grads },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.register("a", &[2], Init::Zeros).unwrap();
        assert!(s.register("a", &[3], Init::Zeros).is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let build = |seed| {
            let mut s = ParamStore::<f32>::new();
            s.register("w", &[4, 3], Init::Uniform { fan_in: 3 }).unwrap();
            s.register("b", &[4], Init::Zeros).unwrap();
            s.register("g", &[4], Init::Ones).unwrap();
            s.initialize(seed);
            s
        };
        let (a, b, c) = (build(42), build(42), build(43));
        assert_eq!(a, b);
        assert_ne!(a, c);
        let w = a.params().by_name("w").unwrap();
        let bound = 1.0 / 3f32.sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
        assert!(a.params().by_name("b").unwrap().iter().all(|&v| v == 0.0));
        assert!(a.params().by_name("g").unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gradient_buffers_match_parameter_shapes() {
        let mut s = ParamStore::<f64>::new();
        let w = s.register("w", &[5, 2, 3], Init::Uniform { fan_in: 6 }).unwrap();
        assert_eq!(s.params().get(w).len(), s.grads().get(w).len());
    }
}
