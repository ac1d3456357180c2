use std::collections::HashMap;

use rand::Rng;

use crate::array::Array;
use crate::error::{NnError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter arrays in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Array<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NnError::InvalidArgument {
                op: "param",
                message: format!("duplicate parameter `{name}`"),
            });
        }
        let id = ParamId(self.values.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    /// Uniform(-scale, scale) initialisation.
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::cast(rng.gen_range(-scale..scale)))
            .collect();
        self.insert(name, Array::new(shape, data)?)
    }

    /// Normal(0, std) initialisation (Box-Muller, so only `rand` core is needed).
    pub fn insert_normal(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen::<f64>();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                T::cast(z * std)
            })
            .collect();
        self.insert(name, Array::new(shape, data)?)
    }

    pub fn insert_filled(&mut self, name: impl Into<String>, shape: Vec<usize>, v: f64) -> Result<ParamId> {
        self.insert(name, Array::filled(shape, T::cast(v)))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.cast()).collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`]; `None` for parameters that
/// did not take part in the recorded computation.
#[derive(Debug, Clone)]
pub struct Grads<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn new(n_params: usize) -> Self {
        Self {
            slots: vec![None; n_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    pub fn set(&mut self, id: ParamId, grad: Vec<T>) {
        self.slots[id.0] = Some(grad);
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &[T]) {
        match &mut self.slots[id.0] {
            Some(slot) => slot.iter_mut().zip(grad).for_each(|(s, &g)| *s += g),
            slot @ None => *slot = Some(grad.to_vec()),
        }
    }

    /// Adds `other` into `self`, in parameter order.
    pub fn merge(&mut self, other: &Grads<T>) {
        for (i, slot) in other.slots.iter().enumerate() {
            if let Some(g) = slot {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}
