//! Named trainable tensors with gradient slots and freeze flags.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Position of a parameter inside its store. Stable for the lifetime of the
/// store because parameters are never removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub frozen: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    params: IndexMap<String, Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let grad = Tensor::zeros(value.shape());
        let (idx, _) = self.params.insert_full(
            name,
            Parameter {
                value,
                grad,
                frozen: false,
            },
        );
        Ok(ParamId(idx))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.params
            .get_index_of(name)
            .map(ParamId)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn by_id(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn by_id_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.params.get_index(id.0).map(|(k, _)| k.as_str()).unwrap()
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_value",
                left: p.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Number of scalars across every tensor, frozen or not.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn num_trainable(&self) -> usize {
        self.params
            .values()
            .filter(|p| !p.frozen)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        self.get_mut(name)?.frozen = frozen;
        Ok(())
    }

    /// Freezes every parameter for which `pred(name)` holds and unfreezes the
    /// rest.
    pub fn freeze_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, p) in self.params.iter_mut() {
            p.frozen = pred(name);
        }
    }

    pub fn freeze_all(&mut self) {
        self.freeze_where(|_| true);
    }

    /// Global L2 norm of the gradients of unfrozen parameters.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .filter(|p| !p.frozen)
            .flat_map(|p| p.grad.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// SHA-256 over the little-endian bytes of one tensor.
    pub fn tensor_digest(&self, name: &str) -> Result<String> {
        let p = self.get(name)?;
        Ok(digest_tensor(name, &p.value))
    }

    /// SHA-256 over every tensor (name, shape, values) in store order.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, p) in &self.params {
            feed_tensor(&mut hasher, name, &p.value);
        }
        hex::encode(hasher.finalize())
    }

    /// Digest over the tensors whose names satisfy `pred`.
    pub fn digest_where(&self, pred: impl Fn(&str) -> bool) -> String {
        let mut hasher = Sha256::new();
        for (name, p) in self.params.iter().filter(|(n, _)| pred(n)) {
            feed_tensor(&mut hasher, name, &p.value);
        }
        hex::encode(hasher.finalize())
    }
}

fn feed_tensor(hasher: &mut Sha256, name: &str, value: &Tensor) {
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    for &d in value.shape() {
        hasher.update((d as u64).to_le_bytes());
    }
    for &x in value.data() {
        hasher.update(x.to_le_bytes());
    }
}

fn digest_tensor(name: &str, value: &Tensor) -> String {
    let mut hasher = Sha256::new();
    feed_tensor(&mut hasher, name, value);
    hex::encode(hasher.finalize())
}

/// Seeded parameter initializer.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        Tensor::matrix(fan_in, fan_out, data).expect("fan sizes are positive")
    }

    pub fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(lo..=hi)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape is positive")
    }
}
