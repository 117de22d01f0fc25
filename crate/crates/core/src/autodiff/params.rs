use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::tape::{Tape, Var};

/// Glorot/Xavier uniform bound `√(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Ordered, named parameter tensors of one network.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Params<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    /// Xavier-uniform weight of `shape` with the given fans.
    pub fn push_xavier<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) {
        self.push(name, Tensor::uniform(shape, xavier_bound(fan_in, fan_out), rng));
    }

    pub fn push_zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.push(name, Tensor::zeros(shape));
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor on `tape` as a trainable leaf, in order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Registers every tensor as a constant (no gradients).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Replaces the tensor values, keeping names; shapes must match.
    pub fn assign(&mut self, tensors: Vec<Tensor<T>>) -> Result<()> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::shape("parameter count mismatch"));
        }
        for ((name, old), new) in self.names.iter().zip(&self.tensors).zip(&tensors) {
            if old.shape() != new.shape() {
                return Err(Error::shape(format!(
                    "parameter {name}: shape {:?} does not match {:?}",
                    new.shape(),
                    old.shape()
                )));
            }
        }
        self.tensors = tensors;
        Ok(())
    }

    /// FNV-1a over names and raw value bits; equal digests mean byte-equal parameters.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, t) in self.iter() {
            feed(name.as_bytes());
            for v in t.data() {
                feed(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h
    }
}
