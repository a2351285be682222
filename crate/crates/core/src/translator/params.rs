//! Named parameter tensors and their per-step binding to a tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered `(name, tensor)` table for one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
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

    /// Uniform `±sqrt(1 / fan_in)` weight.
    /// Uniform in `±sqrt(gain / fan_in)`.
    pub(crate) fn push_weight(&mut self, name: String, shape: &[usize], fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) {
        let bound = (gain / fan_in.max(1) as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)));
        self.push(name, t);
    }

    pub(crate) fn push_bias(&mut self, name: String, n: usize) {
        self.push(name, Tensor::zeros(&[n]));
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
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

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every tensor as a tape leaf, trainable or not.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        Bound {
            names: self.names.clone(),
            vars: self
                .tensors
                .iter()
                .map(|t| tape.leaf(t.clone(), trainable))
                .collect(),
        }
    }

    /// Gradients of a bound set, zeros where no gradient arrived.
    pub fn grads(&self, tape: &Tape<T>, bound: &Bound) -> Vec<Tensor<T>> {
        bound
            .vars
            .iter()
            .zip(&self.tensors)
            .map(|(&v, t)| {
                tape.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect()
    }

    /// Replaces tensors by name; every name must exist with the same shape.
    pub fn load(&mut self, entries: &[(String, Tensor<T>)]) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::format(
                "checkpoint",
                format!("expected {} tensors, found {}", self.len(), entries.len()),
            ));
        }
        for (name, t) in entries {
            let i = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::format("checkpoint", format!("unknown tensor {name}")))?;
            if self.tensors[i].shape() != t.shape() {
                return Err(Error::shape("checkpoint load", self.tensors[i].shape(), t.shape()));
            }
            self.tensors[i] = t.clone();
        }
        Ok(())
    }
}

/// Tape handles of one [`ParamSet`], valid for a single tape.
#[derive(Clone, Debug)]
pub struct Bound {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn single_conv_count() {
        let mut p = ParamSet::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        p.push_weight("c.weight".into(), &[4, 1, 3, 3], 9, 1.0, &mut rng);
        p.push_bias("c.bias".into(), 4);
        assert_eq!(p.count(), 40);
        assert!(p.get("c.weight").unwrap().data().iter().all(|v| v.abs() <= 1.0 / 3.0));
        assert_eq!(p.get("c.bias").unwrap().sum(), 0.0);
    }

    #[test]
    fn load_checks_names_and_shapes() {
        let mut p = ParamSet::<f32>::new();
        p.push("w", Tensor::zeros(&[2]));
        assert!(p.load(&[("w".into(), Tensor::full(&[2], 1.0))]).is_ok());
        assert_eq!(p.get("w").unwrap().data(), &[1.0, 1.0]);
        assert!(p.load(&[("v".into(), Tensor::zeros(&[2]))]).is_err());
        assert!(p.load(&[("w".into(), Tensor::zeros(&[3]))]).is_err());
    }
}
