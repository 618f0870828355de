use std::collections::BTreeMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::numerics::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Parameters whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }

    /// SHA-256 over names and tensor bytes, hex encoded.
    pub fn checksum(&self) -> String {
        self.checksum_prefix("")
    }

    pub fn checksum_prefix(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.tensors.iter().filter(|(k, _)| k.starts_with(prefix)) {
            h.update(k.as_bytes());
            h.update(v.to_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Places every tensor on `tape` as a leaf; `trainable` decides which
    /// leaves receive gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Binding {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable(k))))
            .collect();
        Binding { vars }
    }

    /// Fails on the first tensor (in name order) whose shape disagrees with
    /// `expected`, or on missing and unexpected names.
    pub fn validate_shapes(&self, expected: &BTreeMap<String, Vec<usize>>) -> Result<()> {
        for (name, shape) in expected {
            match self.tensors.get(name) {
                None => return Err(Error::Format(format!("missing tensor `{name}`"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::ShapeMismatch {
                        name: name.clone(),
                        expected: shape.clone(),
                        found: t.shape().to_vec(),
                    })
                }
                _ => {}
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::Format(format!("unexpected tensor `{extra}`")));
        }
        Ok(())
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    /// Binding over leaves created elsewhere (gradient checks).
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Binding {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradients of every trainable parameter that backward reached; the rest
    /// get zeros.
    pub fn grads(&self, tape: &Tape) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter(|(_, &v)| tape.requires_grad(v))
            .map(|(k, &v)| {
                let g = tape
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()));
                (k.clone(), g)
            })
            .collect()
    }
}

/// Uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`; `fan_in` is the row count.
pub(crate) fn uniform_weight<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| rng.random_range(-bound..bound))
}
