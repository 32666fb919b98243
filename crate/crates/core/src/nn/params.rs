use sha2::{Digest, Sha256};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub type Fingerprint = [u8; 32];

/// Ordered, named parameter tensors; the unit that is federated, aggregated
/// and checkpointed.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T = f32> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate parameter name {name}"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn into_entries(self) -> Vec<(String, Tensor<T>)> {
        self.entries
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// SHA-256 over every name and shape, in declaration order.
    pub fn fingerprint(&self) -> Fingerprint {
        fingerprint_of(self.entries.iter().map(|(n, t)| (n.as_str(), t.shape())))
    }

    pub fn compatible_with(&self, other: &Self) -> bool {
        self.fingerprint() == other.fingerprint()
    }

    /// Hash of names, shapes and raw values; used to prove a set untouched.
    pub fn checksum(&self) -> Fingerprint {
        let mut h = Sha256::new();
        h.update(self.fingerprint());
        for (_, t) in &self.entries {
            for v in t.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Flattened copy of every value, in declaration order.
    pub fn flatten(&self) -> Vec<T> {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }
}

pub fn fingerprint_of<'a>(items: impl Iterator<Item = (&'a str, &'a [usize])>) -> Fingerprint {
    let mut h = Sha256::new();
    for (name, shape) in items {
        h.update((name.len() as u32).to_le_bytes());
        h.update(name.as_bytes());
        h.update((shape.len() as u32).to_le_bytes());
        for &d in shape {
            h.update((d as u64).to_le_bytes());
        }
    }
    h.finalize().into()
}

/// Anything that owns trainable tensors in a fixed order.
pub trait Module<T: Scalar> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn param_set(&self) -> ParamSet<T> {
        ParamSet {
            entries: self
                .named_params()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    fn fingerprint(&self) -> Fingerprint {
        fingerprint_of(
            self.named_params()
                .iter()
                .map(|(n, t)| (n.as_str(), t.shape())),
        )
    }

    fn load_param_set(&mut self, ps: &ParamSet<T>) -> Result<()> {
        if Module::fingerprint(self) != ps.fingerprint() {
            return Err(Error::Incompatible(
                "parameter set fingerprint differs from the model architecture".into(),
            ));
        }
        for (dst, src) in self.params_mut().into_iter().zip(ps.tensors()) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}
