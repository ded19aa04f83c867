//! Named parameter collections partitioned into backbone, classifier and FMCE-Net.

use std::fmt;
use std::str::FromStr;

use fmce_autograd::{Scalar, Tape, Tensor, Var};
use indexmap::IndexMap;

use crate::error::{FmceError, Result};

/// Which sub-network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    /// Feature extractor φ.
    Backbone,
    /// Global-pool + linear classification head.
    Classifier,
    /// Convergence scorer θ.
    Fmce,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Backbone, Partition::Classifier, Partition::Fmce];

    pub fn tag(self) -> u8 {
        match self {
            Partition::Backbone => 0,
            Partition::Classifier => 1,
            Partition::Fmce => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Partition::ALL.into_iter().find(|p| p.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Partition::Backbone => "backbone",
            Partition::Classifier => "classifier",
            Partition::Fmce => "fmce",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Partition {
    type Err = FmceError;

    fn from_str(s: &str) -> Result<Self> {
        Partition::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| FmceError::UnknownPartition(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Scalar = f32> {
    pub tensor: Tensor<T>,
    pub partition: Partition,
}

/// Tape handles for every parameter of a [`ParamSet`], by name.
#[derive(Clone, Debug, Default)]
pub struct Bindings(IndexMap<String, Var>);

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| FmceError::Spec(format!("parameter `{name}` is not bound")))
    }
}

/// Ordered map of named parameters.
///
/// A parameter is trainable iff its tensor has `requires_grad`; freezing a
/// partition clears the flag for every tensor in it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Scalar = f32> {
    params: IndexMap<String, Param<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            params: IndexMap::new(),
        }
    }

    /// Registers a trainable parameter.
    pub fn insert(&mut self, name: impl Into<String>, partition: Partition, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(FmceError::Spec(format!("duplicate parameter `{name}`")));
        }
        let tensor = tensor.with_grad();
        self.params.insert(name, Param { tensor, partition });
        Ok(())
    }

    pub(crate) fn insert_param(&mut self, name: String, param: Param<T>) -> Result<()> {
        if self.params.contains_key(&name) {
            return Err(FmceError::Spec(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, param);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn has_partition(&self, partition: Partition) -> bool {
        self.params.values().any(|p| p.partition == partition)
    }

    /// Number of scalar values in a partition.
    pub fn numel(&self, partition: Partition) -> usize {
        self.params
            .values()
            .filter(|p| p.partition == partition)
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// Makes every tensor of `partition` non-trainable. Idempotent.
    pub fn freeze(&mut self, partition: Partition) -> Result<()> {
        if !self.has_partition(partition) {
            return Err(FmceError::UnknownPartition(partition.name().to_string()));
        }
        for p in self.params.values_mut().filter(|p| p.partition == partition) {
            p.tensor.set_requires_grad(false);
        }
        Ok(())
    }

    pub fn is_frozen(&self, partition: Partition) -> bool {
        self.has_partition(partition)
            && self
                .params
                .values()
                .filter(|p| p.partition == partition)
                .all(|p| !p.tensor.requires_grad())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.tensor.zero_grad();
        }
    }

    /// Records every parameter as a tape leaf; frozen ones become constants.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bindings {
        Bindings(
            self.params
                .iter()
                .map(|(k, p)| (k.clone(), tape.leaf(p.tensor.clone())))
                .collect(),
        )
    }

    /// Records every parameter as a constant, for inference.
    pub fn bind_constants(&self, tape: &mut Tape<T>) -> Bindings {
        Bindings(
            self.params
                .iter()
                .map(|(k, p)| (k.clone(), tape.constant(p.tensor.clone())))
                .collect(),
        )
    }

    /// Adds the tape gradients into every trainable parameter.
    ///
    /// A trainable parameter the backward pass never reached receives an
    /// explicit zero gradient: it was not on the path to the loss.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bindings: &Bindings) -> Result<()> {
        for (name, p) in self.params.iter_mut() {
            if !p.tensor.requires_grad() {
                continue;
            }
            let var = bindings.get(name)?;
            match tape.grad(var) {
                Some(g) => p.tensor.accumulate_grad(g)?,
                None => {
                    let zeros = vec![T::zero(); p.tensor.numel()];
                    p.tensor.accumulate_grad(&zeros)?
                }
            }
        }
        Ok(())
    }

    /// Union of two disjoint sets; entries keep their trainable/frozen state.
    pub fn merge(mut self, other: ParamSet<T>) -> Result<Self> {
        for (name, p) in other.params {
            self.insert_param(name, p)?;
        }
        Ok(self)
    }

    /// The parameters of one partition.
    pub fn select(&self, partition: Partition) -> ParamSet<T> {
        ParamSet {
            params: self
                .params
                .iter()
                .filter(|(_, p)| p.partition == partition)
                .map(|(k, p)| (k.clone(), p.clone()))
                .collect(),
        }
    }

    /// FNV-1a over names, partition tags, shapes and value bytes of the
    /// selected partition (or all parameters).
    pub fn checksum(&self, partition: Option<Partition>) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, p) in &self.params {
            if partition.is_some_and(|q| q != p.partition) {
                continue;
            }
            eat(name.as_bytes());
            eat(&[p.partition.tag()]);
            for d in p.tensor.dims() {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                eat(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    let mut tensor = p.tensor.cast::<U>();
                    tensor.set_requires_grad(p.tensor.requires_grad());
                    (
                        k.clone(),
                        Param {
                            tensor,
                            partition: p.partition,
                        },
                    )
                })
                .collect(),
        }
    }
}
