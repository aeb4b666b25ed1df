use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Running statistics and power-iteration vectors; updated during training forwards.
    State,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T: Real> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Named tensors owned by a model. Layers refer to their tensors by [`ParamId`].
#[derive(Clone, Debug)]
pub struct ParamStore<T: Real = f32> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, ParamId>,
    seed: u64,
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl<T: Real> ParamStore<T> {
    /// `seed` drives every initializer; each tensor draws from its own stream
    /// keyed by name, so adding a layer never changes another layer's init.
    pub fn new(seed: u64) -> Self {
        ParamStore { entries: Vec::new(), by_name: HashMap::new(), seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng_for(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name.as_bytes()))
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, kind, value });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
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

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.iter().filter(|(_, e)| e.kind == ParamKind::Trainable).map(|(id, _)| id)
    }

    pub fn num_trainable_values(&self) -> usize {
        self.trainable().map(|id| self.get(id).numel()).sum()
    }

    /// Overwrites the value of `name`; shapes must match.
    pub fn assign(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
        let cur = self.get(id).shape();
        if cur != value.shape() {
            return Err(Error::dim(format!("parameter {name}: stored {cur}, given {}", value.shape())));
        }
        *self.get_mut(id) = value;
        Ok(())
    }

    /// Copies every tensor whose name also exists in `other`. Returns the number copied.
    pub fn copy_matching_from(&mut self, other: &ParamStore<T>) -> Result<usize> {
        let mut copied = 0;
        for (_, e) in other.iter() {
            if self.id(&e.name).is_some() {
                self.assign(&e.name, e.value.clone())?;
                copied += 1;
            }
        }
        Ok(copied)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), kind: e.kind, value: e.value.cast() })
                .collect(),
            by_name: self.by_name.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Forward-pass context: the graph being recorded, the parameter store, and
/// the mode. Parameters are bound to graph leaves on first use.
pub struct Ctx<'a, T: Real = f32> {
    pub graph: &'a mut Graph<T>,
    pub store: &'a mut ParamStore<T>,
    pub mode: Mode,
    /// When false, training-mode forwards leave running statistics and
    /// power-iteration vectors untouched (used by gradient checks).
    pub update_state: bool,
    bound: HashMap<ParamId, Var>,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn new(graph: &'a mut Graph<T>, store: &'a mut ParamStore<T>, mode: Mode) -> Self {
        Ctx { graph, store, mode, update_state: mode == Mode::Train, bound: HashMap::new() }
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    /// Graph node for a parameter. Trainable tensors become gradient leaves.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let e = self.store.entry(id);
        let value = e.value.clone();
        let v = match e.kind {
            ParamKind::Trainable => self.graph.leaf(value),
            ParamKind::State => self.graph.constant(value),
        };
        self.bound.insert(id, v);
        v
    }

    /// Uses an existing graph node in place of the stored parameter value.
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.bound.insert(id, v);
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.graph.constant(t)
    }

    /// Gradients of every bound trainable parameter after `graph.backward`.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<(ParamId, Tensor<T>)> = self
            .bound
            .iter()
            .filter(|(id, _)| self.store.entry(**id).kind == ParamKind::Trainable)
            .map(|(&id, &v)| (id, self.graph.grad_or_zeros(v)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
