use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to one storage slot in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter arrays with explicit aliasing.
///
/// Every slot has one canonical name. Additional names may be registered as
/// aliases of an existing slot; they resolve to the same [`ParamId`] and
/// therefore the same storage.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    values: Vec<Tensor<T>>,
    names: Vec<String>,
    lookup: BTreeMap<String, ParamId>,
    aliases: Vec<(String, String)>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            names: Vec::new(),
            lookup: BTreeMap::new(),
            aliases: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.lookup.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let id = ParamId(self.values.len());
        self.values.push(value);
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        id
    }

    /// Registers `alias` as another name for the slot `target`.
    pub fn alias(&mut self, alias: impl Into<String>, target: ParamId) {
        let alias = alias.into();
        assert!(
            !self.lookup.contains_key(&alias),
            "duplicate parameter name `{alias}`"
        );
        self.aliases.push((alias.clone(), self.names[target.0].clone()));
        self.lookup.insert(alias, target);
    }

    pub fn resolve(&self, name: &str) -> Result<ParamId> {
        self.lookup
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// `(alias, canonical)` pairs in registration order.
    pub fn aliases(&self) -> &[(String, String)] {
        &self.aliases
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

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.values
            .iter()
            .zip(&self.names)
            .enumerate()
            .map(|(i, (v, n))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar parameters (aliased slots counted once).
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn count_scalars(&self, ids: &[ParamId]) -> usize {
        let mut seen: Vec<ParamId> = ids.to_vec();
        seen.sort();
        seen.dedup();
        seen.iter().map(|id| self.values[id.0].numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            values: self.values.iter().map(Tensor::cast).collect(),
            names: self.names.clone(),
            lookup: self.lookup.clone(),
            aliases: self.aliases.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::all_finite)
    }
}
