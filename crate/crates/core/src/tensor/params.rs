use std::collections::HashMap;

use thiserror::Error;

use super::array::Tensor;
use super::element::Element;
use super::norm::RunningStats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("duplicate name '{0}' in parameter registry")]
    Duplicate(String),
    #[error("no entry named '{0}' in parameter registry")]
    Missing(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StatsId(pub(crate) usize);

/// Named parameters plus BN running statistics of one network, in
/// registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    stats: Vec<(String, RunningStats<T>)>,
    index: HashMap<String, usize>,
    stats_index: HashMap<String, usize>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            stats: Vec::new(),
            index: HashMap::new(),
            stats_index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId, RegistryError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(RegistryError::Duplicate(name));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            tensor,
            trainable: true,
        });
        Ok(ParamId(id))
    }

    pub fn add_stats(
        &mut self,
        name: impl Into<String>,
        stats: RunningStats<T>,
    ) -> Result<StatsId, RegistryError> {
        let name = name.into();
        if self.stats_index.contains_key(&name) {
            return Err(RegistryError::Duplicate(name));
        }
        let id = self.stats.len();
        self.stats_index.insert(name.clone(), id);
        self.stats.push((name, stats));
        Ok(StatsId(id))
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id_of(name).map(|id| self.param(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.id_of(name).map(|id| &mut self.params[id.0])
    }

    pub fn stats(&self, id: StatsId) -> &RunningStats<T> {
        &self.stats[id.0].1
    }

    pub fn stats_mut(&mut self, id: StatsId) -> &mut RunningStats<T> {
        &mut self.stats[id.0].1
    }

    pub fn stats_by_name(&self, name: &str) -> Option<&RunningStats<T>> {
        self.stats_index.get(name).map(|&i| &self.stats[i].1)
    }

    pub fn stats_by_name_mut(&mut self, name: &str) -> Option<&mut RunningStats<T>> {
        self.stats_index.get(name).map(|&i| &mut self.stats[i].1)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn all_stats(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.stats.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn freeze(&mut self) {
        for p in &mut self.params {
            p.trainable = false;
        }
    }

    /// Number of trainable scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.len())
            .sum()
    }
}
