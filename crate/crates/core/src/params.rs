//! Named parameter registry and per-pass graph binding.
//!
//! Model parameters live outside any gradient graph as plain buffers; each
//! forward pass binds them into a fresh [`Graph`] as
//! `requires_grad` leaves. A [`Binding`] memoizes the leaf per parameter so
//! a parameter used twice in one pass still accumulates a single gradient.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Graph, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Registry of every learnable tensor in a model. Each parameter is
/// registered exactly once under a unique name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Contract(alloc::format!(
                "parameter {name:?} registered twice"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Contract(alloc::format!(
                "parameter {name:?}: shape {shape:?} vs {} values",
                data.len()
            )));
        }
        let id = ParamId(self.params.len());
        self.params.push(Param { name, shape, data });
        Ok(id)
    }

    /// Register with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init.
    pub fn register_uniform(
        &mut self,
        name: String,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut Rng,
    ) -> Result<ParamId> {
        let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.uniform(-bound, bound)).collect();
        self.register(name, shape, data)
    }

    pub fn register_zeros(&mut self, name: String, shape: Vec<usize>) -> Result<ParamId> {
        let numel: usize = shape.iter().product();
        self.register(name, shape, alloc::vec![0.0; numel])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<(ParamId, &Param)> {
        self.params
            .iter()
            .enumerate()
            .find(|(_, p)| p.name == name)
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters in the registry.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Snapshot all values (for best-epoch checkpoints in training loops).
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.data.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        debug_assert_eq!(snapshot.len(), self.params.len());
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            p.data.copy_from_slice(s);
        }
    }
}

/// Memoized map from parameters to graph leaves for one forward pass.
#[derive(Debug)]
pub struct Binding {
    ids: Vec<Option<TensorId>>,
}

impl Binding {
    pub fn for_store(store: &ParamStore) -> Self {
        Binding { ids: alloc::vec![None; store.len()] }
    }

    /// Fetch the leaf for `p`, inserting it into `g` on first use.
    pub fn leaf(&mut self, g: &mut Graph, store: &ParamStore, p: ParamId) -> Result<TensorId> {
        if let Some(id) = self.ids[p.0] {
            return Ok(id);
        }
        let param = store.get(p);
        let id = g.leaf(param.data.clone(), param.shape.clone(), true)?;
        self.ids[p.0] = Some(id);
        Ok(id)
    }

    /// The leaf bound for `p` in this pass, if any.
    pub fn bound(&self, p: ParamId) -> Option<TensorId> {
        self.ids[p.0]
    }
}
