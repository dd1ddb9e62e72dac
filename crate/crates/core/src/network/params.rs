//! Named parameter storage shared by the model, optimizer and checkpoints.

use ndarray::{ArrayView1, ArrayView2};

use crate::error::{parameter, structural, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Weight,
    Bias,
    /// Squared frequencies, projected onto `[0, omega_max]`.
    Omega,
    /// Step sizes, projected onto `[dt_min, 1]`.
    Dt,
    /// Spike thresholds, projected onto `[1e-3, ∞)`.
    Threshold,
    /// Batch-norm scale and shift.
    Norm,
    /// Regression decoder filter taps.
    Kernel,
    /// Running statistics; not trained.
    Buffer,
}

impl Role {
    pub fn trainable(self) -> bool {
        self != Role::Buffer
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
    pub data: Vec<f64>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, role: Role, data: Vec<f64>) -> ParamId {
        let name = name.into();
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}");
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate {name}");
        self.params.push(Param {
            name,
            shape,
            role,
            data,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].data
    }

    pub fn matrix(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let p = &self.params[id.0];
        ArrayView2::from_shape((p.shape[0], p.shape[1]), &p.data).expect("matrix parameter")
    }

    pub fn vector(&self, id: ParamId) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[id.0].data[..])
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.find(name).map(|id| self.param(id))
    }

    /// Overwrites a parameter by name, keeping its shape.
    pub fn set(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| parameter(format!("no parameter named `{name}`")))?;
        let p = &mut self.params[id.0];
        if p.data.len() != values.len() {
            return Err(structural(format!(
                "`{name}` has {} entries, got {}",
                p.data.len(),
                values.len()
            )));
        }
        p.data.copy_from_slice(values);
        Ok(())
    }

    pub fn fill(&mut self, name: &str, value: f64) -> Result<()> {
        let n = self.get(name).map(|p| p.data.len()).unwrap_or(0);
        self.set(name, &vec![value; n])
    }

    /// Number of trainable scalars, counted by walking the store.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.role.trainable())
            .map(Param::numel)
            .sum()
    }
}

/// Gradients aligned index-for-index with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    names: Vec<String>,
    data: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            names: store.iter().map(|p| p.name.clone()).collect(),
            data: store.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn slot(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn slot_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn add_to(&mut self, id: ParamId, values: &[f64]) {
        for (g, v) in self.data[id.0].iter_mut().zip(values) {
            *g += v;
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| &self.data[i][..])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.data.iter().map(Vec::as_slice))
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.data.iter_mut().flatten() {
            *g *= factor;
        }
    }

    /// Name of the first parameter holding a non-finite gradient.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.names
            .iter()
            .zip(&self.data)
            .find(|(_, d)| d.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| n.as_str())
    }
}
