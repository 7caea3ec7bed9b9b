use std::collections::BTreeMap;

use super::Matrix;
use crate::error::{dim_err, Error, Result};

/// One named array with its gradient slot and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
    pub(crate) m: Matrix,
    pub(crate) v: Matrix,
    pub trainable: bool,
}

impl Param {
    fn new(value: Matrix, trainable: bool) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            trainable,
        }
    }

    pub fn first_moment(&self) -> &Matrix {
        &self.m
    }

    pub fn second_moment(&self) -> &Matrix {
        &self.v
    }
}

/// Flat, name-ordered collection of model arrays.
///
/// Frozen entries (e.g. Fourier projection matrices) live here so a model is
/// fully described by its store, but the optimizer skips them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, Param>,
    pub step_count: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert_param(&mut self, name: &str, value: Matrix, trainable: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Validation(format!("duplicate parameter name `{name}`")));
        }
        if !value.is_finite() {
            return Err(Error::Numeric(format!("parameter `{name}` has non-finite entries")));
        }
        self.entries.insert(name.to_owned(), Param::new(value, trainable));
        Ok(())
    }

    pub fn insert(&mut self, name: &str, value: Matrix) -> Result<()> {
        self.insert_param(name, value, true)
    }

    pub fn insert_frozen(&mut self, name: &str, value: Matrix) -> Result<()> {
        self.insert_param(name, value, false)
    }

    /// Restores a parameter including optimizer moments (used when loading checkpoints).
    pub(crate) fn insert_full(
        &mut self,
        name: &str,
        value: Matrix,
        m: Matrix,
        v: Matrix,
        trainable: bool,
    ) -> Result<()> {
        if m.shape() != value.shape() || v.shape() != value.shape() {
            return Err(dim_err(
                "ParameterStore::insert_full",
                format!("{:?}", value.shape()),
                format!("{:?}/{:?}", m.shape(), v.shape()),
            ));
        }
        self.insert_param(name, value, trainable)?;
        let p = self.entries.get_mut(name).expect("just inserted");
        p.m = m;
        p.v = v;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_owned()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_owned()))
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        self.get(name).map(|p| &p.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Matrix> {
        self.get(name).map(|p| &p.grad)
    }

    pub fn set_value(&mut self, name: &str, value: Matrix) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(dim_err(
                "ParameterStore::set_value",
                format!("{:?}", p.value.shape()),
                format!("{:?}", value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Matrix) -> Result<()> {
        self.get_mut(name)?.grad.add_assign(g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, s: f64) {
        for p in self.entries.values_mut() {
            p.grad.scale(s);
        }
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.rows() * p.value.cols())
            .sum()
    }

    /// Moves every entry of `other` into `self`; names must not collide.
    pub fn merge(&mut self, other: ParameterStore) -> Result<()> {
        for (name, p) in other.entries {
            if self.entries.contains_key(&name) {
                return Err(Error::Validation(format!("duplicate parameter name `{name}`")));
            }
            self.entries.insert(name, p);
        }
        Ok(())
    }

    /// Clears Adam moments, gradients and the step counter; values are kept.
    pub fn reset_optimizer(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
            p.m.fill(0.0);
            p.v.fill(0.0);
        }
        self.step_count = 0;
    }

    /// Marks an entry as frozen or trainable.
    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.get_mut(name)?.trainable = trainable;
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.entries.remove(name)
    }
}
