use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matrix::{Matrix, Scalar};
use crate::error::{Error, Result};

/// Which part of the network a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Inherited from the pretrained text model.
    TextBackbone,
    /// Introduced for the speech modality.
    SpeechNew,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// AdamW moments, present only while a tensor is trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub m: Matrix<F>,
    pub v: Matrix<F>,
    pub step: u64,
}

#[derive(Clone, Debug)]
pub struct ParamTensor<F = f32> {
    name: String,
    group: ParamGroup,
    pub value: Matrix<F>,
    pub grad: Matrix<F>,
    trainable: bool,
    pub(crate) state: Option<AdamState<F>>,
}

impl<F: Scalar> ParamTensor<F> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn group(&self) -> ParamGroup {
        self.group
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn optimizer_state(&self) -> Option<&AdamState<F>> {
        self.state.as_ref()
    }

    /// Freezing drops the optimizer moments; unfreezing starts them fresh.
    pub fn set_trainable(&mut self, trainable: bool) {
        if trainable == self.trainable {
            return;
        }
        self.trainable = trainable;
        self.state = trainable.then(|| AdamState {
            m: Matrix::zeros(self.value.rows(), self.value.cols()),
            v: Matrix::zeros(self.value.rows(), self.value.cols()),
            step: 0,
        });
    }
}

/// Named tensors in insertion order, with a name index.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F = f32> {
    tensors: Vec<ParamTensor<F>>,
    index: BTreeMap<String, ParamId>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// Adds a frozen tensor. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, group: ParamGroup, value: Matrix<F>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate tensor name `{name}`")));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.tensors.push(ParamTensor {
            grad: Matrix::zeros(value.rows(), value.cols()),
            name,
            group,
            value,
            trainable: false,
            state: None,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&ParamTensor<F>> {
        Ok(self.get(self.id(name)?))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut ParamTensor<F>> {
        let id = self.id(name)?;
        Ok(self.get_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor<F>)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<F>> {
        self.tensors.iter_mut()
    }

    /// Names in lexicographic order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        self.tensors.iter_mut().for_each(|t| t.set_trainable(trainable));
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.grad.fill(F::zero()));
    }

    /// Adds `grads` into the stored gradients of trainable tensors only.
    pub fn accumulate(&mut self, grads: &Gradients<F>) -> Result<()> {
        for (id, g) in &grads.by_param {
            let t = &mut self.tensors[id.0];
            if t.trainable {
                t.grad.add_assign(g)?;
            }
        }
        Ok(())
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    /// Same names, shapes and bit patterns.
    pub fn values_bit_eq(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.value.bit_eq(&b.value))
    }
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients<F = f32> {
    pub(crate) by_param: BTreeMap<ParamId, Matrix<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: ParamId) -> Option<&Matrix<F>> {
        self.by_param.get(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.by_param.keys().copied()
    }

    pub(crate) fn add(&mut self, id: ParamId, g: Matrix<F>) -> Result<()> {
        match self.by_param.get_mut(&id) {
            Some(acc) => acc.add_assign(&g),
            None => {
                self.by_param.insert(id, g);
                Ok(())
            }
        }
    }

    /// Merges another pass into this one (sum).
    pub fn merge(&mut self, other: Gradients<F>) -> Result<()> {
        for (id, g) in other.by_param {
            self.add(id, g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimizer_state_follows_trainable_flag() {
        let mut store = ParamStore::<f32>::new();
        let id = store
            .insert("w", ParamGroup::TextBackbone, Matrix::zeros(2, 3))
            .unwrap();
        assert!(store.get(id).optimizer_state().is_none());
        store.get_mut(id).set_trainable(true);
        let st = store.get(id).optimizer_state().unwrap();
        assert_eq!(st.m.shape(), (2, 3));
        store.get_mut(id).set_trainable(false);
        assert!(store.get(id).optimizer_state().is_none());
    }

    #[test]
    fn accumulate_skips_frozen_tensors() {
        let mut store = ParamStore::<f64>::new();
        let a = store
            .insert("a", ParamGroup::TextBackbone, Matrix::zeros(1, 2))
            .unwrap();
        let b = store.insert("b", ParamGroup::SpeechNew, Matrix::zeros(1, 2)).unwrap();
        store.get_mut(b).set_trainable(true);
        let mut g = Gradients::default();
        g.add(a, Matrix::filled(1, 2, 1.0)).unwrap();
        g.add(b, Matrix::filled(1, 2, 1.0)).unwrap();
        store.accumulate(&g).unwrap();
        store.accumulate(&g).unwrap();
        assert_eq!(store.get(a).grad.data(), &[0.0, 0.0]);
        assert_eq!(store.get(b).grad.data(), &[2.0, 2.0]);
    }

    #[test]
    fn duplicate_and_unknown_names_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.insert("x", ParamGroup::SpeechNew, Matrix::zeros(1, 1)).unwrap();
        assert!(store.insert("x", ParamGroup::SpeechNew, Matrix::zeros(1, 1)).is_err());
        assert!(matches!(store.id("y"), Err(Error::UnknownTensor(_))));
    }
}
