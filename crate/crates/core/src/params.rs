//! Named parameter storage and per-step binding onto a tape.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use remic_nn::{Scalar, Tape, Tensor, Var};

use crate::error::{input, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Parameters in registration order. A parameter's group is its name up to the first `/`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn group(&self, id: ParamId) -> &str {
        group_of(&self.params[id.0].name)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    /// Distinct groups in first-registration order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.params {
            let g = group_of(&p.name);
            if !out.iter().any(|o| o == g) {
                out.push(g.to_string());
            }
        }
        out
    }

    pub fn group_ids(&self, group: &str) -> Vec<ParamId> {
        self.ids().filter(|&id| self.group(id) == group).collect()
    }

    /// Total number of scalar parameters, optionally restricted to groups matching `pred`.
    pub fn count_scalars(&self, pred: impl Fn(&str) -> bool) -> usize {
        self.params.iter().filter(|p| pred(group_of(&p.name))).map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast() })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Replaces every value from `other`, which must hold the same names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(input("parameter stores differ in size"));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(input(format!("parameter {} does not match {}", a.name, b.name)));
            }
            a.value = b.value.clone();
        }
        Ok(())
    }
}

pub fn group_of(name: &str) -> &str {
    name.split('/').next().unwrap_or(name)
}

/// Draws a weight tensor from `N(0, gain / fan_in)`.
pub(crate) fn kaiming<T: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: [usize; 4],
    fan_in: usize,
    gain: f64,
) -> Tensor<T> {
    let std = (gain / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64c(normal.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("positive shape")
}

pub(crate) fn standard_normal<T: Scalar>(rng: &mut impl Rng, n: usize) -> Vec<T> {
    (0..n).map(|_| T::from_f64c(rng.sample::<f64, _>(rand_distr::StandardNormal))).collect()
}

/// Binds stored parameters onto one tape, creating each node on first use.
pub struct Binder<'a, T> {
    store: &'a ParamStore<T>,
    trainable: Vec<bool>,
    vars: Vec<Option<Var>>,
}

impl<'a, T: Scalar> Binder<'a, T> {
    pub fn new(store: &'a ParamStore<T>, trainable: impl Fn(&str) -> bool) -> Self {
        let trainable = store.params.iter().map(|p| trainable(group_of(&p.name))).collect();
        Self { store, trainable, vars: vec![None; store.len()] }
    }

    pub fn frozen(store: &'a ParamStore<T>) -> Self {
        Self::new(store, |_| false)
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn bind(&mut self, tape: &mut Tape<T>, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = if self.trainable[id.0] { tape.leaf(value) } else { tape.constant(value) };
        self.vars[id.0] = Some(v);
        v
    }

    /// Trainable parameters that were bound, with their tape variables.
    pub fn bound_trainable(&self) -> Vec<(ParamId, Var)> {
        self.vars
            .iter()
            .enumerate()
            .filter(|(i, _)| self.trainable[*i])
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect()
    }
}

/// A tape together with the parameters bound onto it.
pub struct Graph<'a, T> {
    pub tape: Tape<T>,
    pub binder: Binder<'a, T>,
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new(binder: Binder<'a, T>) -> Self {
        Self { tape: Tape::new(), binder }
    }

    pub fn frozen(store: &'a ParamStore<T>) -> Self {
        Self::new(Binder::frozen(store))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.binder.bind(&mut self.tape, id)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_follow_name_prefixes() {
        let mut s = ParamStore::<f32>::new();
        s.add("content/conv0/w", Tensor::zeros([1, 1, 1, 1]));
        s.add("gen0/up1/w", Tensor::zeros([2, 1, 1, 1]));
        s.add("content/conv0/b", Tensor::zeros([1, 1, 1, 1]));
        assert_eq!(s.groups(), vec!["content", "gen0"]);
        assert_eq!(s.group_ids("content").len(), 2);
        assert_eq!(s.count_scalars(|g| g == "gen0"), 2);
    }

    #[test]
    fn binder_respects_trainable_groups_and_caches() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("disc0/w", Tensor::scalar(1.0));
        let b = s.add("gen0/w", Tensor::scalar(2.0));
        let mut g = Graph::new(Binder::new(&s, |grp| grp.starts_with("gen")));
        let va = g.param(a);
        let vb = g.param(b);
        assert_eq!(g.param(b), vb);
        assert!(!g.tape.requires_grad(va));
        assert!(g.tape.requires_grad(vb));
        assert_eq!(g.binder.bound_trainable(), vec![(b, vb)]);
    }
}
