use remic_nn::{Scalar, Tensor};

use crate::error::{input, RemicError, Result};
use crate::params::{ParamId, ParamStore};

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Moments for a list of parameters and the shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: impl IntoIterator<Item = [usize; 4]>) -> Self {
        let m: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros).collect();
        Self { step: 0, v: m.clone(), m }
    }
}

impl Adam {
    /// One bias-corrected update of every parameter. `None` gradients count as zero.
    pub fn step<T: Scalar>(
        &self,
        params: &mut [&mut Tensor<T>],
        grads: &[Option<&Tensor<T>>],
        state: &mut AdamState<T>,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(input("adam: parameter, gradient and moment counts differ"));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
            if p.shape() != m.shape() || g.is_some_and(|g| g.shape() != p.shape()) {
                return Err(input(format!("adam: shape mismatch at {:?}", p.shape())));
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let c = T::from_f64c;
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let bc1 = c(1.0 - self.beta1.powi(t));
        let bc2 = c(1.0 - self.beta2.powi(t));
        let (lr, eps) = (c(self.lr), c(self.eps));
        let one = T::one();
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut state.m[k], &mut state.v[k]);
            let g = grads[k];
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for j in 0..pd.len() {
                let gj = g.map_or(T::zero(), |g| g.data()[j]);
                md[j] = b1 * md[j] + (one - b1) * gj;
                vd[j] = b2 * vd[j] + (one - b2) * gj * gj;
                let mhat = md[j] / bc1;
                let vhat = vd[j] / bc2;
                pd[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Separate Adam state for each parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    pub adam: Adam,
    pub groups: Vec<GroupState<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupState<T> {
    pub name: String,
    pub ids: Vec<ParamId>,
    pub state: AdamState<T>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(adam: Adam, store: &ParamStore<T>) -> Self {
        let groups = store
            .groups()
            .into_iter()
            .map(|name| {
                let ids = store.group_ids(&name);
                let state = AdamState::new(ids.iter().map(|&id| store.get(id).shape()));
                GroupState { name, ids, state }
            })
            .collect();
        Self { adam, groups }
    }

    /// Updates every group that received at least one gradient.
    ///
    /// All gradients are checked first, so a non-finite value leaves every parameter untouched.
    pub fn apply(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<Vec<String>> {
        for (id, g) in grads {
            if !g.is_finite() {
                return Err(RemicError::NonFiniteGradient {
                    group: store.group(*id).to_string(),
                    param: store.name(*id).to_string(),
                });
            }
        }
        let mut touched = Vec::new();
        for group in &mut self.groups {
            let gs: Vec<Option<&Tensor<T>>> = group
                .ids
                .iter()
                .map(|id| grads.iter().find(|(gid, _)| gid == id).map(|(_, g)| g))
                .collect();
            if gs.iter().all(Option::is_none) {
                continue;
            }
            let mut values: Vec<Tensor<T>> = group.ids.iter().map(|&id| std::mem::replace(store.get_mut(id), Tensor::scalar(T::zero()))).collect();
            let mut refs: Vec<&mut Tensor<T>> = values.iter_mut().collect();
            let res = self.adam.step(&mut refs, &gs, &mut group.state);
            for (&id, v) in group.ids.iter().zip(values) {
                *store.get_mut(id) = v;
            }
            res?;
            touched.push(group.name.clone());
        }
        Ok(touched)
    }

    pub fn group(&self, name: &str) -> Option<&GroupState<T>> {
        self.groups.iter().find(|g| g.name == name)
    }
}
