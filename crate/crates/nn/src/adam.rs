//! Named parameter store and the Adam optimizer.

use crate::scalar::Scalar;
use crate::tape::{NnError, Tape, TensorId};
use crate::tensor::TensorData;
use std::collections::HashMap;

/// Named, ordered collection of trainable tensors. Parameters live outside
/// any tape; a fresh tape borrows them as leaves each step.
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<TensorData<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: TensorData<S>) -> usize {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.index.insert(name.to_string(), self.tensors.len() - 1);
        self.tensors.len() - 1
    }

    pub fn slot(&self, name: &str) -> Result<usize, NnError> {
        self.index.get(name).copied().ok_or_else(|| NnError::UnknownParam(name.into()))
    }

    pub fn get(&self, name: &str) -> Result<&TensorData<S>, NnError> {
        Ok(&self.tensors[self.slot(name)?])
    }

    pub fn set(&mut self, name: &str, tensor: TensorData<S>) -> Result<(), NnError> {
        let slot = self.slot(name)?;
        self.tensors[slot] = tensor;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, slot: usize) -> &TensorData<S> {
        &self.tensors[slot]
    }

    pub fn tensor_mut(&mut self, slot: usize) -> &mut TensorData<S> {
        &mut self.tensors[slot]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TensorData<S>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }
}

/// Binds store parameters to tape leaves for one forward/backward pass and
/// collects their gradients afterwards (summed in slot order, deterministic).
pub struct ParamBinding {
    pairs: Vec<(usize, TensorId)>,
}

impl ParamBinding {
    pub fn new() -> Self {
        Self { pairs: Vec::new() }
    }

    pub fn bind<S: Scalar>(
        &mut self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        name: &str,
    ) -> Result<TensorId, NnError> {
        let slot = store.slot(name)?;
        let id = tape.leaf(store.tensor(slot).clone(), true);
        self.pairs.push((slot, id));
        Ok(id)
    }

    /// Per-slot gradient buffers (zeros where no gradient flowed).
    pub fn collect<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        grads: &crate::tape::Gradients<S>,
    ) -> Vec<Option<Vec<S>>> {
        let mut out: Vec<Option<Vec<S>>> = vec![None; store.len()];
        for &(slot, id) in &self.pairs {
            let len = store.tensor(slot).len();
            let g = grads.get_or_zeros(id, len);
            match &mut out[slot] {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a = *a + *b;
                    }
                }
                slot_ref => *slot_ref = Some(g),
            }
        }
        out
    }
}

impl Default for ParamBinding {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers plus the shared step count.
pub struct AdamState<S> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        let m = (0..store.len()).map(|i| vec![S::zero(); store.tensor(i).len()]).collect();
        let v = (0..store.len()).map(|i| vec![S::zero(); store.tensor(i).len()]).collect();
        Self { m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over every slot with a gradient present.
pub fn adam_step<S: Scalar>(
    store: &mut ParamStore<S>,
    grads: &[Option<Vec<S>>],
    state: &mut AdamState<S>,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    if cfg.lr <= 0.0 {
        return Err(NnError::BadLearningRate(cfg.lr));
    }
    state.step += 1;
    let t = state.step as f64;
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let one = S::one();
    let bias1 = S::from_f64(1.0 - cfg.beta1.powf(t));
    let bias2 = S::from_f64(1.0 - cfg.beta2.powf(t));
    let lr = S::from_f64(cfg.lr);
    let eps = S::from_f64(cfg.eps);
    for (slot, grad) in grads.iter().enumerate() {
        let Some(g) = grad else { continue };
        let m = &mut state.m[slot];
        let v = &mut state.v[slot];
        let p = &mut store.tensor_mut(slot).values;
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let mhat = m[i] / bias1;
            let vhat = v[i] / bias2;
            p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
