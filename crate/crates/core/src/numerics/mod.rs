//! Dense and strided 1-D convolution kernels with analytic gradients, the
//! mean-squared-error loss, Adam, and a central finite-difference gradient
//! checker. Everything is `f64` and summed in a fixed order so that runs are
//! bit-reproducible.

mod adam;
mod conv;
mod dense;
mod gradcheck;
mod loss;
mod matrix;

pub use adam::{AdamConfig, AdamState};
pub use conv::{Conv1DLayer, ConvGrads};
pub use dense::{Activation, DenseGrads, DenseLayer};
pub use gradcheck::{finite_difference_check, GradCheckConfig, GradCheckReport};
pub use loss::mse_loss;
pub use matrix::Matrix;

use std::collections::BTreeMap;

/// Mutable access to named parameter tensors, flattened row-major.
pub trait ParameterStore<K> {
    fn param(&self, id: &K) -> Option<&[f64]>;
    fn param_mut(&mut self, id: &K) -> Option<&mut [f64]>;
}

impl<K: Ord> ParameterStore<K> for BTreeMap<K, Vec<f64>> {
    fn param(&self, id: &K) -> Option<&[f64]> {
        self.get(id).map(Vec::as_slice)
    }

    fn param_mut(&mut self, id: &K) -> Option<&mut [f64]> {
        self.get_mut(id).map(Vec::as_mut_slice)
    }
}

/// Gradients keyed by parameter identifier. Iteration order is the key order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<K: Ord> {
    grads: BTreeMap<K, Vec<f64>>,
}

impl<K: Ord> Default for GradientSet<K> {
    fn default() -> Self {
        Self {
            grads: BTreeMap::new(),
        }
    }
}

impl<K: Ord + Clone> GradientSet<K> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `grad` into the entry for `id`, creating it if absent.
    pub fn accumulate(&mut self, id: K, grad: &[f64]) {
        match self.grads.get_mut(&id) {
            Some(existing) => {
                debug_assert_eq!(existing.len(), grad.len());
                for (e, g) in existing.iter_mut().zip(grad) {
                    *e += g;
                }
            }
            None => {
                self.grads.insert(id, grad.to_vec());
            }
        }
    }

    /// Merges every entry of `other` into `self`.
    pub fn merge(&mut self, other: GradientSet<K>) {
        for (id, grad) in other.grads {
            match self.grads.get_mut(&id) {
                Some(existing) => {
                    for (e, g) in existing.iter_mut().zip(&grad) {
                        *e += g;
                    }
                }
                None => {
                    self.grads.insert(id, grad);
                }
            }
        }
    }

    pub fn insert(&mut self, id: K, grad: Vec<f64>) {
        self.grads.insert(id, grad);
    }

    pub fn get(&self, id: &K) -> Option<&[f64]> {
        self.grads.get(id).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = &K> {
        self.grads.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &[f64])> {
        self.grads.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
