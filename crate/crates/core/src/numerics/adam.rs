use std::collections::BTreeMap;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use super::{GradientSet, ParameterStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias-corrected moments. Only parameters present in a step's
/// gradient set are touched; the step counter is shared.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<K: Ord> {
    config: AdamConfig,
    t: u64,
    moments: BTreeMap<K, Moments>,
}

impl<K: Ord + Clone + Debug> AdamState<K> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Every gradient is validated (known id, matching
    /// length, finite) before any parameter is written.
    pub fn step<P: ParameterStore<K>>(&mut self, params: &mut P, grads: &GradientSet<K>) -> Result<()> {
        for (id, g) in grads.iter() {
            let p = params
                .param(id)
                .ok_or_else(|| Error::Config(format!("gradient for unknown parameter {id:?}")))?;
            if p.len() != g.len() {
                return Err(Error::shape("adam_step", format!("{id:?}: {}", p.len()), g.len()));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(format!("{id:?}")));
            }
        }

        self.t += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (id, g) in grads.iter() {
            let p = params.param_mut(id).expect("validated above");
            let mom = self.moments.entry(id.clone()).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            for i in 0..g.len() {
                mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g[i];
                mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = mom.m[i] / c1;
                let v_hat = mom.v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
