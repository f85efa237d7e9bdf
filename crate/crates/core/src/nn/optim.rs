use ndarray::{ArrayD, IxDyn};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{Grads, ParamStore, Real};
use crate::dataset_io::{NamedTensor, OptimizerState};
use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            Config,
            "learning_rate must be positive"
        );
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            Config,
            "Adam betas must lie in [0, 1)"
        );
        ensure!(self.epsilon > 0.0, Config, "Adam epsilon must be positive");
        Ok(())
    }
}

/// Adam with bias correction. Update counts are kept per parameter, so
/// alternately updating disjoint parameter groups behaves like one optimizer
/// per group.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub config: AdamConfig,
    first: Vec<ArrayD<F>>,
    second: Vec<ArrayD<F>>,
    counts: Vec<u64>,
    steps: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig, store: &ParamStore<F>) -> Self {
        let zeros = || store.iter().map(|(_, p)| ArrayD::zeros(p.value.raw_dim())).collect();
        Adam {
            config,
            first: zeros(),
            second: zeros(),
            counts: vec![0; store.len()],
            steps: 0,
        }
    }

    /// Number of `step` calls so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter with an active gradient slot.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Grads<F>) {
        let b1 = F::c(self.config.beta1);
        let b2 = F::c(self.config.beta2);
        let lr = self.config.learning_rate;
        let eps = F::c(self.config.epsilon);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            self.counts[id.0] += 1;
            let t = self.counts[id.0] as i32;
            let bc1 = 1.0 - self.config.beta1.powi(t);
            let bc2 = 1.0 - self.config.beta2.powi(t);
            let step_size = F::c(lr / bc1);
            let bc2_sqrt = F::c(bc2.sqrt());
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let denom = v.sqrt() / bc2_sqrt + eps;
                *p = *p - step_size * *m / denom;
            });
        }
        self.steps += 1;
    }

    pub fn state(&self, store: &ParamStore<F>) -> OptimizerState {
        let pack = |arrays: &Vec<ArrayD<F>>| {
            store
                .iter()
                .zip(arrays)
                .map(|((_, p), a)| NamedTensor {
                    name: p.name.clone(),
                    shape: a.shape().to_vec(),
                    data: a.iter().map(|v| v.as_f32()).collect(),
                })
                .collect()
        };
        OptimizerState {
            step: self.steps,
            first_moments: pack(&self.first),
            second_moments: pack(&self.second),
            update_counts: store
                .iter()
                .zip(&self.counts)
                .map(|((_, p), &c)| (p.name.clone(), c))
                .collect(),
        }
    }

    pub fn restore(config: AdamConfig, store: &ParamStore<F>, state: &OptimizerState) -> Result<Self> {
        let mut adam = Adam::new(config, store);
        adam.steps = state.step;
        for (id, p) in store.iter() {
            let find = |list: &[NamedTensor]| -> Result<ArrayD<F>> {
                let t = list
                    .iter()
                    .find(|t| t.name == p.name)
                    .ok_or_else(|| Error::Compatibility(format!("optimizer state lacks `{}`", p.name)))?;
                ensure!(
                    t.shape == p.value.shape(),
                    Compatibility,
                    "optimizer moment `{}` has shape {:?}",
                    p.name,
                    t.shape
                );
                ArrayD::from_shape_vec(IxDyn(&t.shape), t.data.iter().map(|&v| F::of_f32(v)).collect())
                    .map_err(|e| Error::Compatibility(e.to_string()))
            };
            adam.first[id.0] = find(&state.first_moments)?;
            adam.second[id.0] = find(&state.second_moments)?;
            adam.counts[id.0] = state
                .update_counts
                .iter()
                .find(|(n, _)| *n == p.name)
                .map(|(_, c)| *c)
                .ok_or_else(|| Error::Compatibility(format!("optimizer state lacks count for `{}`", p.name)))?;
        }
        Ok(adam)
    }
}
