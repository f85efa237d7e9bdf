use ndarray::{ArrayD, IxDyn};
use sha2::{Digest, Sha256};

use super::Real;
use crate::dataset_io::NamedTensor;
use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: ArrayD<F>,
}

/// Named parameter registry with a stable insertion order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<F>) -> ParamId {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter `{name}`");
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<F> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<F> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn index_of(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar parameters, optionally restricted by name prefix.
    pub fn count(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.len())
            .sum()
    }

    pub fn to_named_tensors(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.iter().map(|v| v.as_f32()).collect(),
            })
            .collect()
    }

    /// Overwrites every registered parameter from `tensors`. Every name must
    /// appear exactly once with the registered shape, and no extras are allowed.
    pub fn load_named_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        for t in tensors {
            ensure!(
                self.index_of(&t.name).is_some(),
                Compatibility,
                "checkpoint parameter `{}` is not part of this model",
                t.name
            );
        }
        for p in self.params.iter_mut() {
            let mut found = tensors.iter().filter(|t| t.name == p.name);
            let t = found
                .next()
                .ok_or_else(|| Error::Compatibility(format!("checkpoint lacks parameter `{}`", p.name)))?;
            ensure!(found.next().is_none(), Compatibility, "parameter `{}` appears twice", p.name);
            ensure!(
                t.shape == p.value.shape(),
                Compatibility,
                "parameter `{}` has shape {:?} in checkpoint, model expects {:?}",
                p.name,
                t.shape,
                p.value.shape()
            );
            p.value = ArrayD::from_shape_vec(IxDyn(&t.shape), t.data.iter().map(|&v| F::of_f32(v)).collect())
                .map_err(|e| Error::Compatibility(e.to_string()))?;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and value bits of parameters matching `prefix`.
    pub fn fingerprint(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            h.update(p.name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.iter() {
                h.update(v.f64().to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Euclidean norm of each parameter, for diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.iter().map(|v| v.f64().powi(2)).sum::<f64>().sqrt()))
            .collect()
    }

    /// Casts every parameter to another element type.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.mapv(|v| G::c(v.f64())),
                })
                .collect(),
        }
    }
}

/// Gradient accumulators aligned with a [`ParamStore`]; `None` slots are frozen.
#[derive(Clone, Debug)]
pub struct Grads<F> {
    slots: Vec<Option<ArrayD<F>>>,
}

impl<F: Real> Grads<F> {
    /// Zeroed gradients for every parameter whose name satisfies `trainable`.
    pub fn new(store: &ParamStore<F>, trainable: impl Fn(&str) -> bool) -> Self {
        Grads {
            slots: store
                .params
                .iter()
                .map(|p| trainable(&p.name).then(|| ArrayD::zeros(p.value.raw_dim())))
                .collect(),
        }
    }

    pub fn all(store: &ParamStore<F>) -> Self {
        Self::new(store, |_| true)
    }

    pub fn slot(&mut self, id: ParamId) -> Option<&mut ArrayD<F>> {
        self.slots[id.0].as_mut()
    }

    pub fn get(&self, id: ParamId) -> Option<&ArrayD<F>> {
        self.slots[id.0].as_ref()
    }

    pub fn is_active(&self, id: ParamId) -> bool {
        self.slots[id.0].is_some()
    }

    pub fn scale(&mut self, factor: F) {
        for g in self.slots.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn zero(&mut self) {
        for g in self.slots.iter_mut().flatten() {
            g.fill(F::zero());
        }
    }

    /// Active slots in registry order.
    pub fn active(&self) -> impl Iterator<Item = (ParamId, &ArrayD<F>)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn global_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| v.f64().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn load_rejects_missing_extra_and_misshapen() {
        let mut store = ParamStore::<f32>::new();
        store.add("a", arr1(&[1.0, 2.0]).into_dyn());
        store.add("b", arr1(&[3.0]).into_dyn());
        let mut tensors = store.to_named_tensors();
        let mut other = store.clone();
        other.load_named_tensors(&tensors).unwrap();
        assert_eq!(other, store);

        tensors.pop();
        assert!(matches!(store.clone().load_named_tensors(&tensors), Err(Error::Compatibility(_))));

        let mut extra = store.to_named_tensors();
        extra.push(NamedTensor::new("c", vec![1], vec![0.0]).unwrap());
        assert!(store.clone().load_named_tensors(&extra).is_err());

        let mut bad = store.to_named_tensors();
        bad[0].shape = vec![1, 2];
        assert!(store.clone().load_named_tensors(&bad).is_err());
    }

    #[test]
    fn fingerprint_tracks_values_and_prefix() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("enc.w", arr1(&[1.0, 2.0]).into_dyn());
        store.add("dec.w", arr1(&[3.0]).into_dyn());
        let enc = store.fingerprint("enc.");
        store.get_mut(ParamId(1))[0] = 4.0;
        assert_eq!(store.fingerprint("enc."), enc);
        store.get_mut(a)[0] = 1.5;
        assert_ne!(store.fingerprint("enc."), enc);
    }

    #[test]
    fn frozen_slots_are_none() {
        let mut store = ParamStore::<f32>::new();
        let a = store.add("enc.w", arr1(&[1.0]).into_dyn());
        let b = store.add("dec.w", arr1(&[1.0]).into_dyn());
        let mut g = Grads::new(&store, |n| n.starts_with("enc."));
        assert!(g.slot(a).is_some());
        assert!(g.slot(b).is_none());
    }
}
