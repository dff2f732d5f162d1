use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AutodiffError, Graph, Tensor, Var};

/// Named parameter tensors. Serializes as a flat JSON object
/// `{name: {shape, data}}`, ordered by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

/// Graph handles for every parameter of a store, by name.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Merges `other` in, overwriting on name collision.
    pub fn extend(&mut self, other: ParamStore) {
        self.entries.extend(other.entries);
    }

    /// Entries whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Adds every parameter to `graph` as a trainable leaf.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(name, t)| (name.clone(), graph.param(name.clone(), t.clone())))
                .collect(),
        }
    }

    /// Adds every parameter to `graph` as a constant (inference only).
    pub fn bind_frozen(&self, graph: &mut Graph) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(name, t)| (name.clone(), graph.constant(t.clone())))
                .collect(),
        }
    }

    /// He-style normal initialization for a `[fan_in, fan_out]` weight and a
    /// zero bias named `{prefix}.w` / `{prefix}.b`.
    pub fn init_linear<R: Rng + ?Sized>(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
        let std = (2.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.insert(format!("{prefix}.w"), Tensor::new(vec![fan_in, fan_out], w).expect("shape"));
        self.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, CheckpointError> {
        let store: ParamStore = serde_json::from_str(s)?;
        for (name, t) in &store.entries {
            // Deserialization bypasses Tensor::new; re-validate.
            Tensor::new(t.shape().to_vec(), t.data().to_vec())
                .map_err(|e| CheckpointError::Invalid(format!("{name}: {e}")))?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid checkpoint tensor {0}")]
    Invalid(String),
}

impl From<AutodiffError> for CheckpointError {
    fn from(e: AutodiffError) -> Self {
        CheckpointError::Invalid(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn checkpoint_json_round_trip_is_lossless(
            values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..40),
            rows in 1usize..4,
        ) {
            let cols = values.len();
            let mut data = Vec::new();
            for _ in 0..rows { data.extend_from_slice(&values); }
            let mut store = ParamStore::new();
            store.insert("layer.w", Tensor::new(vec![rows, cols], data).unwrap());
            store.insert("layer.b", Tensor::vector(values.clone()));
            let back = ParamStore::from_json(&store.to_json()).unwrap();
            prop_assert_eq!(back, store);
        }
    }

    #[test]
    fn checkpoint_format_is_flat_name_object() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap());
        assert_eq!(store.to_json(), r#"{"w":{"shape":[1,2],"data":[1.5,-2.0]}}"#);
        assert!(ParamStore::from_json(r#"{"w":{"shape":[3],"data":[1.0]}}"#).is_err());
    }
}
