use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "trajdet-params/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    params: Vec<CheckpointEntry>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Weight with entries uniform in `±sqrt(1 / fan_in)`.
    pub fn add_uniform<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> ParamId {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound));
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::from_fn(shape, |_| 1.0))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.values.iter_mut()
    }

    pub fn total_size(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Replaces values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &Params) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let src = other
                .id(name)
                .map(|id| other.get(id))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if src.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} does not match {:?}",
                    src.shape(),
                    value.shape()
                )));
            }
            *value = src.clone();
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            params: self
                .iter()
                .map(|(_, name, t)| CheckpointEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&ck).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Params> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format tag {:?} (expected {CHECKPOINT_FORMAT:?})",
                ck.format
            )));
        }
        let mut params = Params::new();
        for e in ck.params {
            let t = Tensor::new(e.shape, e.values).map_err(|err| Error::Checkpoint(format!("{}: {err}", e.name)))?;
            if params.id(&e.name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {}", e.name)));
            }
            params.add(e.name, t);
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Params> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Params::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = Params::new();
        p.add_uniform("w", &[3, 4], 3, &mut rng);
        p.add_zeros("b", &[4]);
        let back = Params::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_unknown_format() {
        let bad = r#"{"format": "other/v9", "params": []}"#;
        assert!(matches!(Params::from_json(bad), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = Params::new();
        let id = p.add_uniform("w", &[16, 16], 16, &mut rng);
        assert!(p.get(id).data().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn load_from_checks_shapes() {
        let mut a = Params::new();
        a.add_zeros("w", &[2, 2]);
        let mut b = Params::new();
        b.add_zeros("w", &[2, 3]);
        assert!(a.load_from(&b).is_err());
    }
}
