//! Single-file model archives.
//!
//! Layout (little-endian): magic `ECKP`, u32 format version, u32 header
//! length, UTF-8 JSON header, then every array's `f32` values back to back
//! in header order. The header records the model kind, the training
//! configuration, progress counters, optimizer step counts and the name and
//! shape of every array. Optimizer moments are stored as arrays named
//! `<optimizer>/m/<param>` and `<optimizer>/v/<param>`.

use std::collections::BTreeMap;
use std::path::Path;

use exo2ego_nn::{Adam, ParamStore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ECKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    epoch: usize,
    step: u64,
    optimizers: BTreeMap<String, u64>,
    arrays: Vec<ArraySpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimization steps.
    pub step: u64,
    pub optimizers: BTreeMap<String, u64>,
    arrays: Vec<(ArraySpec, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            config,
            epoch: 0,
            step: 0,
            optimizers: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }

    pub fn arrays(&self) -> impl Iterator<Item = (&ArraySpec, &[f32])> {
        self.arrays.iter().map(|(s, v)| (s, v.as_slice()))
    }

    pub fn array(&self, name: &str) -> Option<(&ArraySpec, &[f32])> {
        self.arrays().find(|(s, _)| s.name == name)
    }

    pub fn push_array(&mut self, name: String, shape: Vec<usize>, values: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.arrays.push((ArraySpec { name, shape }, values));
    }

    /// Store every parameter of `store` under `prefix`.
    pub fn add_params(&mut self, prefix: &str, store: &ParamStore) {
        for (_, p) in store.iter() {
            self.push_array(
                format!("{prefix}{}", p.name),
                p.shape.clone(),
                p.value.iter().map(|&v| v as f32).collect(),
            );
        }
    }

    pub fn add_optimizer(&mut self, name: &str, adam: &Adam, store: &ParamStore) {
        self.optimizers.insert(name.to_string(), adam.step);
        for (i, (_, p)) in store.iter().enumerate() {
            for (tag, moments) in [("m", &adam.m[i]), ("v", &adam.v[i])] {
                self.push_array(
                    format!("{name}/{tag}/{}", p.name),
                    p.shape.clone(),
                    moments.iter().map(|&v| v as f32).collect(),
                );
            }
        }
    }

    /// Overwrite `store` with the arrays stored under `prefix`.
    pub fn load_params(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let entries: Vec<(&str, &[usize], Vec<f64>)> = self
            .arrays
            .iter()
            .filter_map(|(s, v)| {
                let name = s.name.strip_prefix(prefix)?;
                (!name.contains('/')).then(|| (name, s.shape.as_slice(), v.iter().map(|&x| x as f64).collect()))
            })
            .collect();
        store
            .load_named(entries.iter().map(|(n, s, v)| (*n, *s, v.as_slice())))
            .map_err(|e| Error::CheckpointIncompatible(e.to_string()))
    }

    pub fn load_optimizer(&self, name: &str, adam: &mut Adam, store: &ParamStore) -> Result<()> {
        let step = *self
            .optimizers
            .get(name)
            .ok_or_else(|| Error::CheckpointIncompatible(format!("no optimizer state {name}")))?;
        for (i, (_, p)) in store.iter().enumerate() {
            for tag in ["m", "v"] {
                let key = format!("{name}/{tag}/{}", p.name);
                let (spec, vals) = self
                    .array(&key)
                    .ok_or_else(|| Error::CheckpointIncompatible(format!("missing {key}")))?;
                if spec.shape != p.shape {
                    return Err(Error::CheckpointIncompatible(format!(
                        "{key}: shape {:?} vs {:?}",
                        spec.shape, p.shape
                    )));
                }
                let dst = if tag == "m" { &mut adam.m[i] } else { &mut adam.v[i] };
                *dst = vals.iter().map(|&v| v as f64).collect();
            }
        }
        adam.step = step;
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            optimizers: self.optimizers.clone(),
            arrays: self.arrays.iter().map(|(s, _)| s.clone()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let n: usize = self.arrays.iter().map(|(_, v)| v.len()).sum();
        let mut out = Vec::with_capacity(12 + json.len() + 4 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, v) in &self.arrays {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Schema("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::CheckpointIncompatible(format!("format version {version}, expected {VERSION}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if hlen > body.len() {
            return Err(Error::Schema("checkpoint header truncated".into()));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Schema(format!("checkpoint header: {e}")))?;
        let mut data = &body[hlen..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for spec in header.arrays {
            let n = spec
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4).map(|b| (n, b)));
            let Some((n, nbytes)) = n else {
                return Err(Error::Schema(format!("array {} has an overflowing shape", spec.name)));
            };
            if nbytes > data.len() {
                return Err(Error::Schema(format!("array {} truncated", spec.name)));
            }
            let vals: Vec<f32> = data[..nbytes]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("array {} holds non-finite values", spec.name)));
            }
            debug_assert_eq!(vals.len(), n);
            data = &data[nbytes..];
            arrays.push((spec, vals));
        }
        if !data.is_empty() {
            return Err(Error::Schema(format!("{} trailing bytes after checkpoint arrays", data.len())));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            epoch: header.epoch,
            step: header.step,
            optimizers: header.optimizers,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::CheckpointIncompatible(format!(
                "checkpoint holds a {} model, expected {kind}",
                self.kind
            )))
        }
    }
}

/// How training initializes its model.
#[derive(Clone, Copy, Debug)]
pub enum Start<'a> {
    Scratch,
    /// Parameters from a checkpoint, fresh optimizer state.
    Pretrained(&'a Checkpoint),
    /// Parameters, optimizer state and progress counters from a checkpoint.
    Resume(&'a Checkpoint),
}

#[cfg(test)]
mod tests {
    use super::*;
    use exo2ego_nn::{AdamConfig, Init};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.add("a.weight", &[2, 3], &Init::Normal { std: 1.0 }, &mut rng);
        s.add("a.bias", &[3], &Init::Constant(0.5), &mut rng);
        s
    }

    #[test]
    fn roundtrip_params_and_optimizer() {
        let s = store();
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.step = 7;
        adam.m[0][1] = 0.25;
        adam.v[1][2] = 0.125;
        let mut c = Checkpoint::new("test", serde_json::json!({"lr": 0.1}));
        c.epoch = 3;
        c.add_params("net.", &s);
        c.add_optimizer("adam", &adam, &s);
        let back = Checkpoint::decode(&c.encode()).unwrap();
        assert_eq!(back, c);
        let mut s2 = store();
        s2.get_mut(s2.find("a.bias").unwrap()).value[0] = 9.0;
        back.load_params("net.", &mut s2).unwrap();
        assert_eq!(s2, s);
        let mut a2 = Adam::new(AdamConfig::default(), &s2);
        back.load_optimizer("adam", &mut a2, &s2).unwrap();
        assert_eq!(a2, adam);
    }

    #[test]
    fn shape_mismatch_is_incompatible() {
        let mut c = Checkpoint::new("test", serde_json::Value::Null);
        c.push_array("net.a.weight".into(), vec![3, 2], vec![0.0; 6]);
        c.push_array("net.a.bias".into(), vec![3], vec![0.0; 3]);
        let mut s = store();
        assert!(matches!(c.load_params("net.", &mut s), Err(Error::CheckpointIncompatible(_))));
    }

    #[test]
    fn malformed_bytes_rejected() {
        assert!(matches!(Checkpoint::decode(b"ECK"), Err(Error::Schema(_))));
        let mut c = Checkpoint::new("t", serde_json::Value::Null);
        c.push_array("x".into(), vec![2], vec![1.0, 2.0]);
        let b = c.encode();
        assert!(matches!(Checkpoint::decode(&b[..b.len() - 1]), Err(Error::Schema(_))));
        let mut extra = b.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
    }
}
