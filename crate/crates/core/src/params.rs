//! Named trainable parameters and the checkpoint format.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! "CKP1"  u32 entry count
//! per entry: u32 name length, name (UTF-8), u32 rank, rank × u64 dims,
//!            product(dims) × f32 values
//! ```
//!
//! A JSON manifest at `<path>.json` lists the same names and shapes in order
//! together with the model configuration.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::volume::write_atomic;

const CKPT_MAGIC: &[u8; 4] = b"CKP1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Entry<T> {
    value: Tensor<T>,
    grad: Tensor<T>,
}

/// Parameters in insertion order with a gradient slot each.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: IndexMap<String, ParamId>,
    entries: Vec<Entry<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: IndexMap::new(),
            entries: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.names.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            grad: Tensor::zeros(value.shape()),
            value,
        });
        self.names.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.names
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.names.values().copied()
    }

    pub fn names(&self) -> impl Iterator<Item = (&str, ParamId)> + '_ {
        self.names.iter().map(|(n, &id)| (n.as_str(), id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.names.get_index(id.0).map(|(n, _)| n.as_str()).unwrap_or("?")
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    /// Replaces a value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter {} has shape {:?}, got {:?}",
                self.names.get_index(id.0).unwrap().0,
                entry.value.shape(),
                value.shape()
            )));
        }
        entry.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(T::zero());
        }
    }

    pub fn grad_norm(&self) -> T {
        self.entries.iter().map(|e| e.grad.sq_norm()).sum::<T>().sqrt()
    }

    /// Scales all gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: T) -> T {
        let norm = self.grad_norm();
        if norm > max_norm {
            let s = max_norm / norm;
            for e in &mut self.entries {
                e.grad.data_mut().iter_mut().for_each(|g| *g = *g * s);
            }
        }
        norm
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    value: e.value.cast(),
                    grad: e.grad.cast(),
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }
}

/// Uniform `[−s, s]` with `s = sqrt(1 / fan_in)`, drawn from ChaCha8 seeded
/// by `seed`.
pub fn init_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let s = (1.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-s..=s))).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON manifest stored next to a checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest<C> {
    pub params: Vec<ManifestEntry>,
    pub config: C,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode_params<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, id) in store.names() {
        let value = store.value(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
        for &d in value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in value.data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_params<T: Real>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CKPT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Format(format!("parameter name: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        store.insert(&name, Tensor::from_vec(&shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(store)
}

/// Writes parameters and manifest, each through a temp file + rename.
pub fn save_checkpoint<T: Real, C: Serialize>(path: &Path, store: &ParamStore<T>, config: &C) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::storage(parent, e))?;
    }
    let manifest = Manifest {
        params: store
            .names()
            .map(|(name, id)| ManifestEntry {
                name: name.to_string(),
                shape: store.value(id).shape().to_vec(),
            })
            .collect(),
        config,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Encoding(e.to_string()))?;
    write_atomic(path, &encode_params(store))?;
    write_atomic(&manifest_path(path), &json)
}

pub fn load_checkpoint<T: Real, C: for<'de> Deserialize<'de>>(path: &Path) -> Result<(ParamStore<T>, C)> {
    let bytes = fs::read(path).map_err(|e| Error::storage(path, e))?;
    let store = decode_params(&bytes)?;
    let mpath = manifest_path(path);
    let raw = fs::read(&mpath).map_err(|e| Error::storage(&mpath, e))?;
    let manifest: Manifest<C> =
        serde_json::from_slice(&raw).map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
    let listed: Vec<(&str, &[usize])> = manifest
        .params
        .iter()
        .map(|e| (e.name.as_str(), e.shape.as_slice()))
        .collect();
    let stored: Vec<(&str, &[usize])> = store.names().map(|(n, id)| (n, store.value(id).shape())).collect();
    if listed != stored {
        return Err(Error::Format(
            "checkpoint manifest disagrees with stored parameters".into(),
        ));
    }
    Ok((store, manifest.config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = seeded_rng(3);
        store.insert("a.w", init_uniform(&[2, 3, 3, 3], 27, &mut rng)).unwrap();
        store.insert("a.b", Tensor::zeros(&[2])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &store, &serde_json::json!({"k": 1})).unwrap();
        let (back, cfg): (ParamStore<f32>, serde_json::Value) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg["k"], 1);
        for (name, id) in store.names() {
            assert_eq!(back.value(back.id(name).unwrap()), store.value(id));
        }
        assert_eq!(
            back.names().map(|(n, _)| n.to_string()).collect::<Vec<_>>(),
            vec!["a.w", "a.b"]
        );
    }

    #[test]
    fn duplicate_names_and_shape_changes_rejected() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("x", Tensor::zeros(&[2])).unwrap();
        assert!(store.insert("x", Tensor::zeros(&[2])).is_err());
        assert!(store.set(id, Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a: Tensor<f64> = init_uniform(&[4, 2, 3, 3], 18, &mut seeded_rng(9));
        let b: Tensor<f64> = init_uniform(&[4, 2, 3, 3], 18, &mut seeded_rng(9));
        assert_eq!(a, b);
        let s = (1.0f64 / 18.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= s));
    }

    #[test]
    fn clip_scales_to_norm() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("x", Tensor::zeros(&[2])).unwrap();
        store.grad_mut(id).data_mut().copy_from_slice(&[30.0, 40.0]);
        assert_eq!(store.clip_grad_norm(10.0), 50.0);
        assert!((store.grad_norm() - 10.0).abs() < 1e-12);
    }
}
