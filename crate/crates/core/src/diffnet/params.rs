//! Named parameter store and its `SPC1` binary container.
//!
//! Layout: the four magic bytes `SPC1`, a little-endian `u64` manifest
//! length, the JSON manifest, then every parameter's values as little-endian
//! `f64` concatenated in sorted-path order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MAGIC: &[u8; 4] = b"SPC1";
pub const DTYPE_TAG: &str = "f64le";

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) {
        let grad = Tensor::zeros(value.shape());
        self.params.insert(path.into(), Param { value, grad });
    }

    /// He-style normal initialization scaled by fan-in.
    pub fn insert_normal(&mut self, path: &str, shape: &[usize], fan_in: usize, rng: &mut Rng) {
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("valid std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.insert(path, Tensor::new(shape, data).expect("shape matches"));
    }

    pub fn insert_uniform(&mut self, path: &str, shape: &[usize], bound: f64, rng: &mut Rng) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(path, Tensor::new(shape, data).expect("shape matches"));
    }

    pub fn get(&self, path: &str) -> &Tensor {
        &self.param(path).value
    }

    pub fn param(&self, path: &str) -> &Param {
        self.params
            .get(path)
            .unwrap_or_else(|| panic!("unknown parameter {path}"))
    }

    pub fn param_mut(&mut self, path: &str) -> &mut Param {
        self.params
            .get_mut(path)
            .unwrap_or_else(|| panic!("unknown parameter {path}"))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn accumulate(&mut self, path: &str, grad: &Tensor) -> Result<()> {
        self.param_mut(path).grad.add_assign(grad)
    }

    /// Overwrites every gradient with the one stored under the same path in `other`.
    pub fn copy_grads_from(&mut self, other: &ParamStore) -> Result<()> {
        for (path, p) in self.params.iter_mut() {
            let src = other
                .params
                .get(path)
                .ok_or_else(|| Error::Shape(format!("missing gradient for {path}")))?;
            p.grad.expect_shape(src.grad.shape())?;
            p.grad.data_mut().copy_from_slice(src.grad.data());
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn paths(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// FNV-1a over the bit patterns of every value, in path order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (path, p) in &self.params {
            for b in path.bytes() {
                h = (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3);
            }
            for v in p.value.data() {
                for b in v.to_bits().to_le_bytes() {
                    h = (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            version: 1,
            dtype: DTYPE_TAG.to_string(),
            params: self
                .params
                .iter()
                .map(|(path, p)| ManifestEntry {
                    path: path.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 8 * self.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params.values() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::schema(origin, msg.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing SPC1 header"));
        }
        let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let json_end = 12usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[12..json_end])
            .map_err(|e| Error::schema(origin, e.to_string()))?;
        if manifest.dtype != DTYPE_TAG {
            return Err(bad("unsupported dtype"));
        }
        let mut store = ParamStore::new();
        let mut offset = json_end;
        for entry in manifest.params {
            let n: usize = entry.shape.iter().product();
            let end = offset + 8 * n;
            if end > bytes.len() {
                return Err(bad("truncated parameter data"));
            }
            let data = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            store.insert(entry.path, Tensor::new(&entry.shape, data)?);
            offset = end;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dtype: String,
    params: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    path: String,
    shape: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_header_and_truncation() {
        let p = Path::new("x.spc");
        assert!(ParamStore::from_bytes(b"NOPE0000000000", p).is_err());
        let mut store = ParamStore::new();
        store.insert("a", Tensor::full(&[2, 2], 1.5));
        let bytes = store.to_bytes();
        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 3], p).is_err());
        assert_eq!(&bytes[..4], b"SPC1");
    }

    proptest! {
        #[test]
        fn bytes_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), seed in 0u64..100) {
            let mut store = ParamStore::new();
            let n = values.len();
            store.insert("z.last", Tensor::new(&[n], values).unwrap());
            store.insert_normal("a.first", &[3, 2], 3, &mut rng(seed));
            let back = ParamStore::from_bytes(&store.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back.checksum(), store.checksum());
            prop_assert_eq!(back, store);
        }
    }
}
