//! Versioned binary model bundles (`GDLM`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            4 bytes  "GDLM"
//! format version   u32
//! tensor count     u32
//! per tensor:      u32 name length, name bytes (utf-8),
//!                  u32 rank, u32 x rank extents,
//!                  f32 x prod(extents) raw data
//! kv count         u32
//! per entry:       u32 key length, key bytes, u32 value length, value bytes
//! ```
//!
//! Parameters are written in name order and values round through f32, so a
//! given trained model always serializes to identical bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"GDLM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelBundle {
    /// (name, shape, raw f32 values), sorted by name.
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
    /// Hyperparameters and provenance (architecture sizes, seed, kind, dim...).
    pub hyper: Vec<(String, String)>,
}

impl ModelBundle {
    pub fn from_store(store: &ParamStore, hyper: Vec<(String, String)>) -> ModelBundle {
        let tensors = store
            .iter_named()
            .map(|p| {
                (
                    p.name.clone(),
                    p.value.shape().to_vec(),
                    p.value.data().iter().map(|&x| x as f32).collect(),
                )
            })
            .collect();
        ModelBundle { tensors, hyper }
    }

    /// Copy tensor values into an already-constructed store with matching
    /// names and shapes.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        for (name, shape, data) in &self.tensors {
            let id = store
                .id_of(name)
                .ok_or_else(|| Error::invalid(format!("bundle tensor {name} not found in model")))?;
            if store.value(id).shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "bundle tensor {name} has shape {:?}, model expects {:?}",
                    shape,
                    store.value(id).shape()
                )));
            }
            let t = Tensor::from_vec(shape, data.iter().map(|&x| x as f64).collect())?;
            *store.value_mut(id) = t;
        }
        Ok(())
    }

    pub fn get_hyper(&self, key: &str) -> Option<&str> {
        self.hyper
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn hyper_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .get_hyper(key)
            .ok_or_else(|| Error::invalid(format!("bundle is missing hyperparameter '{key}'")))?;
        raw.parse()
            .map_err(|_| Error::invalid(format!("hyperparameter '{key}' = '{raw}' failed to parse")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, shape, data) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &e in shape {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.hyper.len() as u32).to_le_bytes());
        for (k, v) in &self.hyper {
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::parse(0, "bad magic, expected GDLM"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::parse(
                4,
                format!("unsupported bundle version {version}, expected {FORMAT_VERSION}"),
            ));
        }
        let tensor_count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(tensor_count);
        for _ in 0..tensor_count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::parse(r.offset(), format!("implausible tensor rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let count: usize = shape.iter().product();
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
            }
            tensors.push((name, shape, data));
        }
        let kv_count = r.u32()? as usize;
        let mut hyper = Vec::with_capacity(kv_count);
        for _ in 0..kv_count {
            let k = r.string()?;
            let v = r.string()?;
            hyper.push((k, v));
        }
        if !r.at_end() {
            return Err(Error::parse(r.offset(), "trailing bytes after bundle"));
        }
        Ok(ModelBundle { tensors, hyper })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<ModelBundle> {
        let bytes = std::fs::read(path)?;
        ModelBundle::from_bytes(&bytes)
    }
}

/// Little-endian cursor that reports the failing offset on truncation.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(
                self.pos as u64,
                format!("truncated: wanted {n} bytes, {} remain", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            return Err(Error::parse(self.offset(), format!("implausible string length {len}")));
        }
        let at = self.offset();
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::parse(at, "invalid utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample_bundle() -> ModelBundle {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from(31);
        store.add("layer.w", Tensor::randn(&[3, 2], 1.0, &mut rng));
        store.add("layer.b", Tensor::randn(&[3], 1.0, &mut rng));
        ModelBundle::from_store(&store, vec![("kind".into(), "test".into()), ("dim".into(), "3".into())])
    }

    #[test]
    fn round_trip_is_bitwise() {
        let bundle = sample_bundle();
        let bytes = bundle.to_bytes();
        let back = ModelBundle::from_bytes(&bytes).unwrap();
        assert_eq!(bundle, back);
        assert_eq!(bytes, back.to_bytes());
    }

    #[test]
    fn bad_magic_is_a_parse_error() {
        let mut bytes = sample_bundle().to_bytes();
        bytes[0] = b'X';
        let err = ModelBundle::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }));
    }

    #[test]
    fn truncation_names_the_offset() {
        let bytes = sample_bundle().to_bytes();
        let err = ModelBundle::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert!(offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_into_checks_shapes() {
        let bundle = sample_bundle();
        let mut store = ParamStore::new();
        store.add("layer.w", Tensor::zeros(&[3, 2]));
        store.add("layer.b", Tensor::zeros(&[4])); // wrong shape
        assert!(bundle.load_into(&mut store).is_err());
    }

    #[test]
    fn tensors_are_name_ordered() {
        let bundle = sample_bundle();
        let names: Vec<&str> = bundle.tensors.iter().map(|(n, _, _)| n.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        assert_eq!(names, sorted);
    }
}
