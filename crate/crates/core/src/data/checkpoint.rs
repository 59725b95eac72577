//! Named-tensor snapshots.
//!
//! File layout (little-endian): magic `NMCK`, u32 version = 1, u32 tensor
//! count; per tensor: u32 name length, UTF-8 name, u32 rank, rank × u64
//! dims, then product(dims) f32 values.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::binary::{put_f32s, put_u32, put_u64, Reader};
use crate::error::{Error, FormatError, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"NMCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Ordered name → (shape, f32 values) map. Checkpoints are always 32-bit.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        values: Vec<f32>,
    ) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Format(FormatError::DuplicateName(name)));
        }
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::invalid_shape(
                "checkpoint entry",
                &shape,
                "value count mismatch",
            ));
        }
        self.entries.push(CheckpointEntry {
            name,
            shape,
            values,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[CheckpointEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_store<T: Scalar>(store: &ParamStore<T>) -> Self {
        let entries = store
            .iter()
            .map(|(_, name, t)| CheckpointEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.data().iter().map(|x| x.f32()).collect(),
            })
            .collect();
        Checkpoint { entries }
    }

    /// Overwrites every parameter of `store` from this checkpoint. Every
    /// parameter must be present with the same shape; extra entries are errors.
    pub fn load_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.len() != store.len() {
            for e in &self.entries {
                if store.id(&e.name).is_none() {
                    return Err(Error::UnknownParameter(e.name.clone()));
                }
            }
        }
        let mut staged = Vec::with_capacity(store.len());
        for (id, name, t) in store.iter() {
            let e = self
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter `{name}`")))?;
            if e.shape != t.shape() {
                return Err(Error::shape("checkpoint load", t.shape(), &e.shape));
            }
            let values = e.values.iter().map(|&x| T::of_f32(x)).collect();
            staged.push((id, Tensor::new(e.shape.clone(), values)?));
        }
        for (id, t) in staged {
            store.set(id, t)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.entries.len() as u32);
        for e in &self.entries {
            put_u32(&mut out, e.name.len() as u32);
            out.extend_from_slice(e.name.as_bytes());
            put_u32(&mut out, e.shape.len() as u32);
            for &d in &e.shape {
                put_u64(&mut out, d as u64);
            }
            put_f32s(&mut out, &e.values);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let count = r.u32("tensor count")? as usize;
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.bytes(name_len, "name")?)
                .map_err(|_| FormatError::InvalidName)?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(FormatError::DuplicateName(name));
            }
            let rank = r.u32("rank")? as usize;
            if rank == 0 {
                return Err(FormatError::Inconsistent(format!(
                    "tensor `{name}` has rank 0"
                )));
            }
            if rank.saturating_mul(8) > r.remaining() {
                return Err(FormatError::Truncated("dims"));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u64("dims")?;
                shape.push(
                    usize::try_from(d)
                        .map_err(|_| FormatError::Inconsistent(format!("dim {d} too large")))?,
                );
            }
            if shape.contains(&0) {
                return Err(FormatError::Inconsistent(format!(
                    "tensor `{name}` has a zero extent"
                )));
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| {
                    FormatError::Inconsistent(format!("tensor `{name}` extent overflow"))
                })?;
            let values = r.f32s(n, "payload")?;
            entries.push(CheckpointEntry {
                name,
                shape,
                values,
            });
        }
        if r.remaining() > 0 {
            return Err(FormatError::TrailingBytes(r.remaining()));
        }
        Ok(Checkpoint { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_bytes(&fs::read(path)?)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_round_trip() {
        let mut store = ParamStore::<f32>::new();
        store
            .add(
                "a.w",
                Tensor::new(vec![2, 3], vec![0.1, -2.0, 3.5, 1e-7, 0.0, -0.0]).unwrap(),
            )
            .unwrap();
        store.add("b", Tensor::scalar(42.0)).unwrap();
        let ck = Checkpoint::from_store(&store);
        let parsed = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(parsed.to_bytes(), ck.to_bytes());
        let mut other = ParamStore::<f32>::new();
        other.add("a.w", Tensor::zeros(&[2, 3])).unwrap();
        other.add("b", Tensor::zeros(&[1])).unwrap();
        parsed.load_into(&mut other).unwrap();
        assert_eq!(
            other.get(other.id("a.w").unwrap()).data(),
            store.get(store.id("a.w").unwrap()).data()
        );
    }

    #[test]
    fn load_rejects_mismatch() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::zeros(&[2, 2])).unwrap();
        let mut ck = Checkpoint::new();
        ck.push("w", vec![4], vec![0.0; 4]).unwrap();
        assert!(ck.load_into(&mut store).is_err());
        let mut extra = Checkpoint::from_store(&store);
        extra.push("other", vec![1], vec![0.0]).unwrap();
        assert!(matches!(
            extra.load_into(&mut store),
            Err(Error::UnknownParameter(_))
        ));
    }
}
