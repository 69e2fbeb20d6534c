//! Binary checkpoint format shared by all models.
//!
//! Layout (all integers little-endian):
//!   magic              8 bytes  "SVSCKPT1"
//!   kind               u32 len + utf8
//!   config             u32 len + json
//!   n_params           u32
//!     per param: name (u32 len + utf8), rank u32, dims (u32 each),
//!                data (f32 LE each)
//!   stats              u32 len + json (normalization / running statistics)
//!   optimizer flag     u8; if 1: u32 len + json
//!   seed               u64
//!
//! Parameters are stored as f32; loading then saving again reproduces the
//! file byte for byte.

use crate::error::{Result, SvsError};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SVSCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct CkptTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config_json: String,
    pub params: Vec<CkptTensor>,
    pub stats_json: String,
    pub optimizer_json: Option<String>,
    pub seed: u64,
}

impl Checkpoint {
    /// Snapshot a parameter store (values rounded to f32).
    pub fn from_store(
        kind: &str,
        config_json: String,
        store: &ParamStore,
        stats_json: String,
        optimizer_json: Option<String>,
        seed: u64,
    ) -> Self {
        let params = store
            .iter()
            .map(|(name, t)| CkptTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|&v| v as f32).collect(),
            })
            .collect();
        Checkpoint {
            kind: kind.to_string(),
            config_json,
            params,
            stats_json,
            optimizer_json,
            seed,
        }
    }

    /// Restore parameter values into a store with matching names/shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(SvsError::Data(format!(
                "checkpoint has {} params, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        for (i, p) in self.params.iter().enumerate() {
            if store.name(i) != p.name {
                return Err(SvsError::Data(format!(
                    "checkpoint param {} is '{}', model expects '{}'",
                    i,
                    p.name,
                    store.name(i)
                )));
            }
            if store.value(i).shape() != p.shape.as_slice() {
                return Err(SvsError::Data(format!(
                    "checkpoint param '{}' shape {:?} != model {:?}",
                    p.name,
                    p.shape,
                    store.value(i).shape()
                )));
            }
            let data: Vec<f64> = p.data.iter().map(|&v| v as f64).collect();
            store.set_value(i, Tensor::new(p.shape.clone(), data)?);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        write_str(&mut out, &self.kind);
        write_str(&mut out, &self.config_json);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            write_str(&mut out, &p.name);
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_str(&mut out, &self.stats_json);
        match &self.optimizer_json {
            Some(j) => {
                out.push(1);
                write_str(&mut out, j);
            }
            None => out.push(0),
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(SvsError::Data("bad checkpoint magic".into()));
        }
        let kind = r.read_str()?;
        let config_json = r.read_str()?;
        let n_params = r.read_u32()? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = r.read_str()?;
            let rank = r.read_u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.read_u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
            }
            params.push(CkptTensor { name, shape, data });
        }
        let stats_json = r.read_str()?;
        let optimizer_json = match r.take(1)?[0] {
            0 => None,
            1 => Some(r.read_str()?),
            b => return Err(SvsError::Data(format!("bad optimizer flag {b}"))),
        };
        let seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        if r.pos != bytes.len() {
            return Err(SvsError::Data(format!(
                "{} trailing bytes in checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            kind,
            config_json,
            params,
            stats_json,
            optimizer_json,
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(SvsError::Data("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn read_str(&mut self) -> Result<String> {
        let n = self.read_u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|e| SvsError::Data(format!("bad utf8: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        s.add_xavier("a.w", &[3, 4], 3, 4, &mut rng);
        s.add("a.b", Tensor::zeros(&[4]));
        s
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let store = sample_store();
        let ck = Checkpoint::from_store(
            "test",
            "{\"x\":1}".into(),
            &store,
            "{}".into(),
            Some("{\"m\":[0.5]}".into()),
            42,
        );
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn restore_matches_f32_rounding() {
        let store = sample_store();
        let ck = Checkpoint::from_store("t", String::new(), &store, String::new(), None, 0);
        let mut other = sample_store();
        ck.restore_into(&mut other).unwrap();
        for (i, (_, orig)) in store.iter().enumerate() {
            for (a, b) in orig.data().iter().zip(other.value(i).data()) {
                assert_eq!(*b, *a as f32 as f64);
            }
        }
    }

    #[test]
    fn restore_rejects_mismatched_store() {
        let store = sample_store();
        let ck = Checkpoint::from_store("t", String::new(), &store, String::new(), None, 0);
        let mut wrong = ParamStore::new();
        wrong.add("a.w", Tensor::zeros(&[3, 4]));
        assert!(ck.restore_into(&mut wrong).is_err());
        let mut wrong_shape = ParamStore::new();
        wrong_shape.add("a.w", Tensor::zeros(&[4, 3]));
        wrong_shape.add("a.b", Tensor::zeros(&[4]));
        assert!(ck.restore_into(&mut wrong_shape).is_err());
    }

    #[test]
    fn rejects_corrupted_input() {
        let store = sample_store();
        let ck = Checkpoint::from_store("t", String::new(), &store, String::new(), None, 0);
        let mut bytes = ck.to_bytes();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut padded = ck.to_bytes();
        padded.push(0);
        assert!(Checkpoint::from_bytes(&padded).is_err());
    }
}
