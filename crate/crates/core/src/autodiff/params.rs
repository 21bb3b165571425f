use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GCKPT\0\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
    /// Whether decoupled weight decay applies (weights yes, biases and norm gains no).
    pub decay: bool,
}

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool, decay: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::validation("param", format!("duplicate name {name}")));
        }
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            trainable,
            decay,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Gaussian-initialized weight matrix.
    pub fn weight<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f64,
        trainable: bool,
        rng: &mut R,
    ) -> Result<ParamId> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::validation("init std", e.to_string()))?;
        let n = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?, trainable, true)
    }

    /// Constant-initialized vector (biases, norm gains); never decayed.
    pub fn vector(&mut self, name: &str, len: usize, value: f64, trainable: bool) -> Result<ParamId> {
        self.insert(name, Tensor::full(&[1, len], value), trainable, false)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    pub fn num_trainable_values(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Serializes the selected parameters: magic, version, count, then per
    /// tensor name, trainable flag, shape and little-endian f64 payload.
    pub fn to_bytes(&self, select: impl Fn(&Param) -> bool) -> Vec<u8> {
        let chosen: Vec<&Param> = self.params.iter().filter(|p| select(p)).collect();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(chosen.len() as u32).to_le_bytes());
        for p in chosen {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.trainable as u8 | (p.decay as u8) << 1);
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in p.value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn frozen_bytes(&self) -> Vec<u8> {
        self.to_bytes(|p| !p.trainable)
    }

    pub fn trainable_bytes(&self) -> Vec<u8> {
        self.to_bytes(|p| p.trainable)
    }

    /// Parses a checkpoint into a standalone store.
    pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let mut flags = [0u8; 1];
            read_exact(&mut r, &mut flags)?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            store.insert(&name, Tensor::new(shape, data)?, flags[0] & 1 == 1, flags[0] & 2 == 2)?;
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(store)
    }

    /// Overwrites values of same-named parameters from `other`, checking shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (_, p) in other.iter() {
            let id = self
                .id(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", p.name)))?;
            let dst = &mut self.params[id.0];
            if dst.value.shape() != p.value.shape() {
                return Err(Error::shape("checkpoint load", dst.value.shape(), p.value.shape()));
            }
            dst.value = p.value.clone();
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, select: impl Fn(&Param) -> bool) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes(select))?;
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let other = ParamStore::from_bytes(&bytes)?;
        self.load_from(&other)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    if r.len() < buf.len() {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (head, tail) = r.split_at(buf.len());
    buf.copy_from_slice(head);
    *r = tail;
    Ok(())
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        s.weight("a.w", &[3, 2], 0.5, true, &mut rng).unwrap();
        s.vector("a.b", 2, 0.0, true).unwrap();
        s.weight("frozen.w", &[2, 2], 1.0, false, &mut rng).unwrap();
        let bytes = s.to_bytes(|_| true);
        assert_eq!(ParamStore::from_bytes(&bytes).unwrap(), s);

        let frozen = ParamStore::from_bytes(&s.frozen_bytes()).unwrap();
        assert_eq!(frozen.len(), 1);
        assert!(!frozen.get(frozen.id("frozen.w").unwrap()).trainable);
    }

    #[test]
    fn rejects_corrupt_bytes() {
        let s = ParamStore::new();
        let mut bytes = s.to_bytes(|_| true);
        assert!(ParamStore::from_bytes(&bytes[..6]).is_err());
        bytes[0] = b'X';
        assert!(ParamStore::from_bytes(&bytes).is_err());
    }

    #[test]
    fn load_checks_shapes() {
        let mut a = ParamStore::new();
        a.vector("x", 3, 1.0, true).unwrap();
        let mut b = ParamStore::new();
        b.vector("x", 2, 1.0, true).unwrap();
        assert!(a.load_from(&b).is_err());
        let mut c = ParamStore::new();
        c.vector("x", 3, 7.0, true).unwrap();
        a.load_from(&c).unwrap();
        assert_eq!(a.get(a.id("x").unwrap()).value.data(), &[7.0, 7.0, 7.0]);
    }
}
