//! Binary named-tensor checkpoints plus a JSON manifest.
//!
//! Layout (little endian): `b"RNCK"`, `u32` version, `u32` tensor count, then
//! per tensor `u32` name length, UTF-8 name, `u32` rank, `u64` dims, `f32`
//! data in row-major order.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NnError, ParamStore, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RNCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    /// Free-form architecture description (typically the serialized config).
    pub arch: serde_json::Value,
    /// SHA-256 over the architecture description and the tensor table.
    pub arch_hash: String,
    pub tensors: Vec<TensorInfo>,
}

impl CheckpointManifest {
    pub fn for_store<S: Scalar>(arch: serde_json::Value, store: &ParamStore<S>) -> Self {
        let tensors: Vec<TensorInfo> =
            store.params().iter().map(|p| TensorInfo { name: p.name.clone(), shape: p.value.shape().to_vec() }).collect();
        let arch_hash = arch_hash(&arch, &tensors);
        Self { format_version: VERSION, arch, arch_hash, tensors }
    }

    pub fn write(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, NnError> {
        let m: Self = serde_json::from_slice(&fs::read(path)?)?;
        if m.arch_hash != arch_hash(&m.arch, &m.tensors) {
            return Err(NnError::Checkpoint(format!("{}: architecture hash does not match contents", path.display())));
        }
        Ok(m)
    }

    /// Errors unless `store` has exactly the manifest's tensor table.
    pub fn check_compatible<S: Scalar>(&self, store: &ParamStore<S>) -> Result<(), NnError> {
        let other = Self::for_store(self.arch.clone(), store);
        if other.tensors != self.tensors {
            return Err(NnError::Checkpoint("tensor table differs from the network being loaded".into()));
        }
        Ok(())
    }
}

fn arch_hash(arch: &serde_json::Value, tensors: &[TensorInfo]) -> String {
    let mut h = Sha256::new();
    h.update(arch.to_string().as_bytes());
    for t in tensors {
        h.update(t.name.as_bytes());
        for d in &t.shape {
            h.update((*d as u64).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn save_params<S: Scalar>(store: &ParamStore<S>, path: &Path) -> Result<(), NnError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.params() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&2u32.to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.iter() {
            w.write_all(&v.to_f32().unwrap().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads tensors into an existing store. Every stored tensor must exist in
/// `store` with the same shape and every store tensor must be present.
pub fn load_params<S: Scalar>(store: &mut ParamStore<S>, path: &Path) -> Result<(), NnError> {
    let bad = |msg: String| NnError::Checkpoint(format!("{}: {msg}", path.display()));
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    if count != store.len() {
        return Err(bad(format!("{count} tensors stored, network has {}", store.len())));
    }
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(bad("corrupt tensor name".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)?;
        if rank != 2 {
            return Err(bad(format!("tensor {name} has rank {rank}")));
        }
        let shape = (read_u64(&mut r)? as usize, read_u64(&mut r)? as usize);
        let id = store.id(&name).ok_or_else(|| bad(format!("unexpected tensor {name}")))?;
        if store.value(id).dim() != shape {
            return Err(bad(format!("tensor {name} has shape {shape:?}, expected {:?}", store.value(id).dim())));
        }
        let mut buf = vec![0u8; shape.0 * shape.1 * 4];
        r.read_exact(&mut buf)?;
        let data: Vec<S> = buf.chunks_exact(4).map(|c| S::from(f32::from_le_bytes(c.try_into().unwrap())).unwrap()).collect();
        store.value_mut(id).assign(&Array2::from_shape_vec(shape, data).expect("shape checked"));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes".into()));
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
