//! Model checkpoint container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic  "FMCE"            4 bytes
//! version                  u32   (= 1)
//! parameter count          u32
//! per parameter, in set order:
//!     name length          u32
//!     name                 UTF-8 bytes
//!     partition tag        u8    (0 backbone, 1 classifier, 2 fmce)
//!     rank                 u32
//!     extents              u32 × rank
//!     values               f32 × product(extents)
//! ```
//!
//! The trainable/frozen state is not stored; a loaded set is fully trainable.

use std::path::Path;

use fmce_autograd::Tensor;

use crate::binio::{checked_u32, put_f32s, put_u32, read_file, write_file, ByteReader};
use crate::error::Result;
use crate::params::{Param, ParamSet, Partition};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FMCE";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamSet<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, checked_u32(params.len(), "parameter count")?);
    for (name, p) in params.iter() {
        put_u32(&mut out, checked_u32(name.len(), "name length")?);
        out.extend_from_slice(name.as_bytes());
        out.push(p.partition.tag());
        put_u32(&mut out, checked_u32(p.tensor.dims().len(), "rank")?);
        for &d in p.tensor.dims() {
            put_u32(&mut out, checked_u32(d, "extent")?);
        }
        put_f32s(&mut out, p.tensor.data());
    }
    Ok(out)
}

pub fn decode_checkpoint(origin: &str, bytes: &[u8]) -> Result<ParamSet<f32>> {
    let mut r = ByteReader::new(origin, bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.error("bad magic, expected \"FMCE\""));
    }
    let version = r.u32_le()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let count = r.u32_le()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = r.u32_le()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.error("parameter name is not UTF-8"))?
            .to_string();
        let tag = r.u8()?;
        let partition =
            Partition::from_tag(tag).ok_or_else(|| r.error(format!("unknown partition tag {tag}")))?;
        let rank = r.u32_le()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32_le().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.error("extent overflow"))?;
        let values = r.f32_vec(numel)?;
        let tensor = Tensor::from_vec(dims, values)
            .map_err(|e| r.error(format!("parameter `{name}`: {e}")))?
            .with_grad();
        params
            .insert_param(name.clone(), Param { tensor, partition })
            .map_err(|_| r.error(format!("duplicate parameter `{name}`")))?;
    }
    r.expect_end()?;
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ParamSet<f32>) -> Result<()> {
    write_file(path, &encode_checkpoint(params)?)
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet<f32>> {
    decode_checkpoint(&path.display().to_string(), &read_file(path)?)
}
