//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "DOCDETCK"
//! version u32      currently 1
//! count   u32      number of parameter entries
//! entry*  repeated count times:
//!   name_len u32, name utf-8 bytes
//!   ndim     u32, dims ndim x u32
//!   data_len u64  (bytes, must equal product(dims) * 8)
//!   data     f64 little-endian, row-major
//! ```
//!
//! See `docs/file_formats.md` for the normative description.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::numerics::{Parameter, Tensor};

pub const MAGIC: &[u8; 8] = b"DOCDETCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on checkpoint: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic at offset 0: expected \"DOCDETCK\"")]
    BadMagic,
    #[error("unsupported checkpoint version {version} at offset {offset}")]
    BadVersion { version: u32, offset: u64 },
    #[error("corrupt checkpoint at offset {offset}: {detail}")]
    Corrupt { offset: u64, detail: String },
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<(), CheckpointError> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                CheckpointError::Corrupt {
                    offset: at,
                    detail: format!("truncated while reading {what}"),
                }
            } else {
                CheckpointError::Io(e)
            }
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        let mut b = [0u8; 8];
        self.read_exact_at(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }
}

/// Serializes parameters in order. The write goes to a temporary sibling
/// file first and is renamed into place, so readers never observe a
/// partial checkpoint.
pub fn save(path: &Path, params: &[&Parameter]) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for p in params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
            for &d in p.value.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            w.write_all(&((p.value.len() * 8) as u64).to_le_bytes())?;
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads every (name, tensor) entry. Errors carry the byte offset of the
/// first inconsistency.
pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut r = CountingReader::new(BufReader::new(File::open(path)?));
    let mut magic = [0u8; 8];
    r.read_exact_at(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let vers_at = r.offset;
    let version = r.read_u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion { version, offset: vers_at });
    }
    let count = r.read_u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_at = r.offset;
        let name_len = r.read_u32("name length")? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::Corrupt {
                offset: name_at,
                detail: format!("implausible name length {name_len}"),
            });
        }
        let mut name_buf = vec![0u8; name_len];
        r.read_exact_at(&mut name_buf, "name")?;
        let name = String::from_utf8(name_buf).map_err(|_| CheckpointError::Corrupt {
            offset: name_at,
            detail: "parameter name is not utf-8".into(),
        })?;

        let ndim_at = r.offset;
        let ndim = r.read_u32("ndim")? as usize;
        if ndim > 8 {
            return Err(CheckpointError::Corrupt {
                offset: ndim_at,
                detail: format!("implausible rank {ndim}"),
            });
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u32("dim")? as usize);
        }
        let len_at = r.offset;
        let data_len = r.read_u64("data length")? as usize;
        let expect: usize = shape.iter().product::<usize>() * 8;
        if data_len != expect {
            return Err(CheckpointError::Corrupt {
                offset: len_at,
                detail: format!(
                    "entry \"{name}\": data length {data_len} but shape {shape:?} needs {expect}"
                ),
            });
        }
        let mut raw = vec![0u8; data_len];
        r.read_exact_at(&mut raw, "tensor data")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let tensor = Tensor::from_vec(&shape, data).map_err(|e| CheckpointError::Corrupt {
            offset: len_at,
            detail: e.to_string(),
        })?;
        entries.push((name, tensor));
    }
    Ok(entries)
}
