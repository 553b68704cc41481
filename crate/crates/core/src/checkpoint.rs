//! `VXCP` checkpoints: a little-endian header with the variant and every
//! model dimension, followed by named tensors of 64-bit floats.
//!
//! ```text
//! "VXCP" u32 version u32 variant
//! u32 N u32 M u32 K u32 D u32 h u32 Z u32 Nw u32 O
//! u32 tensor_count
//! per tensor: u32 name_len, name, u32 rows, u32 cols, rows*cols f64
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{ModelDims, ModelParams, Variant};

pub const VXCP_MAGIC: &[u8; 4] = b"VXCP";
pub const VXCP_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit the checkpoint header")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let d = params.dims;
    let mut out = Vec::with_capacity(64 + params.num_values() * 8);
    out.extend_from_slice(VXCP_MAGIC);
    out.extend_from_slice(&VXCP_VERSION.to_le_bytes());
    out.extend_from_slice(&params.variant.code().to_le_bytes());
    for v in [d.users, d.items, d.k, d.d, d.regions, d.z, d.vocab, d.o] {
        put_u32(&mut out, v)?;
    }
    let tensors = params.tensors();
    put_u32(&mut out, tensors.len())?;
    for t in tensors {
        put_u32(&mut out, t.name.len())?;
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.rows)?;
        put_u32(&mut out, t.cols)?;
        for v in t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != VXCP_MAGIC {
        return Err(Error::Format("not a VXCP checkpoint (bad magic)".into()));
    }
    let version = c.u32("version")? as u32;
    if version != VXCP_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let code = c.u32("variant")? as u32;
    let variant = Variant::from_code(code).ok_or_else(|| Error::Format(format!("unknown variant code {code}")))?;
    let mut dims = [0usize; 8];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = c.u32(&format!("dimension {i}"))?;
    }
    let dims = ModelDims {
        users: dims[0],
        items: dims[1],
        k: dims[2],
        d: dims[3],
        regions: dims[4],
        z: dims[5],
        vocab: dims[6],
        o: dims[7],
    };
    let mut params = ModelParams::zeros(variant, dims);
    if params.dims != dims {
        return Err(Error::Format(format!("dimensions {dims:?} inconsistent with variant {variant}")));
    }
    let count = c.u32("tensor count")?;
    let mut tensors = params.tensors_mut();
    if count != tensors.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, variant {variant} has {}",
            tensors.len()
        )));
    }
    for t in tensors.iter_mut() {
        let len = c.u32("tensor name length")?;
        let name = c.take(len, "tensor name")?;
        if name != t.name.as_bytes() {
            return Err(Error::Format(format!(
                "expected tensor {}, found {}",
                t.name,
                String::from_utf8_lossy(name)
            )));
        }
        let (rows, cols) = (c.u32("rows")?, c.u32("cols")?);
        if (rows, cols) != (t.rows, t.cols) {
            return Err(Error::Format(format!(
                "tensor {} is {rows}x{cols}, expected {}x{}",
                t.name, t.rows, t.cols
            )));
        }
        let payload = c.take(rows * cols * 8, t.name)?;
        for (v, b) in t.values.iter_mut().zip(payload.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
    }
    drop(tensors);
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last tensor", bytes.len() - c.pos)));
    }
    if !params.is_finite() {
        return Err(Error::Format("checkpoint contains non-finite values".into()));
    }
    Ok(params)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(params)?;
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
