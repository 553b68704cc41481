//! Regional image features and the `VXRF` container.
//!
//! Layout (little-endian): `b"VXRF"`, `u32 version = 1`, `u32 M`, `u32 h`,
//! `u32 D`, then `M·h·D` `f32` values, item-major then region-major.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const VXRF_MAGIC: &[u8; 4] = b"VXRF";
pub const VXRF_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VxrfHeader {
    pub items: u32,
    pub regions: u32,
    pub dim: u32,
}

/// Per-item `h × D` region feature grids, held as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalFeatureStore {
    items: usize,
    regions: usize,
    dim: usize,
    values: Vec<f64>,
}

/// One item's `h × D` grid.
#[derive(Debug, Clone, Copy)]
pub struct RegionGrid<'a> {
    regions: usize,
    dim: usize,
    values: &'a [f64],
}

impl<'a> RegionGrid<'a> {
    pub fn new(regions: usize, dim: usize, values: &'a [f64]) -> Result<Self> {
        if values.len() != regions * dim {
            return Err(Error::Data(format!(
                "region grid {regions}x{dim} needs {} values, got {}",
                regions * dim,
                values.len()
            )));
        }
        Ok(Self {
            regions,
            dim,
            values,
        })
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn region(&self, k: usize) -> &'a [f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.values
    }
}

impl RegionalFeatureStore {
    pub fn new(items: usize, regions: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if items == 0 || regions == 0 || dim == 0 {
            return Err(Error::Data(format!(
                "feature store dimensions must be positive, got M={items} h={regions} D={dim}"
            )));
        }
        if values.len() != items * regions * dim {
            return Err(Error::Data(format!(
                "feature store M={items} h={regions} D={dim} needs {} values, got {}",
                items * regions * dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature value at offset {pos}")));
        }
        Ok(Self {
            items,
            regions,
            dim,
            values,
        })
    }

    pub fn num_items(&self) -> usize {
        self.items
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn item(&self, j: usize) -> RegionGrid<'_> {
        let stride = self.regions * self.dim;
        RegionGrid {
            regions: self.regions,
            dim: self.dim,
            values: &self.values[j * stride..(j + 1) * stride],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Side of the square region grid, if `h` is a perfect square.
    pub fn grid_side(&self) -> Option<usize> {
        perfect_square_root(self.regions)
    }

    /// Reorders rows so that row `j` of the result is row `order[j]` of `self`.
    pub fn reindexed(&self, order: &[usize]) -> Result<Self> {
        let stride = self.regions * self.dim;
        let mut values = Vec::with_capacity(order.len() * stride);
        for &src in order {
            if src >= self.items {
                return Err(Error::Data(format!(
                    "feature row {src} out of range ({} items)",
                    self.items
                )));
            }
            values.extend_from_slice(&self.values[src * stride..(src + 1) * stride]);
        }
        Self::new(order.len(), self.regions, self.dim, values)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.values.len() * 4);
        out.extend_from_slice(VXRF_MAGIC);
        for v in [VXRF_VERSION, self.items as u32, self.regions as u32, self.dim as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &self.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = parse_header(bytes)?;
        let (m, h, d) = (
            header.items as usize,
            header.regions as usize,
            header.dim as usize,
        );
        let payload = &bytes[HEADER_LEN..];
        let mut values = Vec::with_capacity(payload.len() / 4);
        for chunk in payload.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "non-finite feature value at index {}",
                    values.len()
                )));
            }
            values.push(f64::from(v));
        }
        Self::new(m, h, d, values)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Checks the header and that the payload length matches it exactly.
pub fn parse_header(bytes: &[u8]) -> Result<VxrfHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "VXRF header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != VXRF_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let version = word(4);
    if version != VXRF_VERSION {
        return Err(Error::Format(format!("unsupported VXRF version {version}")));
    }
    let header = VxrfHeader {
        items: word(8),
        regions: word(12),
        dim: word(16),
    };
    if header.items == 0 || header.regions == 0 || header.dim == 0 {
        return Err(Error::Format(format!(
            "zero dimension in header (M={}, h={}, D={})",
            header.items, header.regions, header.dim
        )));
    }
    let expected = (header.items as u64)
        .checked_mul(header.regions as u64)
        .and_then(|x| x.checked_mul(header.dim as u64))
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| Error::Format("declared payload size overflows".into()))?;
    let actual = (bytes.len() - HEADER_LEN) as u64;
    if actual != expected {
        return Err(Error::Format(format!(
            "header declares M={} h={} D={} ({expected} payload bytes) but file has {actual}",
            header.items, header.regions, header.dim
        )));
    }
    Ok(header)
}

pub fn perfect_square_root(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}
