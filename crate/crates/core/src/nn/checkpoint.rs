//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "HDRW"                magic
//! u16                   format version (1)
//! f64                   width multiplier
//! u32                   layer count, then per layer: u8 kind, u32 in, u32 out
//! u32                   tensor count, then per tensor:
//!   u16 + bytes         UTF-8 name
//!   u8                  rank, then rank × u32 dims
//!   f32 × product(dims) values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::layers::LayerKind;
use super::network::{LayerSpec, Network};
use super::Real;

pub const MAGIC: &[u8; 4] = b"HDRW";
pub const VERSION: u16 = 1;

/// Serializes a network; values are stored as 32-bit floats.
pub fn encode<T: Real>(net: &Network<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&net.width_multiplier().to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for l in net.layers() {
        out.push(l.kind.code());
        out.extend_from_slice(&(l.in_channels as u32).to_le_bytes());
        out.extend_from_slice(&(l.out_channels as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.params().len() as u32).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.tensor.shape().len() as u8);
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }
}

/// Parses a checkpoint back into a network.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<Network<T>> {
    let mut r = Reader { bytes };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("missing HDRW magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let width_multiplier = f64::from_le_bytes(r.array()?);
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let code = r.u8()?;
        let kind = LayerKind::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown layer kind {code}")))?;
        let in_channels = r.u32()? as usize;
        let out_channels = r.u32()? as usize;
        layers.push(LayerSpec {
            kind,
            in_channels,
            out_channels,
        });
    }
    let mut net = Network::new(layers, width_multiplier).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n_tensors = r.u32()? as usize;
    let mut values = Vec::with_capacity(n_tensors.min(4096));
    for _ in 0..n_tensors {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(count * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::of(f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))))
            .collect();
        values.push((name, shape, data));
    }
    if !r.bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.bytes.len())));
    }
    net.load_values(values)?;
    Ok(net)
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn save<T: Real>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp-ckpt");
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&encode(net))?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<Network<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
