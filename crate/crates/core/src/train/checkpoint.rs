//! Flat binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "MFCK"
//! version  u32      1
//! count    u32      number of tensors (two per layer: weight, then bias)
//! shapes   count × { ndim: u32, dims: ndim × u64 }
//! data     every tensor's elements as f64, in table order
//! ```
//!
//! Linear weights have shape `[out, in]`, conv weights `[out, in, k, k]`, normalize
//! scale and shift `[channels]`. Parameter-free layers store two empty `[0]` tensors.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{LayerParams, LayerSpec, Network, NetworkConfig};

const MAGIC: &[u8; 4] = b"MFCK";
const VERSION: u32 = 1;

fn shapes_for(net: &Network) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for (layer, (p, input)) in net.layers().iter().zip(net.params().iter().zip(net.shapes())) {
        let weight = match *layer {
            LayerSpec::Linear { in_features, out_features, .. } => vec![out_features, in_features],
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                vec![out_channels, in_channels, kernel, kernel]
            }
            LayerSpec::Normalize => vec![input.first().copied().unwrap_or(1)],
            _ => vec![0],
        };
        out.push(weight);
        out.push(vec![p.bias.len()]);
    }
    out
}

/// Serialises the parameters of `net`.
pub fn write_checkpoint<W: Write>(mut w: W, net: &Network) -> Result<()> {
    let shapes = shapes_for(net);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(shapes.len() as u32).to_le_bytes())?;
    for s in &shapes {
        w.write_all(&(s.len() as u32).to_le_bytes())?;
        for &d in s {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for p in net.params() {
        for x in p.weight.iter().chain(&p.bias) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Reads parameters for a network built from `config`; shapes must match exactly.
pub fn read_checkpoint<R: Read>(mut r: R, config: NetworkConfig) -> Result<Network> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let template = Network::new(config.clone())?;
    let expected = shapes_for(&template);
    let count = c.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {count}", expected.len())));
    }
    for (i, want) in expected.iter().enumerate() {
        let ndim = c.u32()? as usize;
        let dims = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &dims != want {
            return Err(Error::Checkpoint(format!("tensor {i}: shape {dims:?}, expected {want:?}")));
        }
    }
    let mut read_vec = |n: usize| -> Result<Vec<f64>> {
        (0..n).map(|_| c.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))).collect()
    };
    let mut params = Vec::with_capacity(template.params().len());
    for p in template.params() {
        let weight = read_vec(p.weight.len())?;
        let bias = read_vec(p.bias.len())?;
        params.push(LayerParams { weight, bias });
    }
    if c.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Network::with_params(config, params)
}

pub fn save_checkpoint(path: &Path, net: &Network) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, net)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, config: NetworkConfig) -> Result<Network> {
    read_checkpoint(fs::File::open(path)?, config)
}
