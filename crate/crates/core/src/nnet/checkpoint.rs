//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "SNTG"
//! version    u32      1
//! topology   u8       0 = classifier, 1 = unet
//! input      3 x u32  channels, height, width
//! n_layers   u32
//! per layer  u8 kind, then kind fields as u32:
//!              0 conv2d (in_ch, out_ch, k)   1 relu   2 maxpool2
//!              3 upsample2   4 concat_skip (from)   5 dense (inputs, outputs)
//!              6 sigmoid   7 global_avg_pool
//! params     f64 values, layer by layer, weights then bias, row-major
//! ```

use std::path::Path;

use super::layer::{Layer, LayerKind};
use super::network::{Network, Topology};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SNTG";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(match net.topology() {
        Topology::Classifier => 0,
        Topology::Unet => 1,
    });
    for d in net.input_shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        let (tag, fields): (u8, Vec<usize>) = match layer.kind {
            LayerKind::Conv2d { in_ch, out_ch, k } => (0, vec![in_ch, out_ch, k]),
            LayerKind::Relu => (1, vec![]),
            LayerKind::MaxPool2 => (2, vec![]),
            LayerKind::Upsample2 => (3, vec![]),
            LayerKind::ConcatSkip { from } => (4, vec![from]),
            LayerKind::Dense { inputs, outputs } => (5, vec![inputs, outputs]),
            LayerKind::Sigmoid => (6, vec![]),
            LayerKind::GlobalAvgPool => (7, vec![]),
        };
        out.push(tag);
        for f in fields {
            out.extend_from_slice(&(f as u32).to_le_bytes());
        }
    }
    for layer in net.layers() {
        for p in &layer.params {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let topology = match cur.u8()? {
        0 => Topology::Classifier,
        1 => Topology::Unet,
        t => return Err(Error::Checkpoint(format!("unknown topology {t}"))),
    };
    let input_shape = [cur.u32()?, cur.u32()?, cur.u32()?];
    let n_layers = cur.u32()?;
    if n_layers > 10_000 {
        return Err(Error::Checkpoint(format!("implausible layer count {n_layers}")));
    }
    let mut kinds = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        kinds.push(match cur.u8()? {
            0 => LayerKind::Conv2d {
                in_ch: cur.u32()?,
                out_ch: cur.u32()?,
                k: cur.u32()?,
            },
            1 => LayerKind::Relu,
            2 => LayerKind::MaxPool2,
            3 => LayerKind::Upsample2,
            4 => LayerKind::ConcatSkip { from: cur.u32()? },
            5 => LayerKind::Dense {
                inputs: cur.u32()?,
                outputs: cur.u32()?,
            },
            6 => LayerKind::Sigmoid,
            7 => LayerKind::GlobalAvgPool,
            t => return Err(Error::Checkpoint(format!("unknown layer kind {t}"))),
        });
    }
    let mut layers = Vec::with_capacity(n_layers);
    for kind in kinds {
        let mut layer = Layer::new(kind);
        for p in &mut layer.params {
            let shape = p.shape().to_vec();
            let values = (0..p.len()).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            *p = Tensor::from_vec(&shape, values)?;
        }
        layers.push(layer);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Network::from_layers(layers, topology, input_shape)
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
