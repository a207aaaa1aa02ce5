//! Network checkpoints.
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic        4 bytes  "SQNN"
//! version      u32      format version (currently 1)
//! layers       u32      layer count L
//! L times:     in_dim u32, out_dim u32, activation u32 (0 = identity, 1 = relu)
//! L times:     weights f32 * out_dim*in_dim (row-major), bias f32 * out_dim
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::net::{Activation, Dense, EmbeddingNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SQNN";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

fn activation_tag(a: Activation) -> u32 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
    }
}

pub fn write_checkpoint<W: Write>(net: &EmbeddingNet, mut w: W) -> Result<()> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(net.layers().len() as u32)?;
    for layer in net.layers() {
        w.write_u32::<LittleEndian>(layer.in_dim as u32)?;
        w.write_u32::<LittleEndian>(layer.out_dim as u32)?;
        w.write_u32::<LittleEndian>(activation_tag(layer.activation))?;
    }
    for layer in net.layers() {
        for &v in layer.weights.iter().chain(&layer.bias) {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<EmbeddingNet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint format version {version}")));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut shapes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let in_dim = r.read_u32::<LittleEndian>()? as usize;
        let out_dim = r.read_u32::<LittleEndian>()? as usize;
        let activation = match r.read_u32::<LittleEndian>()? {
            0 => Activation::Identity,
            1 => Activation::Relu,
            t => return Err(Error::Format(format!("unknown activation tag {t}"))),
        };
        shapes.push((in_dim, out_dim, activation));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (in_dim, out_dim, activation) in shapes {
        let mut weights = vec![0.0f32; in_dim * out_dim];
        r.read_f32_into::<LittleEndian>(&mut weights)?;
        let mut bias = vec![0.0f32; out_dim];
        r.read_f32_into::<LittleEndian>(&mut bias)?;
        layers.push(Dense::new(in_dim, out_dim, weights, bias, activation)?);
    }
    EmbeddingNet::new(layers)
}
