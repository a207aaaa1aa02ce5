//! Codebook persistence.
//!
//! Binary container, all fields little-endian:
//!
//! ```text
//! magic        4 bytes  "SQCB"
//! version      u32      format version (currently 1)
//! M            u32      subspaces
//! K            u32      codewords per subspace
//! sub_dim      u32      dimensions per subspace
//! codewords    f32 * M*K*sub_dim, row-major [m][k][j]
//! ```
//!
//! [`CodebookDump`] is the JSON form used for debugging.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::Codebook;
use crate::error::{Error, Result};

pub const CODEBOOK_MAGIC: [u8; 4] = *b"SQCB";
pub const CODEBOOK_FORMAT_VERSION: u32 = 1;

pub fn write_codebook<W: Write>(cb: &Codebook, mut w: W) -> Result<()> {
    w.write_all(&CODEBOOK_MAGIC)?;
    w.write_u32::<LittleEndian>(CODEBOOK_FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(cb.num_subspaces() as u32)?;
    w.write_u32::<LittleEndian>(cb.num_codewords() as u32)?;
    w.write_u32::<LittleEndian>(cb.sub_dim() as u32)?;
    for &v in cb.raw() {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_codebook<R: Read>(mut r: R) -> Result<Codebook> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CODEBOOK_MAGIC {
        return Err(Error::Format(format!("bad codebook magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CODEBOOK_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported codebook format version {version}")));
    }
    let m = r.read_u32::<LittleEndian>()? as usize;
    let k = r.read_u32::<LittleEndian>()? as usize;
    let sub_dim = r.read_u32::<LittleEndian>()? as usize;
    let len = m
        .checked_mul(k)
        .and_then(|v| v.checked_mul(sub_dim))
        .ok_or_else(|| Error::Format("codebook shape overflows".into()))?;
    let mut codewords = vec![0.0f32; len];
    r.read_f32_into::<LittleEndian>(&mut codewords)?;
    Codebook::new(m, k, sub_dim, codewords)
}

/// Human-readable codebook dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookDump {
    pub num_subspaces: usize,
    pub num_codewords: usize,
    pub sub_dim: usize,
    pub version: u64,
    /// `codewords[m][k]` is one sub-vector.
    pub codewords: Vec<Vec<Vec<f32>>>,
}

impl From<&Codebook> for CodebookDump {
    fn from(cb: &Codebook) -> Self {
        let codewords = (0..cb.num_subspaces())
            .map(|m| {
                (0..cb.num_codewords())
                    .map(|k| cb.codeword(m, k).to_vec())
                    .collect()
            })
            .collect();
        Self {
            num_subspaces: cb.num_subspaces(),
            num_codewords: cb.num_codewords(),
            sub_dim: cb.sub_dim(),
            version: cb.version(),
            codewords,
        }
    }
}

impl TryFrom<CodebookDump> for Codebook {
    type Error = Error;

    fn try_from(dump: CodebookDump) -> Result<Self> {
        let cb = Codebook::from_nested(&dump.codewords)?;
        if cb.num_subspaces() != dump.num_subspaces
            || cb.num_codewords() != dump.num_codewords
            || cb.sub_dim() != dump.sub_dim
        {
            return Err(Error::Format("codebook dump shape disagrees with its codewords".into()));
        }
        Ok(cb.with_version(dump.version))
    }
}
