//! Checkpoint file format (little-endian):
//!
//! ```text
//! magic   "GZNT"            4 bytes
//! version u32 = 1
//! count   u32 (number of tensors)
//! per tensor:
//!   name_len u16, name UTF-8, rank u8, dims u32 x rank,
//!   payload: raw IEEE-754 f32 x product(dims)
//! crc32   u32 over every preceding byte
//! ```
//!
//! Round trips are bitwise exact. Loading validates magic, version, tensor
//! names and shapes against the published topology, and finally the CRC;
//! each failure mode is a distinct error.

use std::path::Path;

use thiserror::Error;

use crate::model::{GazeNet, NetDims, PARAM_NAMES};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GZNT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic: expected \"GZNT\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("version mismatch: expected {VERSION}, found {found}")]
    VersionMismatch { found: u32 },
    #[error("shape mismatch: tensor `{name}` expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("unexpected tensor: expected `{expected}`, found `{found}`")]
    UnexpectedTensor { expected: String, found: String },
    #[error("wrong tensor count: expected {expected}, found {found}")]
    TensorCount { expected: u32, found: u32 },
    #[error("truncated file while reading {what}")]
    Truncated { what: String },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("trailing data after checksum ({extra} bytes)")]
    TrailingData { extra: usize },
    #[error("invalid tensor name (not UTF-8)")]
    BadName,
}

// CRC-32 (IEEE 802.3, reflected, polynomial 0xEDB88320), as used by PNG
// and zip. Table built at compile time.
const CRC_TABLE: [u32; 256] = {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
};

pub fn crc32(bytes: &[u8]) -> u32 {
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = CRC_TABLE[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

/// Serialize the network to `path`. Always writes the ten parameter
/// tensors in the fixed conv1..fc3 order.
pub fn save(net: &GazeNet<f32>, path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::with_capacity(4 * net.param_count() + 256);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(PARAM_NAMES.len() as u32).to_le_bytes());
    for (name, tensor) in PARAM_NAMES.iter().zip(net.params()) {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, buf).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated { what: what.into() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Expected shapes of the published topology, in save order.
fn expected_shapes(dims: NetDims) -> [Vec<usize>; 10] {
    [
        vec![dims.conv1_ch, 3, 3, 3],
        vec![dims.conv1_ch],
        vec![dims.conv2_ch, dims.conv1_ch, 3, 3],
        vec![dims.conv2_ch],
        vec![dims.fc1_out, dims.flatten_len()],
        vec![dims.fc1_out],
        vec![dims.fc2_out, dims.fc1_out],
        vec![dims.fc2_out],
        vec![2, dims.fused_len()],
        vec![2],
    ]
}

/// Load a checkpoint saved by [`save`]. The tensor list must match the
/// published topology exactly.
pub fn load(path: &Path) -> Result<GazeNet<f32>, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic {
            found: magic.to_vec(),
        });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version });
    }
    let count = cur.u32("tensor count")?;
    if count != PARAM_NAMES.len() as u32 {
        return Err(CheckpointError::TensorCount {
            expected: PARAM_NAMES.len() as u32,
            found: count,
        });
    }

    let dims = NetDims::PAPER;
    let expected = expected_shapes(dims);
    let mut net = GazeNet::<f32>::zeroed(dims).expect("paper dims are valid");
    {
        let params = net.params_mut();
        for ((want_name, want_shape), slot) in
            PARAM_NAMES.iter().zip(&expected).zip(params)
        {
            let name_len = cur.u16("tensor name length")? as usize;
            let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
                .map_err(|_| CheckpointError::BadName)?;
            if name != *want_name {
                return Err(CheckpointError::UnexpectedTensor {
                    expected: want_name.to_string(),
                    found: name.to_string(),
                });
            }
            let rank = cur.take(1, "tensor rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u32("tensor dimension")? as usize);
            }
            if &shape != want_shape {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    expected: want_shape.clone(),
                    found: shape,
                });
            }
            let len: usize = shape.iter().product();
            let payload = cur.take(len * 4, &format!("payload of `{name}`"))?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            *slot = Tensor::from_vec(&shape, data).unwrap();
        }
    }

    let body_end = cur.pos;
    let stored = cur.u32("checksum")?;
    if cur.pos != bytes.len() {
        return Err(CheckpointError::TrailingData {
            extra: bytes.len() - cur.pos,
        });
    }
    let computed = crc32(&bytes[..body_end]);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }
    Ok(net)
}
