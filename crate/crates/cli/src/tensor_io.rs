//! Binary tensor file format:
//!
//! ```text
//! magic   4 bytes ASCII "STEM"
//! version u32 LE, currently 1
//! dtype   u32 LE, 1 = 32-bit float
//! ndim    u32 LE
//! dims    ndim x u64 LE
//! payload row-major f32 LE, 4 * prod(dims) bytes
//! ```
//!
//! Write followed by read is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{io_err, CliError, Result};

pub const MAGIC: [u8; 4] = *b"STEM";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;

/// A tensor as stored on disk: dimensions plus the flat row-major payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(CliError::Config(format!(
                "tensor payload has {} elements but dims {:?} require {}",
                data.len(),
                dims,
                expected
            )));
        }
        Ok(Self { dims, data })
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(DTYPE_F32)?;
        w.write_u32::<LittleEndian>(tensor.dims.len() as u32)?;
        for &d in &tensor.dims {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        for &v in &tensor.data {
            w.write_f32::<LittleEndian>(v)?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if magic != MAGIC {
        return Err(CliError::BadMagic { path: path.to_path_buf(), found: magic });
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err(path))?;
    if version != VERSION {
        return Err(CliError::BadVersion { path: path.to_path_buf(), found: version });
    }
    let dtype = r.read_u32::<LittleEndian>().map_err(io_err(path))?;
    if dtype != DTYPE_F32 {
        return Err(CliError::BadDtype { path: path.to_path_buf(), found: dtype });
    }
    let ndim = r.read_u32::<LittleEndian>().map_err(io_err(path))? as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(r.read_u64::<LittleEndian>().map_err(io_err(path))? as usize);
    }
    let count: usize = dims.iter().product();
    let expected_bytes = 4 * count as u64;
    let mut payload = vec![0u8; count * 4];
    let mut filled = 0usize;
    while filled < payload.len() {
        match r.read(&mut payload[filled..]).map_err(io_err(path))? {
            0 => {
                return Err(CliError::Truncated {
                    path: path.to_path_buf(),
                    expected: expected_bytes,
                    actual: filled as u64,
                })
            }
            n => filled += n,
        }
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::new(dims, data)
}

/// Interprets a stored tensor as a feature map. Accepts 4-D (N,H,W,C)
/// directly or 2-D (M,C) as M single-pixel frames.
pub fn tensor_to_feature_map(t: &Tensor) -> Result<stem_core::FeatureMap> {
    match t.dims.as_slice() {
        [n, h, w, c] => Ok(stem_core::FeatureMap::new(*n, *h, *w, *c, t.data.clone())?),
        [m, c] => Ok(stem_core::FeatureMap::new(*m, 1, 1, *c, t.data.clone())?),
        other => Err(CliError::Config(format!(
            "expected a 4-D (N,H,W,C) or 2-D (M,C) tensor, got dims {other:?}"
        ))),
    }
}

/// Interprets a stored 4-D (N-1,H,W,2) tensor as a flow field.
pub fn tensor_to_flow(t: &Tensor) -> Result<stem_core::FlowField> {
    match t.dims.as_slice() {
        [pairs, h, w, 2] => Ok(stem_core::FlowField::new(*pairs, *h, *w, t.data.clone())?),
        other => Err(CliError::Config(format!(
            "expected a (N-1,H,W,2) flow tensor, got dims {other:?}"
        ))),
    }
}

pub fn feature_map_to_tensor(fm: &stem_core::FeatureMap) -> Tensor {
    Tensor {
        dims: vec![fm.frames(), fm.height(), fm.width(), fm.channels()],
        data: fm.data().to_vec(),
    }
}

pub fn matrix_to_tensor(m: &stem_core::Matrix) -> Tensor {
    Tensor { dims: vec![m.rows(), m.cols()], data: m.data().to_vec() }
}
