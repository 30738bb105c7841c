//! The EDTF tensor file format.
//!
//! Layout: 4-byte magic `EDTF`, u32 version (= 1), u8 dtype (0 = f32,
//! 1 = f64), u32 ndim, ndim x u64 dims, then the row-major payload.
//! All integers and floats little-endian.

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"EDTF";
const VERSION: u32 = 1;

pub fn to_bytes<F: Scalar>(t: &Tensor<F>) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + t.shape().len() * 8 + t.numel() * F::DTYPE.size_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(F::DTYPE.code());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match F::DTYPE {
        Dtype::F32 => {
            for &x in t.data() {
                out.extend_from_slice(&(x.f64() as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &x in t.data() {
                out.extend_from_slice(&x.f64().to_le_bytes());
            }
        }
    }
    out
}

/// Parses an EDTF byte stream; payload of either dtype is converted to
/// the requested element type.
pub fn from_bytes<F: Scalar>(bytes: &[u8]) -> Result<Tensor<F>> {
    let fail = |msg: &str| Error::Data(format!("EDTF: {msg}"));
    if bytes.len() < 13 || &bytes[0..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let dtype = Dtype::from_code(bytes[8]).ok_or_else(|| fail("unknown dtype"))?;
    let ndim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let mut pos = 13;
    if bytes.len() < pos + ndim * 8 {
        return Err(fail("truncated dims"));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize);
        pos += 8;
    }
    let numel: usize = shape.iter().product();
    let need = numel * dtype.size_bytes();
    if bytes.len() != pos + need {
        return Err(fail(&format!(
            "payload size mismatch: expected {need} bytes, got {}",
            bytes.len() - pos
        )));
    }
    let mut data = Vec::with_capacity(numel);
    match dtype {
        Dtype::F32 => {
            for c in bytes[pos..].chunks_exact(4) {
                data.push(F::of(f32::from_le_bytes(c.try_into().unwrap()) as f64));
            }
        }
        Dtype::F64 => {
            for c in bytes[pos..].chunks_exact(8) {
                data.push(F::of(f64::from_le_bytes(c.try_into().unwrap())));
            }
        }
    }
    Tensor::from_vec(shape, data)
}

pub fn write_tensor<F: Scalar>(path: &Path, t: &Tensor<F>) -> Result<()> {
    let bytes = to_bytes(t);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_tensor<F: Scalar>(path: &Path) -> Result<Tensor<F>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}
