//! Binary tensor container.
//!
//! Layout: magic `LSG1`, `u8` rank, `rank` little-endian `u32` extents, then the
//! elements as little-endian `f64` in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorcore::Tensor;

pub const MAGIC: &[u8; 4] = b"LSG1";
pub const MAX_RANK: usize = 8;

pub fn encode_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    if t.rank() > MAX_RANK {
        return Err(Error::Format {
            field: "rank",
            msg: format!("rank {} exceeds {MAX_RANK}", t.rank()),
        });
    }
    let mut out = Vec::with_capacity(5 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(t.rank() as u8);
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| Error::Format {
            field: "extents",
            msg: format!("extent {e} does not fit in u32"),
        })?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    Ok(out)
}

fn take<'b>(bytes: &mut &'b [u8], n: usize, field: &'static str) -> Result<&'b [u8]> {
    if bytes.len() < n {
        return Err(Error::Format {
            field,
            msg: format!("truncated: need {n} bytes, {} left", bytes.len()),
        });
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode_tensor<T: Scalar>(mut bytes: &[u8]) -> Result<Tensor<T>> {
    let magic = take(&mut bytes, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            field: "magic",
            msg: format!("expected {MAGIC:?}, found {magic:?}"),
        });
    }
    let rank = take(&mut bytes, 1, "rank")?[0] as usize;
    if rank > MAX_RANK {
        return Err(Error::Format {
            field: "rank",
            msg: format!("rank {rank} exceeds {MAX_RANK}"),
        });
    }
    let shape: Vec<usize> = take(&mut bytes, 4 * rank, "extents")?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
        .collect();
    let n = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e)).ok_or(Error::Format {
        field: "extents",
        msg: "element count overflows".into(),
    })?;
    let need = n.checked_mul(8).ok_or(Error::Format {
        field: "extents",
        msg: "byte count overflows".into(),
    })?;
    let body = take(&mut bytes, need, "data")?;
    if !bytes.is_empty() {
        return Err(Error::Format {
            field: "data",
            msg: format!("{} trailing bytes", bytes.len()),
        });
    }
    let data: Vec<T> = body
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::Format {
        field: "data",
        msg: e.to_string(),
    })
}

pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}
