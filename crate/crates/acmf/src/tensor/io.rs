//! The `ACMF-TENSOR v1` on-disk format.
//!
//! ASCII header, then raw little-endian scalars in row-major order:
//!
//! ```text
//! ACMF-TENSOR v1
//! dtype=f32
//! shape=1 64 64
//!
//! <raw bytes>
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{DType, Scalar, Tensor};

pub const TENSOR_MAGIC: &str = "ACMF-TENSOR v1";

#[derive(Debug, thiserror::Error)]
pub enum TensorIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic line {found:?}, expected {TENSOR_MAGIC:?}")]
    BadMagic { found: String },
    #[error("malformed header line {line:?}")]
    BadHeader { line: String },
    #[error("dtype mismatch: file holds {found}, caller expects {expected}")]
    DtypeMismatch { found: String, expected: &'static str },
    #[error("file truncated: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing bytes after payload: expected {expected} bytes, found {found}")]
    TrailingBytes { expected: usize, found: usize },
    #[error("invalid tensor: {0}")]
    Invalid(#[from] super::TensorError),
}

pub fn encode_tensor<E: Scalar>(tensor: &Tensor<E>) -> Vec<u8> {
    let shape_line = tensor
        .shape()
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let mut out = format!("{TENSOR_MAGIC}\ndtype={}\nshape={shape_line}\n\n", E::DTYPE.name()).into_bytes();
    out.reserve(tensor.numel() * E::DTYPE.byte_size());
    for &v in tensor.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn decode_tensor<E: Scalar>(bytes: &[u8]) -> Result<Tensor<E>, TensorIoError> {
    let mut pos = 0usize;
    let mut next_line = || -> Result<String, TensorIoError> {
        let rest = &bytes[pos.min(bytes.len())..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| TensorIoError::BadHeader {
            line: String::from_utf8_lossy(&rest[..rest.len().min(40)]).into_owned(),
        })?;
        let line = String::from_utf8_lossy(&rest[..end]).into_owned();
        pos += end + 1;
        Ok(line)
    };

    let magic = next_line()?;
    if magic != TENSOR_MAGIC {
        return Err(TensorIoError::BadMagic { found: magic });
    }
    let dtype_line = next_line()?;
    let dtype = dtype_line
        .strip_prefix("dtype=")
        .ok_or_else(|| TensorIoError::BadHeader { line: dtype_line.clone() })?;
    if dtype != E::DTYPE.name() {
        return Err(TensorIoError::DtypeMismatch { found: dtype.to_string(), expected: E::DTYPE.name() });
    }
    let shape_line = next_line()?;
    let shape_str = shape_line
        .strip_prefix("shape=")
        .ok_or_else(|| TensorIoError::BadHeader { line: shape_line.clone() })?;
    let shape: Vec<usize> = shape_str
        .split_whitespace()
        .map(|tok| tok.parse::<usize>().map_err(|_| TensorIoError::BadHeader { line: shape_line.clone() }))
        .collect::<Result<_, _>>()?;
    let blank = next_line()?;
    if !blank.is_empty() {
        return Err(TensorIoError::BadHeader { line: blank });
    }

    let numel: usize = shape.iter().product();
    let width = E::DTYPE.byte_size();
    let payload = &bytes[pos..];
    if payload.len() < numel * width {
        return Err(TensorIoError::Truncated { expected: numel * width, found: payload.len() });
    }
    if payload.len() > numel * width {
        return Err(TensorIoError::TrailingBytes { expected: numel * width, found: payload.len() });
    }
    let data: Vec<E> = payload.chunks_exact(width).map(E::read_le).collect();
    Ok(Tensor::new(&shape, data)?)
}

pub fn write_tensor<E: Scalar>(tensor: &Tensor<E>, path: &Path) -> Result<(), TensorIoError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&encode_tensor(tensor))?;
    Ok(())
}

pub fn read_tensor<E: Scalar>(path: &Path) -> Result<Tensor<E>, TensorIoError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_tensor(&bytes)
}

/// Dtype recorded in a tensor file, without decoding the payload.
pub fn peek_dtype(bytes: &[u8]) -> Option<DType> {
    let text = std::str::from_utf8(bytes.get(..bytes.len().min(64))?).ok()?;
    let mut lines = text.lines();
    if lines.next()? != TENSOR_MAGIC {
        return None;
    }
    match lines.next()?.strip_prefix("dtype=")? {
        "f32" => Some(DType::F32),
        "f64" => Some(DType::F64),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_f32_and_f64() {
        let t32 = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32 * 0.5 - 1.0);
        let t64 = Tensor::<f64>::from_fn(&[4], |i| (i as f64).sqrt());
        assert_eq!(decode_tensor::<f32>(&encode_tensor(&t32)).unwrap(), t32);
        assert_eq!(decode_tensor::<f64>(&encode_tensor(&t64)).unwrap(), t64);
    }

    #[test]
    fn header_is_ascii_and_exact() {
        let t = Tensor::<f32>::zeros(&[1, 4, 4]);
        let bytes = encode_tensor(&t);
        let header = b"ACMF-TENSOR v1\ndtype=f32\nshape=1 4 4\n\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 16 * 4);
    }

    #[test]
    fn truncated_payload_rejected() {
        let t = Tensor::<f32>::zeros(&[8]);
        let mut bytes = encode_tensor(&t);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(decode_tensor::<f32>(&bytes), Err(TensorIoError::Truncated { .. })));
    }

    #[test]
    fn wrong_magic_rejected() {
        let t = Tensor::<f32>::zeros(&[1]);
        let mut bytes = encode_tensor(&t);
        bytes[0] = b'X';
        assert!(matches!(decode_tensor::<f32>(&bytes), Err(TensorIoError::BadMagic { .. })));
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let t = Tensor::<f64>::zeros(&[2]);
        let bytes = encode_tensor(&t);
        assert!(matches!(
            decode_tensor::<f32>(&bytes),
            Err(TensorIoError::DtypeMismatch { .. })
        ));
        assert_eq!(peek_dtype(&bytes), Some(super::super::DType::F64));
    }
}
