//! IDX container format (the MNIST/EMNIST distribution format).
//!
//! Header: two zero bytes, a type code, the number of dimensions, then one
//! big-endian `u32` per dimension. Only unsigned-byte payloads are supported.

use std::io::Read;

use flate2::read::GzDecoder;

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

const UNSIGNED_BYTE: u8 = 0x08;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad IDX magic {0:#010x}")]
    Magic(u32),
    #[error("IDX data truncated: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },
    #[error("gzip stream is corrupt: {0}")]
    Gzip(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    let chunk = bytes.get(offset..offset + 4).ok_or(IdxError::Length {
        expected: offset + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
}

/// Parses an IDX buffer, transparently inflating gzip input.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray, IdxError> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|e| IdxError::Gzip(e.to_string()))?;
        return parse_idx(&raw);
    }
    let magic = read_u32(bytes, 0)?;
    let ndim = (magic & 0xff) as usize;
    if magic >> 16 != 0 || (magic >> 8) as u8 != UNSIGNED_BYTE || !(1..=3).contains(&ndim) {
        return Err(IdxError::Magic(magic));
    }
    let dims = (0..ndim)
        .map(|i| read_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let header = 4 + 4 * ndim;
    let payload: usize = dims.iter().product();
    let found = bytes.len() - header;
    if found != payload {
        return Err(IdxError::Length {
            expected: payload,
            found,
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..header + payload].to_vec(),
    })
}

/// Serialises an unsigned-byte IDX array (uncompressed).
pub fn write_idx(array: &IdxArray) -> Vec<u8> {
    let magic = ((UNSIGNED_BYTE as u32) << 8) | array.dims.len() as u32;
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn parses_label_fixture() {
        let a = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 2, 5, 7]).unwrap();
        assert_eq!(a.dims, vec![2]);
        assert_eq!(a.data, vec![5, 7]);
    }

    #[test]
    fn parses_image_fixture() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0x00, 0xFF, 0x7F, 0x01];
        let a = parse_idx(&bytes).unwrap();
        assert_eq!(a.dims, vec![1, 2, 2]);
        assert_eq!(a.data, vec![0, 255, 127, 1]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert_eq!(parse_idx(&[0, 0, 8, 0x99]), Err(IdxError::Magic(0x0000_0899)));
        assert_eq!(
            parse_idx(&[0, 0, 0x0D, 1, 0, 0, 0, 0]),
            Err(IdxError::Magic(0x0000_0D01))
        );
        assert_eq!(
            parse_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 1, 2]),
            Err(IdxError::Length { expected: 3, found: 2 })
        );
        assert!(matches!(parse_idx(&[0, 0, 8]), Err(IdxError::Length { .. })));
    }

    #[test]
    fn gzip_input_is_inflated() {
        let raw = write_idx(&IdxArray {
            dims: vec![3],
            data: vec![1, 2, 3],
        });
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(parse_idx(&gz).unwrap().data, vec![1, 2, 3]);
    }
}
