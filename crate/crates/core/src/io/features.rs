//! Binary feature files: `SSRNFEAT`, version, rows, cols, then row-major
//! little-endian `f32` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const FEATURE_MAGIC: &[u8; 8] = b"SSRNFEAT";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_features(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &x in m.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Parses a feature file image; `path` is only used in error messages.
pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Matrix> {
    if bytes.len() < 8 || &bytes[..8] != FEATURE_MAGIC {
        let found = &bytes[..bytes.len().min(8)];
        return Err(Error::Format {
            path: path.into(),
            expected: "magic SSRNFEAT".into(),
            found: format!("{:?}", String::from_utf8_lossy(found)),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length {
            path: path.into(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = read_u32(bytes, 8);
    if version != FEATURE_VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: version,
            supported: FEATURE_VERSION,
        });
    }
    let rows = read_u32(bytes, 12) as usize;
    let cols = read_u32(bytes, 16) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format {
            path: path.into(),
            expected: "addressable shape".into(),
            found: format!("{rows} x {cols}"),
        })?;
    if bytes.len() != expected {
        return Err(Error::Length {
            path: path.into(),
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn load_features(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

pub fn save_features(m: &Matrix, path: &Path) -> Result<()> {
    fs::write(path, encode_features(m)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_contract() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.5]]);
        let bytes = encode_features(&m);
        assert_eq!(bytes.len(), HEADER_LEN + 24);
        assert_eq!(decode_features(&bytes, Path::new("x")).unwrap(), m);
    }

    #[test]
    fn rejects_bad_magic_version_and_length() {
        let mut bytes = encode_features(&Matrix::ones(2, 2));
        let p = Path::new("f.feat");
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_features(&wrong, p), Err(Error::Format { .. })));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(decode_features(&v2, p), Err(Error::Version { found: 2, .. })));
        bytes.pop();
        assert!(matches!(
            decode_features(&bytes, p),
            Err(Error::Length { expected: 36, found: 35, .. })
        ));
        assert!(matches!(decode_features(b"SSRN", p), Err(Error::Format { .. })));
    }
}
