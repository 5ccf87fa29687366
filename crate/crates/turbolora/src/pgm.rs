//! Binary PGM (P5) reading and writing, maxval 255 only.

use std::fs;
use std::io;
use std::path::Path;

use crate::codec::ImageMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a binary PGM: magic is {0:?}, expected \"P5\"")]
    BadMagic(String),
    #[error("unsupported maxval {0}, only 255 is handled")]
    UnsupportedMaxval(u32),
    #[error("header ended before {0}")]
    TruncatedHeader(&'static str),
    #[error("invalid {field} value")]
    BadHeaderValue { field: &'static str },
    #[error("image declares {expected} pixels but file carries {got}")]
    TruncatedPixels { expected: usize, got: usize },
    #[error("zero image dimension in header")]
    ZeroDimension,
    #[error(transparent)]
    Shape(#[from] crate::codec::CodecError),
}

/// Pull the next whitespace-delimited token, skipping '#' comments that run
/// to end of line.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

fn parse_u32(token: &[u8], field: &'static str) -> Result<u32, PgmError> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(PgmError::BadHeaderValue { field })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<ImageMatrix, PgmError> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos).ok_or(PgmError::TruncatedHeader("magic"))?;
    if magic != b"P5" {
        return Err(PgmError::BadMagic(String::from_utf8_lossy(magic).into_owned()));
    }
    let cols = parse_u32(
        next_token(bytes, &mut pos).ok_or(PgmError::TruncatedHeader("width"))?,
        "width",
    )? as usize;
    let rows = parse_u32(
        next_token(bytes, &mut pos).ok_or(PgmError::TruncatedHeader("height"))?,
        "height",
    )? as usize;
    let maxval = parse_u32(
        next_token(bytes, &mut pos).ok_or(PgmError::TruncatedHeader("maxval"))?,
        "maxval",
    )?;
    if maxval != 255 {
        return Err(PgmError::UnsupportedMaxval(maxval));
    }
    if rows == 0 || cols == 0 {
        return Err(PgmError::ZeroDimension);
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let expected = rows * cols;
    let got = bytes.len().saturating_sub(pos);
    if got < expected {
        return Err(PgmError::TruncatedPixels { expected, got });
    }
    Ok(ImageMatrix::new(rows, cols, bytes[pos..pos + expected].to_vec())?)
}

pub fn encode_pgm(image: &ImageMatrix) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.cols(), image.rows()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}

pub fn read_pgm(path: &Path) -> Result<ImageMatrix, PgmError> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: &Path, image: &ImageMatrix) -> Result<(), PgmError> {
    Ok(fs::write(path, encode_pgm(image))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_bytes() {
        let img = ImageMatrix::new(2, 3, vec![0, 10, 20, 30, 40, 250]).unwrap();
        let bytes = encode_pgm(&img);
        assert_eq!(&bytes[..9], b"P5\n3 2\n25");
        assert_eq!(bytes, b"P5\n3 2\n255\n\x00\x0a\x14\x1e\x28\xfa");
    }

    #[test]
    fn round_trip() {
        let img = ImageMatrix::new(4, 5, (0u8..20).collect()).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn accepts_comments_and_flexible_whitespace() {
        let bytes = b"P5 # binary pgm\n# another comment\n 2\t2 # dims\n255\n\x01\x02\x03\x04";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!((img.rows(), img.cols()), (2, 2));
        assert_eq!(img.pixels(), &[1, 2, 3, 4]);
    }

    #[test]
    fn rejects_wrong_magic_and_maxval() {
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n0"), Err(PgmError::BadMagic(_))));
        assert!(matches!(
            decode_pgm(b"P5\n1 1\n65535\n\x00\x00"),
            Err(PgmError::UnsupportedMaxval(65535))
        ));
    }

    #[test]
    fn rejects_truncated_raster() {
        let err = decode_pgm(b"P5\n2 2\n255\n\x01\x02").unwrap_err();
        assert!(matches!(err, PgmError::TruncatedPixels { expected: 4, got: 2 }));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = ImageMatrix::new(3, 3, vec![9; 9]).unwrap();
        write_pgm(&path, &img).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
    }
}
