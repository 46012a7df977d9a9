//! The `ETN1` tensor container and PGM import/export.
//!
//! Layout: magic `ETN1`, one byte dtype (0 = f64), one byte rank, `rank`
//! little-endian u64 dimensions, then the row-major little-endian payload.

use std::fs;
use std::path::Path;

use crate::error::{BenchError, Result};

const MAGIC: &[u8; 4] = b"ETN1";
const DTYPE_F64: u8 = 0;

pub fn encode_tensor(shape: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    let expected: usize = shape.iter().product();
    if expected != data.len() || shape.len() > u8::MAX as usize {
        return Err(BenchError::Config(format!(
            "tensor of shape {shape:?} cannot hold {} values",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(6 + 8 * shape.len() + 8 * data.len());
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F64);
    out.push(shape.len() as u8);
    for d in shape {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bad = |m: &str| BenchError::format(path, m);
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(bad("not an ETN1 tensor file"));
    }
    if bytes[4] != DTYPE_F64 {
        return Err(bad(&format!("unsupported dtype code {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    let header = 6 + 8 * rank;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let shape: Vec<usize> = bytes[6..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .ok_or_else(|| bad("dimensions overflow"))?;
    if bytes.len() - header != count.checked_mul(8).ok_or_else(|| bad("dimensions overflow"))? {
        return Err(bad(&format!("payload holds {} bytes, shape {shape:?} needs {}", bytes.len() - header, 8 * count)));
    }
    let data = bytes[header..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((shape, data))
}

pub fn write_tensor(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    let bytes = encode_tensor(shape, data)?;
    fs::write(path, bytes).map_err(|e| BenchError::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| BenchError::io(path, e))?;
    decode_tensor(&bytes, path)
}

/// A grey-level image scaled to `[0, 1]` by its maxval.
#[derive(Debug, Clone, PartialEq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Parses binary (`P5`, 8- or 16-bit big-endian) and ASCII (`P2`) PGM.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<PgmImage> {
    let bad = |m: &str| BenchError::format(path, m);
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token().ok_or_else(|| bad("empty file"))?;
    let mut number = |what: &str| -> Result<usize> {
        token().and_then(|t| t.parse().ok()).ok_or_else(|| bad(&format!("missing or invalid {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval must be in 1..=65535"));
    }
    let n = width * height;
    let raw: Vec<usize> = match magic.as_str() {
        "P5" => {
            // exactly one whitespace byte separates the header from the raster
            let start = pos + 1;
            let bpp = if maxval < 256 { 1 } else { 2 };
            let body = bytes.get(start..start + n * bpp).ok_or_else(|| bad("truncated raster"))?;
            if bpp == 1 {
                body.iter().map(|b| *b as usize).collect()
            } else {
                body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as usize).collect()
            }
        }
        "P2" => (0..n).map(|_| number("pixel")).collect::<Result<_>>()?,
        other => return Err(bad(&format!("unsupported PGM variant {other}"))),
    };
    if raw.iter().any(|v| *v > maxval) {
        return Err(bad("pixel exceeds maxval"));
    }
    let data = raw.iter().map(|v| *v as f64 / maxval as f64).collect();
    Ok(PgmImage { width, height, data })
}

pub fn read_pgm(path: &Path) -> Result<PgmImage> {
    let bytes = fs::read(path).map_err(|e| BenchError::io(path, e))?;
    decode_pgm(&bytes, path)
}

/// 8-bit binary PGM; values are clipped to `[0, 1]`.
pub fn encode_pgm(width: usize, height: usize, data: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<()> {
    fs::write(path, encode_pgm(width, height, data)).map_err(|e| BenchError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_and_layout() {
        let bytes = encode_tensor(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, -0.5]).unwrap();
        assert_eq!(&bytes[..6], b"ETN1\x00\x02");
        assert_eq!(&bytes[6..14], &2u64.to_le_bytes());
        assert_eq!(&bytes[14..22], &3u64.to_le_bytes());
        assert_eq!(&bytes[22..30], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 22 + 48);
        let (shape, data) = decode_tensor(&bytes, Path::new("t")).unwrap();
        assert_eq!(shape, vec![2, 3]);
        assert_eq!(data[5], -0.5);
        let scalar = encode_tensor(&[], &[7.0]).unwrap();
        assert_eq!(decode_tensor(&scalar, Path::new("s")).unwrap(), (vec![], vec![7.0]));
    }

    #[test]
    fn tensor_rejects_corruption() {
        let p = Path::new("t");
        let bytes = encode_tensor(&[4], &[0.0; 4]).unwrap();
        assert!(decode_tensor(&bytes[..bytes.len() - 1], p).is_err());
        assert!(decode_tensor(b"ETN2\x00\x00", p).is_err());
        let mut wrong_dtype = bytes.clone();
        wrong_dtype[4] = 1;
        assert!(decode_tensor(&wrong_dtype, p).is_err());
        assert!(encode_tensor(&[3], &[0.0; 4]).is_err());
    }

    #[test]
    fn pgm_variants() {
        let p = Path::new("img.pgm");
        let img = decode_pgm(b"P5\n# comment\n2 1\n255\n\x00\xff", p).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.data, vec![0.0, 1.0]);
        let wide = decode_pgm(b"P5 1 1 65535\n\x80\x00", p).unwrap();
        assert!((wide.data[0] - 32768.0 / 65535.0).abs() < 1e-15);
        let ascii = decode_pgm(b"P2\n2 2\n4\n0 1\n2 4\n", p).unwrap();
        assert_eq!(ascii.data, vec![0.0, 0.25, 0.5, 1.0]);
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00", p).is_err());
        assert!(decode_pgm(b"P6\n1 1\n255\n\x00\x00\x00", p).is_err());
        let round = decode_pgm(&encode_pgm(2, 1, &[0.2, 1.3]), p).unwrap();
        assert_eq!(round.data[1], 1.0);
        assert!((round.data[0] - 51.0 / 255.0).abs() < 1e-15);
    }
}
