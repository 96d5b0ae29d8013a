//! Binary greyscale PGM (`P5`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Encode a `[1, H, W]` frame with values in `[0, 1]` as 8-bit P5.
pub fn encode_pgm(frame: &Tensor) -> Vec<u8> {
    let s = frame.shape();
    assert!(s.len() == 3 && s[0] == 1, "encode_pgm expects [1, H, W], got {s:?}");
    let mut out = format!("P5\n{} {}\n255\n", s[2], s[1]).into_bytes();
    out.extend(frame.data().iter().map(|&v| quantize(v)));
    out
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decode P5 with any maxval up to 65535 into `[1, H, W]` values in `[0, 1]`.
pub fn decode_pgm(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let fail = |msg: &str| Error::format(origin, msg.to_string());
    let mut pos = 0;
    let mut token = || -> Option<&[u8]> {
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
        (pos > start).then(|| &bytes[start..pos])
    };
    if token() != Some(b"P5") {
        return Err(fail("not a binary PGM (missing P5 magic)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| fail(&format!("malformed header: bad {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(fail("malformed header: zero size or maxval out of range"));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = &bytes[(pos + 1).min(bytes.len())..];
    let n = width * height;
    let data: Vec<f64> = if maxval < 256 {
        if raster.len() < n {
            return Err(fail("truncated raster"));
        }
        raster[..n].iter().map(|&b| b as f64 / maxval as f64).collect()
    } else {
        if raster.len() < 2 * n {
            return Err(fail("truncated raster"));
        }
        raster[..2 * n]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / maxval as f64)
            .collect()
    };
    if data.iter().any(|&v| v > 1.0) {
        return Err(fail("sample exceeds maxval"));
    }
    Tensor::new([1, height, width], data)
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn write_pgm(path: &Path, frame: &Tensor) -> Result<()> {
    fs::write(path, encode_pgm(frame)).map_err(|e| Error::io(path, e))
}
