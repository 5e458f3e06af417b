//! Portable graymap files: binary (P5) and plain (P2) on read, binary on write.

use std::fs;
use std::path::Path;

use crate::error::{CpscError, Result};
use crate::patch::ImagePlane;

pub fn decode_pgm(bytes: &[u8]) -> Result<ImagePlane> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    let binary = match magic.as_slice() {
        b"P5" => true,
        b"P2" => false,
        _ => return Err(CpscError::format("PGM", "missing P5/P2 magic")),
    };
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(CpscError::format("PGM", "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(CpscError::format("PGM", format!("maxval {maxval} out of range")));
    }
    let n = width * height;
    let data = if binary {
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        let raster = bytes
            .get(pos..pos + need)
            .ok_or_else(|| CpscError::format("PGM", format!("raster truncated, expected {need} bytes")))?;
        if wide {
            raster.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f64).collect()
        } else {
            raster.iter().map(|&b| b as f64).collect()
        }
    } else {
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let v = header_number(bytes, &mut pos, "sample")?;
            if v > maxval {
                return Err(CpscError::format("PGM", format!("sample {v} exceeds maxval {maxval}")));
            }
            values.push(v as f64);
        }
        values
    };
    // rescale to the 8-bit range so PSNR peaks stay comparable
    let data = if maxval == 255 {
        data
    } else {
        data.into_iter().map(|v| v * 255.0 / maxval as f64).collect()
    };
    ImagePlane::new(width, height, data)
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<Vec<u8>> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&c) = bytes.get(*pos) {
                    *pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            }
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(CpscError::format("PGM", "unexpected end of header")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|c| !c.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(bytes[start..*pos].to_vec())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    std::str::from_utf8(&tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CpscError::format("PGM", format!("bad {what}")))
}

/// 8-bit binary PGM; samples are rounded and clamped to `[0, 255]`.
pub fn encode_pgm(img: &ImagePlane) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CpscError::from(e).context(format!("reading {}", path.display())))?;
    decode_pgm(&bytes).map_err(|e| e.context(path.display().to_string()))
}

pub fn write_pgm(path: impl AsRef<Path>, img: &ImagePlane) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}
