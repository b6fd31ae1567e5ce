//! Binary PPM (P6) frames, 8 bits per channel.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

/// Encodes a `(1, 3, H, W)` tensor with values in `[0, 1]`.
pub fn ppm_bytes(frame: &Tensor) -> Result<Vec<u8>> {
    let [n, c, h, w] = frame.shape();
    if n != 1 || c != 3 {
        return Err(Error::dims("ppm frame", &frame.shape(), &[1, 3, h, w]));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for i in 0..h * w {
        for ch in 0..3 {
            out.push((frame.plane(0, ch)[i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_ppm(path: &Path, frame: &Tensor) -> Result<()> {
    fs::write(path, ppm_bytes(frame)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn parse_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
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
        if start == pos {
            return Err(Error::format("ppm", "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(Error::format("ppm", "expected P6 magic"));
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| Error::format("ppm", format!("bad number {s:?}")));
    let w = num(token()?)?;
    let h = num(token()?)?;
    let max = num(token()?)?;
    if max != 255 {
        return Err(Error::format("ppm", format!("unsupported max value {max}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes
        .get(pos..pos + 3 * w * h)
        .ok_or_else(|| Error::format("ppm", "raster shorter than header claims"))?;
    Ok(Tensor::from_fn([1, 3, h, w], |_, c, y, x| raster[3 * (y * w + x) + c] as f32 / 255.0))
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_ppm(&bytes)
}
