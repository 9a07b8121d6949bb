use std::path::Path;

use crate::error::{Error, IoContext, Result};

/// Float image with 1 or 3 interleaved channels, rows from the top.
#[derive(Clone, Debug, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PfmImage {
    pub fn to_bytes(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "PF" } else { "Pf" };
        let mut out = format!("{magic}\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        let row = self.width * self.channels;
        // PFM stores the bottom row first.
        for r in (0..self.height).rev() {
            for v in &self.data[r * row..(r + 1) * row] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PfmImage> {
        let mut pos = 0;
        let mut token = || -> Result<(String, u64)> {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::format(start as u64, "truncated PFM header"));
            }
            let s = std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| Error::format(start as u64, "non-ASCII PFM header"))?;
            Ok((s.to_string(), start as u64))
        };
        let (magic, _) = token()?;
        let channels = match magic.as_str() {
            "PF" => 3,
            "Pf" => 1,
            _ => return Err(Error::format(0, format!("bad PFM magic {magic:?}"))),
        };
        let mut number = |what: &str| -> Result<usize> {
            let (t, off) = token()?;
            t.parse().map_err(|_| Error::format(off, format!("bad PFM {what} {t:?}")))
        };
        let width = number("width")?;
        let height = number("height")?;
        let (scale, off) = token()?;
        let scale: f64 = scale
            .parse()
            .map_err(|_| Error::format(off, format!("bad PFM scale {scale:?}")))?;
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::format(off, "PFM scale must be nonzero"));
        }
        let little = scale < 0.0;
        // Exactly one whitespace byte separates the header from the raster.
        let start = pos + 1;
        let row = width * channels;
        let expect = row * height * 4;
        if bytes.len() < start || bytes.len() - start != expect {
            return Err(Error::format(
                start as u64,
                format!("PFM raster needs {expect} bytes, found {}", bytes.len().saturating_sub(start)),
            ));
        }
        let mut data = vec![0f32; row * height];
        for (i, chunk) in bytes[start..].chunks_exact(4).enumerate() {
            let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            let (file_row, col) = (i / row, i % row);
            data[(height - 1 - file_row) * row + col] = v;
        }
        Ok(PfmImage { width, height, channels, data })
    }
}

pub fn write_pfm(path: &Path, image: &PfmImage) -> Result<()> {
    if image.channels != 1 && image.channels != 3 {
        return Err(Error::invalid("PFM images have 1 or 3 channels"));
    }
    if image.data.len() != image.width * image.height * image.channels {
        return Err(Error::invalid("PFM data length does not match its size"));
    }
    std::fs::write(path, image.to_bytes()).at(path)
}

pub fn read_pfm(path: &Path) -> Result<PfmImage> {
    PfmImage::from_bytes(&std::fs::read(path).at(path)?)
}

/// Writes a binary (P4) bitmap; `true` pixels are black.
pub fn write_pbm(path: &Path, width: usize, height: usize, pixels: &[bool]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::invalid("PBM data length does not match its size"));
    }
    let mut out = format!("P4\n{width} {height}\n").into_bytes();
    for row in pixels.chunks(width.max(1)) {
        for byte in row.chunks(8) {
            let mut b = 0u8;
            for (i, &p) in byte.iter().enumerate() {
                b |= (p as u8) << (7 - i);
            }
            out.push(b);
        }
    }
    std::fs::write(path, out).at(path)
}

pub fn read_pbm(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let bytes = std::fs::read(path).at(path)?;
    if !bytes.starts_with(b"P4") {
        return Err(Error::format(0, "bad PBM magic"));
    }
    let mut pos = 2;
    let mut dims = [0usize; 2];
    for d in &mut dims {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *d = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start as u64, "bad PBM dimension"))?;
    }
    let [width, height] = dims;
    pos += 1;
    let stride = width.div_ceil(8);
    if bytes.len() < pos || bytes.len() - pos != stride * height {
        return Err(Error::format(pos as u64, "PBM raster has the wrong length"));
    }
    let mut pixels = Vec::with_capacity(width * height);
    for row in bytes[pos..].chunks(stride.max(1)).take(height) {
        for u in 0..width {
            pixels.push(row[u / 8] >> (7 - u % 8) & 1 == 1);
        }
    }
    Ok((width, height, pixels))
}
