//! Image and frame file formats: binary PGM (P5, 8 and 16 bit) and the raw
//! `ELUM` float container for luminance sequences.
//!
//! `ELUM` layout: 16-byte header `b"ELUM"`, `width: u32`, `height: u32`,
//! `count: u32` (little-endian), then `count` row-major planes of
//! `width * height` little-endian `f32`.

use crate::error::{Error, Result};
use crate::render::{LabelMask, LuminanceFrame};

pub const ELUM_MAGIC: &[u8; 4] = b"ELUM";

pub fn write_pgm8(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// 16-bit PGM; samples are big-endian as the format requires.
pub fn write_pgm16(width: usize, height: usize, pixels: &[u16]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &p in pixels {
        out.extend_from_slice(&p.to_be_bytes());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

/// Reads a binary PGM with either sample depth. Comments in the header are
/// not supported.
pub fn read_pgm(bytes: &[u8]) -> Result<Pgm> {
    let bad = |r: &str| Error::Format(format!("pgm: {r}"));
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::BadMagic {
            expected: "P5".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
        });
    }
    // Three whitespace-separated header numbers follow the magic, then one
    // whitespace byte.
    let mut pos = 2;
    let mut nums = [0usize; 3];
    for n in &mut nums {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *n = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header"))?;
    }
    pos += 1;
    let [width, height, maxval] = nums;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("bad maxval"));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let needed = pos + width * height * bps;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    let data = &bytes[pos..needed];
    let samples = if bps == 1 {
        data.iter().map(|&b| b as u16).collect()
    } else {
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn mask_to_pgm(mask: &LabelMask) -> Vec<u8> {
    write_pgm16(mask.width, mask.height, &mask.labels)
}

pub fn mask_from_pgm(bytes: &[u8], timestamp: f64) -> Result<LabelMask> {
    let pgm = read_pgm(bytes)?;
    Ok(LabelMask {
        width: pgm.width,
        height: pgm.height,
        timestamp,
        labels: pgm.samples,
    })
}

pub fn write_elum(frames: &[LuminanceFrame]) -> Vec<u8> {
    let (w, h) = frames.first().map_or((0, 0), |f| (f.width, f.height));
    let mut out = Vec::with_capacity(16 + 4 * w * h * frames.len());
    out.extend_from_slice(ELUM_MAGIC);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for f in frames {
        assert_eq!((f.width, f.height), (w, h), "mixed frame sizes");
        for &p in &f.pixels {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out
}

/// Reads an `ELUM` file. Timestamps are not stored; frame `k` gets
/// `timestamps(k)`.
pub fn read_elum(bytes: &[u8], timestamps: impl Fn(usize) -> f64) -> Result<Vec<LuminanceFrame>> {
    if bytes.len() < 4 || &bytes[..4] != ELUM_MAGIC {
        return Err(Error::BadMagic {
            expected: "ELUM".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            needed: 16,
            available: bytes.len(),
        });
    }
    let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let (w, h, n) = (u32_at(4) as usize, u32_at(8) as usize, u32_at(12) as usize);
    let plane = w * h;
    let needed = 16 + 4 * plane * n;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok((0..n)
        .map(|k| {
            let start = 16 + 4 * plane * k;
            let pixels = bytes[start..start + 4 * plane]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            LuminanceFrame {
                width: w,
                height: h,
                timestamp: timestamps(k),
                pixels,
            }
        })
        .collect())
}
