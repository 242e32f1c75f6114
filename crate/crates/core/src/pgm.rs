//! Netpbm reading and writing.
//!
//! Binary and ASCII graymaps (P5/P2) are the primary input format. Pixmaps
//! (P6/P3) are accepted and reduced to luminance with 0.299/0.587/0.114.
//! Samples with maxval other than 255 are rescaled to 0..=255.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// A decoded grayscale image, row-major, one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

pub fn read(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|reason| Error::BadImage {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn write(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::dims(format!(
            "pgm buffer has {} bytes for {width}x{height}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(data.len() + 20);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.extend_from_slice(data);
    fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            let c = self.buf[self.pos];
            if c == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize, String> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("expected a number at byte {start}"));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|e| format!("{e}"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<GrayImage, String> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err("not a netpbm file".into());
    }
    let kind = bytes[1];
    let channels = match kind {
        b'2' | b'5' => 1,
        b'3' | b'6' => 3,
        _ => return Err(format!("unsupported netpbm kind P{}", kind as char)),
    };
    let mut cur = Cursor { buf: bytes, pos: 2 };
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval = cur.number()?;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("invalid maxval {maxval}"));
    }
    let n = width * height * channels;
    let samples: Vec<u32> = if kind == b'5' || kind == b'6' {
        // exactly one whitespace byte separates the header from the raster
        let start = cur.pos + 1;
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        if bytes.len() < start + need {
            return Err(format!(
                "truncated raster: need {need} bytes, have {}",
                bytes.len().saturating_sub(start)
            ));
        }
        let raster = &bytes[start..start + need];
        if wide {
            raster
                .chunks_exact(2)
                .map(|p| u32::from(u16::from_be_bytes([p[0], p[1]])))
                .collect()
        } else {
            raster.iter().map(|&b| u32::from(b)).collect()
        }
    } else {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(cur.number()? as u32);
        }
        v
    };
    if samples.iter().any(|&s| s as usize > maxval) {
        return Err("sample exceeds maxval".into());
    }
    let scale = 255.0 / maxval as f64;
    let data = if channels == 1 {
        samples
            .iter()
            .map(|&s| {
                if maxval == 255 {
                    s as u8
                } else {
                    (s as f64 * scale).round() as u8
                }
            })
            .collect()
    } else {
        samples
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                (y * scale).round().clamp(0.0, 255.0) as u8
            })
            .collect()
    };
    Ok(GrayImage {
        width,
        height,
        data,
    })
}
