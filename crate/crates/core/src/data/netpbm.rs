//! Binary PGM (P5, one channel) and PPM (P6, three channels), maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Encodes an `H × W × C` image with values in `[0, 1]` (C = 1 → P5, C = 3 → P6).
pub fn encode_pnm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let shape = image.shape();
    if shape.len() != 3 || !(shape[2] == 1 || shape[2] == 3) {
        return Err(Error::Format(format!(
            "netpbm needs an H x W x 1 or H x W x 3 image, got {shape:?}"
        )));
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(image.len());
    out.extend(image.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("malformed header: missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("malformed header: bad {what}")))
    }
}

/// Decodes a binary P5/P6 file into an `H × W × C` image in `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 2 {
        return Err(Error::Format("file too short for a netpbm header".into()));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::Format(format!(
                "unsupported netpbm magic {:?} (only binary P5/P6)",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval} (only 255)")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::Format("malformed header: no separator before payload".into())),
    }
    let n = width * height * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < n {
        return Err(Error::Format(format!(
            "truncated payload: {} of {n} bytes",
            payload.len()
        )));
    }
    let data = payload[..n].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(&[height, width, channels], data)
}

pub fn write_pnm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_pnm(image)?)?;
    Ok(())
}

pub fn read_pnm(path: &Path) -> Result<Tensor<f32>> {
    decode_pnm(&fs::read(path)?)
}

/// Binary mask (`H × W`, nonzero = set) as a P5 image with values 0/255.
pub fn encode_mask(mask: &[u8], height: usize, width: usize) -> Result<Vec<u8>> {
    let img = Tensor::new(
        &[height, width, 1],
        mask.iter().map(|&m| if m != 0 { 1.0 } else { 0.0 }).collect(),
    )?;
    encode_pnm(&img)
}

pub fn decode_mask(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize)> {
    let img = decode_pnm(bytes)?;
    let (h, w) = (img.shape()[0], img.shape()[1]);
    if img.shape()[2] != 1 {
        return Err(Error::Format("mask must be single-channel".into()));
    }
    Ok((img.data().iter().map(|&v| u8::from(v >= 0.5)).collect(), h, w))
}
