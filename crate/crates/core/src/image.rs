//! Binary portable graymap (`P5`) images, 8- or 16-bit.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// 255 for 8-bit files, 65535 for 16-bit files (any value in 1..=65535 is legal).
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

impl GrayImage {
    /// Single-image tensor `1×1×H×W` with values scaled to `[0, 1]`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let m = self.maxval as f64;
        let data = self.pixels.iter().map(|&p| T::from_f64(p as f64 / m)).collect();
        Tensor::new(Shape::new(1, 1, self.height, self.width), data).expect("pixel count matches")
    }

    /// Quantize channel 0 of sample `n`, clamping to `[0, 1]` first.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize, maxval: u16) -> Self {
        let s = t.shape();
        let m = maxval as f64;
        GrayImage {
            width: s.w,
            height: s.h,
            maxval,
            pixels: t
                .plane(n, 0)
                .iter()
                .map(|v| (v.as_f64().clamp(0.0, 1.0) * m).round() as u16)
                .collect(),
        }
    }
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval < 256 {
        out.extend(img.pixels.iter().map(|&p| p as u8));
    } else {
        for &p in &img.pixels {
            out.extend_from_slice(&p.to_be_bytes());
        }
    }
    out
}

pub fn decode_pgm(bytes: &[u8], origin: &str) -> Result<GrayImage> {
    let bad = |reason: &str| Error::Image {
        path: origin.to_string(),
        reason: reason.to_string(),
    };
    let mut pos = 0;
    let mut fields = [0usize; 3];
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    pos += 2;
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?;
        *field = text.parse().map_err(|_| bad("bad header number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("header not terminated"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("invalid dimensions or maxval"));
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let payload = &bytes[pos..];
    if payload.len() < width * height * bpp {
        return Err(bad("truncated pixel data"));
    }
    let pixels: Vec<u16> = if bpp == 1 {
        payload[..width * height].iter().map(|&b| b as u16).collect()
    } else {
        payload[..width * height * 2]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if pixels.iter().any(|&p| p as usize > maxval) {
        return Err(bad("pixel exceeds maxval"));
    }
    Ok(GrayImage {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, &path.display().to_string())
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_pgm(img)).map_err(|e| Error::io(path, e))
}
