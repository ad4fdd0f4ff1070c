//! Binary netpbm: P5 (grayscale) and P6 (RGB), 8-bit only.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded 8-bit raster in row-major, channel-interleaved order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    pub pixels: Vec<u8>,
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::format(start, format!("{what} out of range")))
    }
}

pub fn parse_pnm(bytes: &[u8]) -> Result<RawImage> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::format(0, "bad magic: expected P5 or P6")),
    };
    let mut h = Header { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(Error::format(2, "expected whitespace after magic"));
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval_at = {
        h.skip_space_and_comments();
        h.pos
    };
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(maxval_at, format!("maxval {maxval} unsupported, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(maxval_at, "zero image dimension"));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(Error::format(h.pos, "expected single whitespace before payload")),
    }
    let need = width * height * channels;
    let payload = &bytes[h.pos..];
    if payload.len() < need {
        return Err(Error::format(bytes.len(), format!("payload has {} bytes, expected {need}", payload.len())));
    }
    Ok(RawImage { width, height, channels, pixels: payload[..need].to_vec() })
}

/// `[3, H, W]` tensor with values `v / 255`; grayscale is replicated to 3 channels.
pub fn read_pnm(bytes: &[u8]) -> Result<Tensor> {
    let raw = parse_pnm(bytes)?;
    let (w, h, c) = (raw.width, raw.height, raw.channels);
    let mut data = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for ch in 0..3 {
            let src = if c == 1 { raw.pixels[p] } else { raw.pixels[p * 3 + ch] };
            data[ch * h * w + p] = f64::from(src) / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

pub fn read_pnm_file(path: impl AsRef<Path>) -> Result<Tensor> {
    read_pnm(&super::read_file(path.as_ref())?)
}

fn quantize(v: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Invalid(format!("pixel value {v} outside [0, 1]")));
    }
    Ok((v * 255.0).round() as u8)
}

/// Raw 8-bit image with a canonical header: `P5` for one channel, `P6` for three.
pub fn encode_raw(img: &RawImage) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Encodes a `[3, H, W]` (P6) or `[1, H, W]` (P5) image with values in `[0, 1]`,
/// rounding half away from zero.
pub fn encode_pnm(image: &Tensor) -> Result<Vec<u8>> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::dim("write_pnm", format!("expected [C,H,W], got {:?}", image.shape())));
    };
    if c != 1 && c != 3 {
        return Err(Error::dim("write_pnm", format!("{c} channels, expected 1 or 3")));
    }
    let d = image.data();
    let mut pixels = Vec::with_capacity(c * h * w);
    for p in 0..h * w {
        for ch in 0..c {
            pixels.push(quantize(d[ch * h * w + p])?);
        }
    }
    Ok(encode_raw(&RawImage { width: w, height: h, channels: c, pixels }))
}

pub fn write_pnm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_pnm(image)?;
    super::write_file(path.as_ref(), &bytes)
}

/// Writes class ids (or any bytes) as a P5 image.
pub fn write_pgm_bytes(width: usize, height: usize, pixels: &[u8], path: impl AsRef<Path>) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::dim("write_pgm", format!("{} bytes for {width}x{height}", pixels.len())));
    }
    let img = RawImage { width, height, channels: 1, pixels: pixels.to_vec() };
    super::write_file(path.as_ref(), &encode_raw(&img))
}
