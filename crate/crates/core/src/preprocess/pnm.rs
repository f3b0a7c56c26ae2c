//! Binary netpbm: P5 (gray) and P6 (rgb) with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{GrayImage, Image, RgbImage};

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&[u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err("truncated header"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| format_err(format!("invalid {what} in header")))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut hdr = Header { bytes, pos: 0 };
    let channels = match hdr.token()? {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(format_err(format!(
                "unsupported magic {:?}, expected P5 or P6",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = hdr.number("width")?;
    let height = hdr.number("height")?;
    let maxval = hdr.number("maxval")?;
    if maxval != 255 {
        return Err(format_err(format!("maxval {maxval} unsupported, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(format_err(format!("zero extent {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(hdr.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err("missing separator after maxval"));
    }
    let start = hdr.pos + 1;
    let need = width * height * channels;
    let payload = bytes
        .get(start..start + need)
        .ok_or_else(|| format_err(format!("truncated raster: need {need} bytes, have {}", bytes.len().saturating_sub(start))))?;
    Ok(if channels == 1 {
        Image::Gray(GrayImage::new(width, height, payload.to_vec())?)
    } else {
        let px = payload.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Image::Rgb(RgbImage::new(width, height, px)?)
    })
}

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let (magic, (w, h)) = match img {
        Image::Gray(_) => ("P5", img.dims()),
        Image::Rgb(_) => ("P6", img.dims()),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    match img {
        Image::Gray(g) => out.extend_from_slice(g.pixels()),
        Image::Rgb(c) => out.extend(c.pixels().iter().flatten()),
    }
    out
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_pnm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

/// Reads a P5 file, or a P6 file converted to gray.
pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    read_pnm(path).map(Image::into_gray)
}

pub fn write_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    write_pnm(&Image::Gray(img.clone()), path)
}
