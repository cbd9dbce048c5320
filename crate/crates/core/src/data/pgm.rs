//! 8-bit binary PGM (`P5`) images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, `width · height` bytes.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Parameter(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos)?;
        if magic != b"P5" {
            return Err(Error::parse(0, "not a binary PGM (expected P5)"));
        }
        let width = parse_number(bytes, &mut pos, "width")?;
        let height = parse_number(bytes, &mut pos, "height")?;
        let maxval = parse_number(bytes, &mut pos, "maxval")?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::parse(
                pos,
                format!("unsupported maxval {maxval}; only 8-bit PGM"),
            ));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let needed = width * height;
        let available = bytes.len().saturating_sub(pos);
        if available < needed {
            return Err(Error::parse(
                pos,
                format!("truncated raster: need {needed} bytes, {available} available"),
            ));
        }
        let mut pixels = bytes[pos..pos + needed].to_vec();
        if maxval != 255 {
            for p in &mut pixels {
                *p = ((*p as usize * 255 + maxval / 2) / maxval).min(255) as u8;
            }
        }
        GrayImage::new(width, height, pixels)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pgm_bytes(&bytes).map_err(|e| match e {
            Error::Parse { offset, message } => Error::Parse {
                offset,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::parse(start, "truncated PGM header"));
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let start = *pos;
    let token = next_token(bytes, pos)?;
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(start, format!("invalid PGM {what}")))
}
