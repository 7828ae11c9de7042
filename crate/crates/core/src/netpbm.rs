//! Binary Netpbm I/O: P6 (8-bit color, used for scene images) and P5
//! (8-bit grayscale, used for class-index label maps). Writers emit a
//! canonical header so repeated runs are bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::LabelImage;

/// 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize) -> Self {
        RgbImage {
            height,
            width,
            data: vec![0; height * width * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        HeaderParser { bytes, pos: 0 }
    }

    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self) -> Result<&'a str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("truncated Netpbm header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::Format("non-UTF8 Netpbm header".into()))
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::Format(format!("bad Netpbm header number `{tok}`")))
    }

    /// Consumes the single whitespace byte separating header and payload.
    fn payload(mut self) -> Result<&'a [u8]> {
        if self.pos >= self.bytes.len() {
            return Err(Error::Format("Netpbm file has no payload".into()));
        }
        self.pos += 1;
        Ok(&self.bytes[self.pos..])
    }
}

fn parse(bytes: &[u8], magic: &str, samples_per_pixel: usize) -> Result<(usize, usize, Vec<u8>)> {
    let mut p = HeaderParser::new(bytes);
    let got = p.token()?;
    if got != magic {
        return Err(Error::Format(format!("expected {magic}, found {got}")));
    }
    let width = p.number()?;
    let height = p.number()?;
    let maxval = p.number()?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "only 8-bit Netpbm supported, maxval {maxval}"
        )));
    }
    let payload = p.payload()?;
    let want = width * height * samples_per_pixel;
    if payload.len() < want {
        return Err(Error::Format(format!(
            "Netpbm payload has {} bytes, expected {want}",
            payload.len()
        )));
    }
    Ok((height, width, payload[..want].to_vec()))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path)?;
    let (height, width, data) = parse(&bytes, "P6", 3)?;
    Ok(RgbImage {
        height,
        width,
        data,
    })
}

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<LabelImage> {
    let bytes = fs::read(path)?;
    let (height, width, data) = parse(&bytes, "P5", 1)?;
    LabelImage::from_vec(height, width, data)
}

pub fn write_pgm(path: &Path, labels: &LabelImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width, labels.height).into_bytes();
    out.extend_from_slice(&labels.data);
    fs::write(path, out)?;
    Ok(())
}
