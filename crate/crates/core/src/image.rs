//! 8-bit grayscale images and binary PGM (P5) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major 8-bit grayscale pixel grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!("degenerate size {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Image(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    /// Rotates a quarter turn clockwise: `(x, y) -> (h - 1 - y, x)`.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut out = GrayImage::new(h, w, 0);
        for y in 0..h {
            for x in 0..w {
                out.set(h - 1 - y, x, self.get(x, y));
            }
        }
        out
    }

    /// Applies `k` clockwise quarter turns.
    pub fn rotate90k(&self, k: u32) -> Self {
        let mut out = self.clone();
        for _ in 0..(k % 4) {
            out = out.rotate90();
        }
        out
    }

    /// Mirrors left-right.
    pub fn flip_h(&self) -> Self {
        let w = self.width;
        GrayImage::from_fn(w, self.height, |x, y| self.get(w - 1 - x, y))
    }

    /// Mirrors top-bottom.
    pub fn flip_v(&self) -> Self {
        let h = self.height;
        GrayImage::from_fn(self.width, h, |x, y| self.get(x, h - 1 - y))
    }

    /// Shifts content by `(dx, dy)`; uncovered pixels take `fill`.
    pub fn translate(&self, dx: i64, dy: i64, fill: u8) -> Self {
        let (w, h) = (self.width as i64, self.height as i64);
        GrayImage::from_fn(self.width, self.height, |x, y| {
            let sx = x as i64 - dx;
            let sy = y as i64 - dy;
            if sx >= 0 && sx < w && sy >= 0 && sy < h {
                self.get(sx as usize, sy as usize)
            } else {
                fill
            }
        })
    }

    /// Mean filter over a `(2r+1)^2` neighbourhood with edge clamping.
    pub fn box_blur(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width as i64, self.height as i64);
        let r = radius as i64;
        let n = ((2 * r + 1) * (2 * r + 1)) as u32;
        GrayImage::from_fn(self.width, self.height, |x, y| {
            let mut acc = 0u32;
            for oy in -r..=r {
                let sy = (y as i64 + oy).clamp(0, h - 1) as usize;
                for ox in -r..=r {
                    let sx = (x as i64 + ox).clamp(0, w - 1) as usize;
                    acc += u32::from(self.get(sx, sy));
                }
            }
            ((acc + n / 2) / n) as u8
        })
    }

    /// Encodes as binary PGM with maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let magic = next_token(bytes, &mut pos)?;
        if magic != b"P5" {
            return Err(Error::Image("not a binary PGM (P5) file".into()));
        }
        let width = parse_header_int(next_token(bytes, &mut pos)?)?;
        let height = parse_header_int(next_token(bytes, &mut pos)?)?;
        let maxval = parse_header_int(next_token(bytes, &mut pos)?)?;
        if maxval != 255 {
            return Err(Error::Image(format!("unsupported maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::Image("truncated PGM header".into()));
        }
        pos += 1;
        let raster = &bytes[pos..];
        if raster.len() < width * height {
            return Err(Error::Image(format!(
                "truncated raster: {} of {} bytes",
                raster.len(),
                width * height
            )));
        }
        GrayImage::from_raw(width, height, raster[..width * height].to_vec())
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        GrayImage::from_pgm(&bytes)
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
        return Err(Error::Image("truncated PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_header_int(tok: &[u8]) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Image("malformed PGM header field".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> GrayImage {
        GrayImage::from_fn(5, 3, |x, y| (x * 10 + y) as u8)
    }

    #[test]
    fn pgm_round_trip() {
        let img = ramp();
        let bytes = img.to_pgm();
        assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(GrayImage::from_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_with_comment_parses() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let img = GrayImage::from_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[7, 9]);
    }

    #[test]
    fn pgm_rejects_truncation_and_other_formats() {
        let mut bytes = ramp().to_pgm();
        bytes.truncate(bytes.len() - 1);
        assert!(GrayImage::from_pgm(&bytes).is_err());
        assert!(GrayImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::from_pgm(b"P5\n1 1\n65535\n\0\0").is_err());
    }

    #[test]
    fn rotation_maps_pixels_clockwise() {
        let img = ramp();
        let r = img.rotate90();
        assert_eq!((r.width(), r.height()), (3, 5));
        for y in 0..3 {
            for x in 0..5 {
                assert_eq!(r.get(3 - 1 - y, x), img.get(x, y));
            }
        }
        assert_eq!(img.rotate90k(4), img);
    }

    #[test]
    fn flips_are_involutions() {
        let img = ramp();
        assert_eq!(img.flip_h().flip_h(), img);
        assert_eq!(img.flip_v().flip_v(), img);
        assert_eq!(img.flip_h().get(0, 0), img.get(4, 0));
    }

    #[test]
    fn translate_and_blur() {
        let img = ramp();
        let t = img.translate(1, 0, 255);
        assert_eq!(t.get(0, 0), 255);
        assert_eq!(t.get(1, 0), img.get(0, 0));
        let flat = GrayImage::new(4, 4, 90);
        assert_eq!(flat.box_blur(1), flat);
    }
}
