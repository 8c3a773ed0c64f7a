//! Grayscale rasters, binary masks and PGM I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::DynamicImage;

use crate::error::{contract, Error, Result};

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        contract!(
            data.len() == height * width,
            "image data {} != {height}×{width}",
            data.len()
        );
        contract!(
            data.iter().all(|v| v.is_finite()),
            "image contains non-finite values"
        );
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.width + c]
    }

    /// Rounds to the nearest 16-bit level so a PGM round trip is exact.
    pub fn quantize16(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0;
        }
    }
}

/// Binary raster; every stored value is 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    /// Any nonzero input value becomes 1.
    pub fn from_values(height: usize, width: usize, values: &[u8]) -> Result<Self> {
        contract!(
            values.len() == height * width,
            "mask data {} != {height}×{width}",
            values.len()
        );
        Ok(Self {
            height,
            width,
            data: values.iter().map(|&v| u8::from(v != 0)).collect(),
        })
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c] != 0
    }

    pub fn set(&mut self, r: usize, c: usize, on: bool) {
        self.data[r * self.width + c] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Pixel-set inclusion `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.height == other.height
            && self.width == other.width
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| a == 0 || b != 0)
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::load(path, e.to_string()))
}

/// Reads an 8- or 16-bit grayscale PGM, scaling to `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    let (w, h, data) = match decode(path)? {
        DynamicImage::ImageLuma8(b) => (
            b.width(),
            b.height(),
            b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        ),
        DynamicImage::ImageLuma16(b) => (
            b.width(),
            b.height(),
            b.into_raw()
                .into_iter()
                .map(|v| v as f32 / 65535.0)
                .collect(),
        ),
        other => {
            return Err(Error::load(
                path,
                format!("expected grayscale PGM, got {:?}", other.color()),
            ))
        }
    };
    Image::new(h as usize, w as usize, data).map_err(|e| Error::load(path, e.to_string()))
}

/// Reads a PGM mask; any nonzero sample is annotated.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let (w, h, data): (u32, u32, Vec<u8>) = match decode(path)? {
        DynamicImage::ImageLuma8(b) => (b.width(), b.height(), b.into_raw()),
        DynamicImage::ImageLuma16(b) => (
            b.width(),
            b.height(),
            b.into_raw().into_iter().map(|v| u8::from(v != 0)).collect(),
        ),
        other => {
            return Err(Error::load(
                path,
                format!("expected grayscale PGM, got {:?}", other.color()),
            ))
        }
    };
    Mask::from_values(h as usize, w as usize, &data).map_err(|e| Error::load(path, e.to_string()))
}

fn write_pgm(path: &Path, width: usize, height: usize, maxval: u16, payload: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    out.extend_from_slice(payload);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Writes a 16-bit binary PGM (big-endian samples).
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let mut payload = Vec::with_capacity(img.data.len() * 2);
    for &v in &img.data {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        payload.extend_from_slice(&q.to_be_bytes());
    }
    write_pgm(path, img.width, img.height, 65535, &payload)
}

/// Writes an 8-bit PGM with annotated pixels at 255.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let payload: Vec<u8> = mask
        .data
        .iter()
        .map(|&v| if v != 0 { 255 } else { 0 })
        .collect();
    write_pgm(path, mask.width, mask.height, 255, &payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let mut img = Image::new(3, 4, (0..12).map(|i| i as f32 / 11.0).collect()).unwrap();
        img.quantize16();
        write_image(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }

    #[test]
    fn reads_eight_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.pgm");
        fs::write(&p, b"P5\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!(read_image(&p).unwrap().data, vec![0.0, 1.0]);
        assert_eq!(read_mask(&p).unwrap().data, vec![0, 1]);
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let m = Mask::from_values(2, 3, &[0, 7, 0, 1, 0, 255]).unwrap();
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
    }

    #[test]
    fn subset_relation() {
        let a = Mask::from_values(1, 3, &[1, 0, 0]).unwrap();
        let b = Mask::from_values(1, 3, &[1, 1, 0]).unwrap();
        assert!(a.is_subset_of(&b));
        assert!(!b.is_subset_of(&a));
    }
}
