//! RGB images, binary masks, and their PNG encodings.

use crate::{Error, Result};
use ::image::{ImageBuffer, Luma, Rgb};
use std::path::Path;

/// 8-bit RGB image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SatImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl SatImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::shape(
                "SatImage pixels",
                height * width * 3,
                pixels.len(),
            ));
        }
        Ok(SatImage {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        SatImage {
            height,
            width,
            pixels: rgb.repeat(height * width),
        }
    }

    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Per-pixel labels: 0 = forged, 1 = pristine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl BinaryMask {
    pub fn pristine(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            labels: vec![1; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn forged_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 0).count()
    }
}

fn image_err(path: &Path, e: ::image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn save_image(img: &SatImage, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, _> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
            .expect("length checked");
    buf.save(path).map_err(|e| image_err(path, e))
}

/// Load an 8-bit RGB PNG; any other channel layout is rejected.
pub fn load_image(path: &Path) -> Result<SatImage> {
    let img = ::image::open(path).map_err(|e| image_err(path, e))?;
    match img {
        ::image::DynamicImage::ImageRgb8(b) => {
            let (w, h) = b.dimensions();
            SatImage::new(h as usize, w as usize, b.into_raw())
        }
        other => Err(Error::format(
            path,
            format!("expected 8-bit RGB, found {:?}", other.color()),
        )),
    }
}

/// 8-bit grayscale PNG, 255 = pristine, 0 = forged.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let raw = mask
        .labels
        .iter()
        .map(|&l| if l == 0 { 0 } else { 255 })
        .collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width as u32, mask.height as u32, raw).expect("length checked");
    buf.save(path).map_err(|e| image_err(path, e))
}

/// Load a mask written by [`save_mask`]; values >= 128 read as pristine.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = ::image::open(path).map_err(|e| image_err(path, e))?;
    match img {
        ::image::DynamicImage::ImageLuma8(b) => {
            let (w, h) = b.dimensions();
            let labels = b
                .into_raw()
                .into_iter()
                .map(|v| u8::from(v >= 128))
                .collect();
            Ok(BinaryMask {
                height: h as usize,
                width: w as usize,
                labels,
            })
        }
        other => Err(Error::format(
            path,
            format!("expected 8-bit grayscale mask, found {:?}", other.color()),
        )),
    }
}
