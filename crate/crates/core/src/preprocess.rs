//! Decoding, side cropping, and resizing to the 224×224 model input.

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng;
use thiserror::Error;

use crate::dataset::ImageRecord;

pub const INPUT_SIZE: u32 = 224;
pub const CHANNELS: usize = 3;
/// Fraction of the long side removed by the augmentation crop.
pub const CROP_FRACTION: f64 = 0.10;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("record {id:?}: cannot read pixels: {source}")]
    Read {
        id: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record {id:?}: cannot decode image: {source}")]
    Decode {
        id: String,
        #[source]
        source: image::ImageError,
    },
}

impl PreprocessError {
    pub fn record_id(&self) -> &str {
        match self {
            PreprocessError::Read { id, .. } | PreprocessError::Decode { id, .. } => id,
        }
    }
}

/// Row-major `height × width × channels` tensor with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PixelTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    fn from_rgb(img: &RgbImage) -> Self {
        PixelTensor {
            height: img.height() as usize,
            width: img.width() as usize,
            channels: CHANNELS,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    /// Mean of each channel over a `grid × grid` partition of the image,
    /// laid out cell-major then channel. The detector backbone consumes this.
    pub fn pooled(&self, grid: usize) -> Vec<f64> {
        let mut out = vec![0.0; grid * grid * self.channels];
        let mut counts = vec![0usize; grid * grid];
        for y in 0..self.height {
            let gy = y * grid / self.height;
            for x in 0..self.width {
                let gx = x * grid / self.width;
                let cell = gy * grid + gx;
                counts[cell] += 1;
                for c in 0..self.channels {
                    out[cell * self.channels + c] += self.at(y, x, c) as f64;
                }
            }
        }
        for (cell, &n) in counts.iter().enumerate() {
            for c in 0..self.channels {
                out[cell * self.channels + c] /= n.max(1) as f64;
            }
        }
        out
    }
}

/// Pixel rectangle kept before resizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Picks the region to keep. With augmentation, landscape images lose 10% of
/// their width from a coin-flipped side, portrait images 10% of their height;
/// square images and non-augmented calls keep everything.
pub fn crop_window<R: Rng + ?Sized>(width: u32, height: u32, augment: bool, rng: &mut R) -> CropWindow {
    let full = CropWindow {
        x: 0,
        y: 0,
        width,
        height,
    };
    if !augment || width == height {
        return full;
    }
    let cut = |side: u32| ((side as f64) * CROP_FRACTION).round() as u32;
    let first_side = rng.gen_bool(0.5);
    if width > height {
        let removed = cut(width);
        CropWindow {
            x: if first_side { removed } else { 0 },
            width: width - removed,
            ..full
        }
    } else {
        let removed = cut(height);
        CropWindow {
            y: if first_side { removed } else { 0 },
            height: height - removed,
            ..full
        }
    }
}

pub fn decode(record: &ImageRecord) -> Result<RgbImage, PreprocessError> {
    let bytes = record.source.read_bytes().map_err(|source| PreprocessError::Read {
        id: record.id.clone(),
        source,
    })?;
    let img = image::load_from_memory(&bytes).map_err(|source| PreprocessError::Decode {
        id: record.id.clone(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn preprocess_decoded<R: Rng + ?Sized>(img: &RgbImage, augment: bool, rng: &mut R) -> PixelTensor {
    let w = crop_window(img.width(), img.height(), augment, rng);
    let cropped = imageops::crop_imm(img, w.x, w.y, w.width, w.height).to_image();
    let resized = imageops::resize(&cropped, INPUT_SIZE, INPUT_SIZE, FilterType::Triangle);
    PixelTensor::from_rgb(&resized)
}

/// Decodes the record's pixels and produces the 224×224×3 model input.
pub fn preprocess_image<R: Rng + ?Sized>(
    record: &ImageRecord,
    augment: bool,
    rng: &mut R,
) -> Result<PixelTensor, PreprocessError> {
    Ok(preprocess_decoded(&decode(record)?, augment, rng))
}

/// PNG-encodes an image; used by the synthetic data generator and tests.
pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    buf.into_inner()
}
