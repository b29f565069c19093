//! Image ingestion and the preprocessing chain: binary PPM (P6) decode and
//! encode, bilinear resize with half-pixel centers, flip/rotate/zoom
//! augmentation, ImageNet-style per-channel normalization, and deterministic
//! dataset indexing and batching.

mod augment;
mod dataset;
mod ppm;
mod resize;

pub use augment::{apply_augment, augment, AugmentParams};
pub use dataset::{
    batch_iter, load_dataset_index, load_labeled, normalize_image, normalize_to_input, Batch,
    BatchIter, BatchOptions, CyclingBatches, DatasetIndex, SplitIndex, CLASS_DIRS,
    IMAGENET_MEAN, IMAGENET_STD, SPLITS,
};
pub use ppm::{decode_ppm, encode_ppm, PpmError};
pub use resize::resize_bilinear;

use std::fmt;
use std::path::PathBuf;

/// Decoded 8-bit RGB raster, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<RawImage, PipelineError> {
        if width == 0 || height == 0 {
            return Err(PipelineError::InvalidArgument {
                message: format!("image extents must be positive, got {width}x{height}"),
            });
        }
        if pixels.len() != width * height * 3 {
            return Err(PipelineError::InvalidArgument {
                message: format!(
                    "pixel buffer length {} != {width}x{height}x3 = {}",
                    pixels.len(),
                    width * height * 3
                ),
            });
        }
        Ok(RawImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> RawImage {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        RawImage {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * 3 + c] = v;
    }
}

/// An image with its class label (0 non-plastic, 1 other plastic,
/// 2 polythene) and where it came from.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: RawImage,
    pub label: usize,
    pub source_path: String,
}

#[derive(Debug)]
pub enum PipelineError {
    Ppm(PpmError),
    InvalidArgument { message: String },
    MissingSplit { path: PathBuf },
    Io { path: PathBuf, source: std::io::Error },
    Undecodable { path: PathBuf, source: PpmError },
    WrongDimensions { expected: (usize, usize), got: (usize, usize) },
    LabelOutOfRange { label: usize },
    EmptySplit { split: String },
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Ppm(e) => write!(f, "{e}"),
            PipelineError::InvalidArgument { message } => write!(f, "{message}"),
            PipelineError::MissingSplit { path } => {
                write!(f, "missing split directory {}", path.display())
            }
            PipelineError::Io { path, source } => {
                write!(f, "{}: {source}", path.display())
            }
            PipelineError::Undecodable { path, source } => {
                write!(f, "{}: {source}", path.display())
            }
            PipelineError::WrongDimensions { expected, got } => write!(
                f,
                "expected a {}x{} image, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            PipelineError::LabelOutOfRange { label } => {
                write!(f, "label {label} outside {{0,1,2}}")
            }
            PipelineError::EmptySplit { split } => write!(f, "split {split} has no images"),
        }
    }
}

impl std::error::Error for PipelineError {}

impl From<PpmError> for PipelineError {
    fn from(e: PpmError) -> Self {
        PipelineError::Ppm(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_image_validates_buffer_length() {
        assert!(RawImage::new(2, 2, vec![0; 12]).is_ok());
        assert!(RawImage::new(2, 2, vec![0; 11]).is_err());
        assert!(RawImage::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn get_set_round_trip() {
        let mut img = RawImage::filled(3, 2, [0, 0, 0]);
        img.set(2, 1, 1, 99);
        assert_eq!(img.get(2, 1, 1), 99);
        assert_eq!(img.get(0, 0, 0), 0);
    }
}
