//! RGB images and integer label maps, with 8-bit PNG input/output.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("image dimensions must be positive")]
    Empty,
    #[error("label {0} does not fit in an 8-bit PNG")]
    LabelOverflow(u32),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: ::image::ImageError,
    },
}

/// Row-major `H×W×3` image with channel values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl Image {
    pub fn filled(width: u32, height: u32, color: [f64; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&color);
        }
        Self { width, height, data }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty);
        }
        assert_eq!(data.len(), width as usize * height as usize * 3, "pixel buffer length");
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, col: u32, row: u32) -> [f64; 3] {
        let i = (row as usize * self.width as usize + col as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, col: u32, row: u32, value: [f64; 3]) {
        let i = (row as usize * self.width as usize + col as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&value);
    }

    pub fn mean_color(&self) -> [f64; 3] {
        let mut sum = [0.0; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c];
            }
        }
        let n = self.pixel_count() as f64;
        sum.map(|s| s / n)
    }

    pub fn check_same_size(&self, other: &Image) -> Result<(), ImageError> {
        if self.width != other.width || self.height != other.height {
            return Err(ImageError::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    /// Quantizes to 8 bits per channel (`round(255·v)`).
    pub fn to_rgb8(&self) -> ::image::RgbImage {
        let bytes = self.data.iter().map(|v| quantize(*v)).collect();
        ::image::RgbImage::from_raw(self.width, self.height, bytes).expect("buffer sized from dimensions")
    }

    pub fn from_rgb8(img: &::image::RgbImage) -> Self {
        let data = img.as_raw().iter().map(|b| *b as f64 / 255.0).collect();
        Self {
            width: img.width(),
            height: img.height(),
            data,
        }
    }

    /// The image as it reads back from its 8-bit PNG encoding.
    pub fn quantized(&self) -> Self {
        Self::from_rgb8(&self.to_rgb8())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        self.to_rgb8().save(path).map_err(|source| io_error(path, source))
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let img = ::image::open(path).map_err(|source| io_error(path, source))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn io_error(path: &Path, source: ::image::ImageError) -> ImageError {
    ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Row-major `H×W` object labels; 0 is background, `j ≥ 1` is object `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, labels: Vec<u32>) -> Self {
        assert_eq!(labels.len(), width as usize * height as usize, "label buffer length");
        Self { width, height, labels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, col: u32, row: u32) -> u32 {
        self.labels[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, col: u32, row: u32, label: u32) {
        self.labels[row as usize * self.width as usize + col as usize] = label;
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|l| **l != 0).count()
    }

    pub fn check_same_size(&self, other: &LabelMap) -> Result<(), ImageError> {
        if self.width != other.width || self.height != other.height {
            return Err(ImageError::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let bytes = self
            .labels
            .iter()
            .map(|l| u8::try_from(*l).map_err(|_| ImageError::LabelOverflow(*l)))
            .collect::<Result<Vec<u8>, _>>()?;
        let img = ::image::GrayImage::from_raw(self.width, self.height, bytes).expect("buffer sized from dimensions");
        img.save(path).map_err(|source| io_error(path, source))
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let img = ::image::open(path).map_err(|source| io_error(path, source))?.to_luma8();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            labels: img.as_raw().iter().map(|b| *b as u32).collect(),
        })
    }
}
