use std::fmt;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Smallest accepted frame side in pixels.
pub const MIN_FRAME_SIDE: u32 = 32;

/// Where a frame came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Input,
    DcInterpolated,
    VcRefined,
    Synthetic,
}

/// An 8-bit grayscale raster with an optional RGB companion.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    gray: Vec<u8>,
    rgb: Option<Vec<u8>>,
    pub index: usize,
    pub provenance: Provenance,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("rgb", &self.rgb.is_some())
            .field("index", &self.index)
            .field("provenance", &self.provenance)
            .finish()
    }
}

/// ITU-R BT.601 luma in 8-bit fixed point. Equal channels map to themselves.
pub fn bt601_luma(r: u8, g: u8, b: u8) -> u8 {
    ((77 * r as u32 + 150 * g as u32 + 29 * b as u32 + 128) >> 8) as u8
}

fn check_size(width: u32, height: u32) -> Result<(), FeatureError> {
    if width < MIN_FRAME_SIDE || height < MIN_FRAME_SIDE {
        return Err(FeatureError::TooSmall { width, height });
    }
    Ok(())
}

impl Frame {
    pub fn from_gray(
        width: u32,
        height: u32,
        gray: Vec<u8>,
        index: usize,
        provenance: Provenance,
    ) -> Result<Self, FeatureError> {
        check_size(width, height)?;
        let expected = width as usize * height as usize;
        if gray.len() != expected {
            return Err(FeatureError::BufferSize { expected, got: gray.len() });
        }
        Ok(Self { width, height, gray, rgb: None, index, provenance })
    }

    /// Builds a frame from interleaved RGB bytes; gray is derived by BT.601 luma.
    pub fn from_rgb(
        width: u32,
        height: u32,
        rgb: Vec<u8>,
        index: usize,
        provenance: Provenance,
    ) -> Result<Self, FeatureError> {
        check_size(width, height)?;
        let expected = width as usize * height as usize * 3;
        if rgb.len() != expected {
            return Err(FeatureError::BufferSize { expected, got: rgb.len() });
        }
        let gray = rgb.chunks_exact(3).map(|p| bt601_luma(p[0], p[1], p[2])).collect();
        Ok(Self { width, height, gray, rgb: Some(rgb), index, provenance })
    }

    /// Grayscale images stay gray-only; anything with colour keeps its RGB.
    pub fn from_image(img: &DynamicImage, index: usize, provenance: Provenance) -> Result<Self, FeatureError> {
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            Self::from_rgb(rgb.width(), rgb.height(), rgb.into_raw(), index, provenance)
        } else {
            let g = img.to_luma8();
            Self::from_gray(g.width(), g.height(), g.into_raw(), index, provenance)
        }
    }

    /// Decodes PNG or PGM bytes.
    pub fn decode(bytes: &[u8], index: usize, provenance: Provenance) -> Result<Self, FeatureError> {
        let img = image::load_from_memory(bytes).map_err(|e| FeatureError::Decode(e.to_string()))?;
        Self::from_image(&img, index, provenance)
    }

    pub fn open(path: &Path, index: usize, provenance: Provenance) -> Result<Self, FeatureError> {
        let img = image::open(path)
            .map_err(|e| FeatureError::Decode(format!("{}: {e}", path.display())))?;
        Self::from_image(&img, index, provenance)
    }

    /// PNG encoding of the RGB buffer when present, otherwise of the gray buffer.
    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        let img = match &self.rgb {
            Some(rgb) => DynamicImage::ImageRgb8(
                RgbImage::from_raw(self.width, self.height, rgb.clone()).expect("validated size"),
            ),
            None => DynamicImage::ImageLuma8(
                GrayImage::from_raw(self.width, self.height, self.gray.clone()).expect("validated size"),
            ),
        };
        img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
        out.into_inner()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn gray(&self) -> &[u8] {
        &self.gray
    }

    pub fn rgb(&self) -> Option<&[u8]> {
        self.rgb.as_deref()
    }

    pub fn pixel(&self, x: u32, y: u32) -> u8 {
        self.gray[(y * self.width + x) as usize]
    }

    /// Same pixels under a new index and provenance.
    pub fn relabel(mut self, index: usize, provenance: Provenance) -> Self {
        self.index = index;
        self.provenance = provenance;
        self
    }

    pub(crate) fn gray_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width, self.height, self.gray.clone()).expect("validated size")
    }
}
