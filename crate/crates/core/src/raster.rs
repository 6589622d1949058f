//! In-memory image and label-map types plus resampling.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rec.709 luma weights.
pub const REC709_LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// Number of coarse semantic classes.
pub const NUM_CLASSES: usize = 9;

#[inline]
pub fn luma(rgb: [f64; 3]) -> f64 {
    REC709_LUMA[0] * rgb[0] + REC709_LUMA[1] * rgb[1] + REC709_LUMA[2] * rgb[2]
}

/// A three-channel image of `f64` samples, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::dim("rgb_image", (height, width), (pixels.len(), 1)));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
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
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    pub fn luma(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| luma(p)).collect()
    }

    pub fn map(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let coord = |dst: usize, scale: f64, len: usize| {
            let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, s - i0 as f64)
        };
        Self::from_fn(width, height, |x, y| {
            let (x0, x1, fx) = coord(x, sx, self.width);
            let (y0, y1, fy) = coord(y, sy, self.height);
            let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
            let mut out = [0.0; 3];
            for ch in 0..3 {
                let top = a[ch] + (b[ch] - a[ch]) * fx;
                let bottom = c[ch] + (d[ch] - c[ch]) * fx;
                out[ch] = top + (bottom - top) * fy;
            }
            out
        })
    }
}

macro_rules! image_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(pub RgbImage);

        impl Deref for $name {
            type Target = RgbImage;
            fn deref(&self) -> &RgbImage {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut RgbImage {
                &mut self.0
            }
        }

        impl $name {
            pub fn into_inner(self) -> RgbImage {
                self.0
            }
        }
    };
}

image_newtype!(
    /// Scene-linear RGB in `[0, 1]`, Rec.709 primaries.
    LinearImage
);
image_newtype!(
    /// Display-encoded (gamma) RGB in `[0, 1]`: references and predictions.
    DisplayImage
);

pub type ReferenceImage = DisplayImage;

/// Coarse semantic classes, in one-hot order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum CoarseClass {
    Sky = 0,
    Terrain = 1,
    Vegetation = 2,
    Water = 3,
    Human = 4,
    NonLiving = 5,
    City = 6,
    Indoor = 7,
    Others = 8,
}

impl CoarseClass {
    pub const ALL: [CoarseClass; NUM_CLASSES] = [
        CoarseClass::Sky,
        CoarseClass::Terrain,
        CoarseClass::Vegetation,
        CoarseClass::Water,
        CoarseClass::Human,
        CoarseClass::NonLiving,
        CoarseClass::City,
        CoarseClass::Indoor,
        CoarseClass::Others,
    ];

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CoarseClass::Sky => "sky",
            CoarseClass::Terrain => "terrain",
            CoarseClass::Vegetation => "vegetation",
            CoarseClass::Water => "water",
            CoarseClass::Human => "human",
            CoarseClass::NonLiving => "non-living",
            CoarseClass::City => "city",
            CoarseClass::Indoor => "indoor",
            CoarseClass::Others => "others",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == name)
    }
}

/// Per-pixel coarse labels in `0..9`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl SegmentationMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::dim("segmentation_map", (height, width), (labels.len(), 1)));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Usage(format!(
                "label {bad} outside the coarse range 0..{NUM_CLASSES}"
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(x, y));
            }
        }
        Self::new(width, height, labels)
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
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Distinct labels present, ascending.
    pub fn distinct_labels(&self) -> Vec<u8> {
        let mut seen = [false; NUM_CLASSES];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..NUM_CLASSES as u8).filter(|&l| seen[l as usize]).collect()
    }

    /// Nearest-neighbour resampling; never introduces new labels.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        let pick = |dst: usize, src_len: usize, dst_len: usize| {
            (((dst as f64 + 0.5) * src_len as f64 / dst_len as f64).floor() as usize).min(src_len - 1)
        };
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = pick(y, self.height, height);
            for x in 0..width {
                labels.push(self.get(pick(x, self.width, width), sy));
            }
        }
        Self {
            width,
            height,
            labels,
        }
    }
}
