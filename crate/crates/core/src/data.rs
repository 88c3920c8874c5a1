//! Samples, datasets and image geometry.
//!
//! Pixels are stored flattened in row-major, channel-interleaved order:
//! index = (y * width + x) * channels + c.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod idx;
pub mod synthetic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
        })
    }

    pub fn gray(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            channels: 1,
        }
    }

    /// Flattened dimension d.
    pub fn dim(&self) -> usize {
        self.width * self.height * self.channels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    /// Inverse of [`ImageShape::index`]: (x, y, c).
    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let c = i % self.channels;
        let p = i / self.channels;
        (p % self.width, p / self.width, c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Position of the sample in its source collection. Random streams used
    /// during evaluation are keyed by this id.
    pub id: usize,
    pub pixels: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: String,
    pub shape: ImageShape,
    pub class_count: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        split: impl Into<String>,
        shape: ImageShape,
        class_count: usize,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let d = shape.dim();
        for s in &samples {
            if s.pixels.len() != d {
                return Err(Error::Shape(format!(
                    "sample {} has {} pixels, expected {d}",
                    s.id,
                    s.pixels.len()
                )));
            }
            if s.label >= class_count {
                return Err(Error::Config(format!(
                    "sample {} has label {} but class_count is {class_count}",
                    s.id, s.label
                )));
            }
            if let Some(p) = s.pixels.iter().find(|p| !p.is_finite()) {
                return Err(Error::Numeric(format!(
                    "sample {} has non-finite pixel {p}",
                    s.id
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            split: split.into(),
            shape,
            class_count,
            samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        Dataset {
            samples: self.samples.iter().take(n).cloned().collect(),
            ..self.clone_header()
        }
    }

    pub fn filter(&self, keep: impl Fn(&Sample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            name: self.name.clone(),
            split: self.split.clone(),
            shape: self.shape,
            class_count: self.class_count,
            samples: Vec::new(),
        }
    }
}
