//! Class-dependent blob images with a known informative region per class.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, ImageShape, Sample};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub samples: usize,
    /// Maximum background intensity; background pixels are U(0, noise).
    pub noise: f64,
    /// Maximum blob displacement in pixels along each axis.
    pub jitter: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            width: 28,
            height: 28,
            classes: 4,
            samples: 400,
            noise: 0.1,
            jitter: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// masks[c][i] is true iff pixel i can belong to class c's blob.
    pub masks: Vec<Vec<bool>>,
}

struct Layout {
    cols: usize,
    cell_w: usize,
    cell_h: usize,
    blob: usize,
}

impl SyntheticSpec {
    fn layout(&self) -> Result<Layout> {
        if self.classes == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Config("synthetic spec needs positive sizes".into()));
        }
        let cols = (self.classes as f64).sqrt().ceil() as usize;
        let rows = self.classes.div_ceil(cols);
        let cell_w = self.width / cols;
        let cell_h = self.height / rows;
        let blob = cell_w.min(cell_h) / 2;
        if blob == 0 || blob + 2 * self.jitter > cell_w.min(cell_h) {
            return Err(Error::Config(format!(
                "{}x{} image too small for {} disjoint blobs with jitter {}",
                self.width, self.height, self.classes, self.jitter
            )));
        }
        Ok(Layout {
            cols,
            cell_w,
            cell_h,
            blob,
        })
    }

    fn blob_origin(&self, layout: &Layout, class: usize) -> (usize, usize) {
        let cx = (class % layout.cols) * layout.cell_w;
        let cy = (class / layout.cols) * layout.cell_h;
        (
            cx + (layout.cell_w - layout.blob) / 2,
            cy + (layout.cell_h - layout.blob) / 2,
        )
    }
}

/// Deterministic in `seed`. Sample `i` has class `i % classes`.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    let layout = spec.layout()?;
    let shape = ImageShape::gray(spec.width, spec.height);
    let jitter = spec.jitter as i64;

    let masks = (0..spec.classes)
        .map(|c| {
            let (ox, oy) = spec.blob_origin(&layout, c);
            let mut mask = vec![false; shape.dim()];
            let lo_x = ox as i64 - jitter;
            let lo_y = oy as i64 - jitter;
            let span = (layout.blob as i64) + 2 * jitter;
            for y in lo_y..lo_y + span {
                for x in lo_x..lo_x + span {
                    mask[shape.index(x as usize, y as usize, 0)] = true;
                }
            }
            mask
        })
        .collect();

    let samples = (0..spec.samples)
        .map(|id| {
            let label = id % spec.classes;
            let mut rng = seed::rng(&[seed, id as u64]);
            let mut pixels: Vec<f64> = (0..shape.dim())
                .map(|_| rng.random::<f64>() * spec.noise)
                .collect();
            let (ox, oy) = spec.blob_origin(&layout, label);
            let dx = rng.random_range(-jitter..=jitter);
            let dy = rng.random_range(-jitter..=jitter);
            let bx = (ox as i64 + dx) as usize;
            let by = (oy as i64 + dy) as usize;
            for y in by..by + layout.blob {
                for x in bx..bx + layout.blob {
                    pixels[shape.index(x, y, 0)] = 0.6 + 0.4 * rng.random::<f64>();
                }
            }
            Sample { id, pixels, label }
        })
        .collect();

    let dataset = Dataset::new(
        format!("synthetic-{}x{}-{}c", spec.width, spec.height, spec.classes),
        "synthetic",
        shape,
        spec.classes,
        samples,
    )?;
    Ok(SyntheticData { dataset, masks })
}
