//! KernelSHAP over square superpixels.
//!
//! Coalitions mask superpixels to a constant baseline. The Shapley-kernel
//! weighted regression is solved with the efficiency constraint
//! `sum(phi) = f(x) - f(baseline)` eliminated exactly, so the empty and full
//! coalitions are always part of the fit.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Attribution, Method};
use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::nn::{Model, OutputKind};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapSpec {
    /// Coalition budget, counting the empty and full coalitions. When it
    /// covers all `2^M` coalitions they are enumerated with exact kernel weights.
    pub samples: usize,
    /// Superpixel edge length in pixels.
    pub patch: usize,
    pub baseline: f64,
    /// Ridge penalty added to the normal equations.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for ShapSpec {
    fn default() -> Self {
        Self {
            samples: 512,
            patch: 4,
            baseline: 0.0,
            ridge: 0.0,
            seed: 0,
        }
    }
}

impl ShapSpec {
    pub fn superpixels(&self, shape: ImageShape) -> Result<usize> {
        if self.patch == 0 || !shape.width.is_multiple_of(self.patch) || !shape.height.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "patch size {} must divide the {}x{} image",
                self.patch, shape.width, shape.height
            )));
        }
        let m = (shape.width / self.patch) * (shape.height / self.patch);
        if self.samples < m + 2 {
            return Err(Error::Config(format!(
                "KernelSHAP needs at least {} coalition samples for {m} superpixels, got {}",
                m + 2,
                self.samples
            )));
        }
        if self.ridge.is_nan() || self.ridge < 0.0 || !self.baseline.is_finite() {
            return Err(Error::Config("ridge must be >= 0 and baseline finite".into()));
        }
        Ok(m)
    }
}

/// Superpixel id of every pixel.
fn segment(shape: ImageShape, patch: usize) -> Vec<usize> {
    let cols = shape.width / patch;
    (0..shape.dim())
        .map(|i| {
            let (x, y, _) = shape.coords(i);
            (y / patch) * cols + x / patch
        })
        .collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of a coalition of size `z` out of `m` features.
pub fn kernel_weight(m: usize, z: usize) -> f64 {
    (m - 1) as f64 / (binomial(m, z) * z as f64 * (m - z) as f64)
}

/// Weighted coalitions, excluding the empty and full ones.
fn coalitions(m: usize, spec: &ShapSpec, stream: u64) -> Vec<(Vec<bool>, f64)> {
    let exhaustive = m < 63 && (spec.samples as u128) >= (1u128 << m);
    if exhaustive {
        return (1..(1u64 << m) - 1)
            .map(|mask| {
                let z: Vec<bool> = (0..m).map(|j| mask >> j & 1 == 1).collect();
                let w = kernel_weight(m, mask.count_ones() as usize);
                (z, w)
            })
            .collect();
    }
    // Sizes drawn proportionally to their total kernel mass, members uniformly;
    // each draw is paired with its complement.
    let mut rng = seed::rng(&[spec.seed, stream, 0x5AA9]);
    let size_mass: Vec<f64> = (1..m).map(|s| 1.0 / (s * (m - s)) as f64).collect();
    let total: f64 = size_mass.iter().sum();
    let pairs = (spec.samples - 2) / 2;
    let mut out = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let mut u = rng.random::<f64>() * total;
        let mut size = m - 1;
        for (s, &w) in size_mass.iter().enumerate() {
            if u < w {
                size = s + 1;
                break;
            }
            u -= w;
        }
        let mut z = vec![false; m];
        for j in index::sample(&mut rng, m, size) {
            z[j] = true;
        }
        let complement = z.iter().map(|b| !b).collect();
        out.push((z, 1.0));
        out.push((complement, 1.0));
    }
    out
}

fn masked_output(
    model: &Model,
    x: &[f64],
    seg: &[usize],
    present: &[bool],
    baseline: f64,
    class: usize,
    kind: OutputKind,
) -> Result<f64> {
    let input: Vec<f64> = x
        .iter()
        .zip(seg)
        .map(|(&v, &s)| if present[s] { v } else { baseline })
        .collect();
    Ok(model.output(&input, kind)?[class])
}

/// Gaussian elimination with partial pivoting on a dense square system.
pub(crate) fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() <= 1e-12 * scale {
            return Err(Error::Singular(
                "KernelSHAP regression is rank deficient; increase the sample count or set ridge > 0"
                    .into(),
            ));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            let (upper, lower) = a.split_at_mut(row);
            for (target, pivot_value) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *target -= f * pivot_value;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Per-superpixel Shapley estimates for the class-`k` output.
///
/// `stream` selects the coalition sample (typically the sample id), so results
/// do not depend on the order in which samples are explained.
pub fn superpixel_values(
    model: &Model,
    x: &[f64],
    shape: ImageShape,
    k: usize,
    spec: &ShapSpec,
    kind: OutputKind,
    stream: u64,
) -> Result<Vec<f64>> {
    let m = spec.superpixels(shape)?;
    if x.len() != shape.dim() {
        return Err(Error::Shape(format!(
            "input has {} values, image shape needs {}",
            x.len(),
            shape.dim()
        )));
    }
    let seg = segment(shape, spec.patch);
    let f_base = masked_output(model, x, &seg, &vec![false; m], spec.baseline, k, kind)?;
    let f_full = model.output(x, kind)?[k];
    let delta = f_full - f_base;
    if m == 1 {
        return Ok(vec![delta]);
    }

    // Unknowns phi_0..phi_{m-2}; phi_{m-1} = delta - sum(others).
    let n = m - 1;
    let mut xtwx = vec![vec![0.0; n]; n];
    let mut xtwy = vec![0.0; n];
    let mut row = vec![0.0; n];
    for (z, w) in coalitions(m, spec, stream) {
        let y = masked_output(model, x, &seg, &z, spec.baseline, k, kind)? - f_base;
        let last = f64::from(u8::from(z[m - 1]));
        let target = y - last * delta;
        for (r, &zj) in row.iter_mut().zip(&z) {
            *r = f64::from(u8::from(zj)) - last;
        }
        for i in 0..n {
            if row[i] == 0.0 {
                continue;
            }
            let wi = w * row[i];
            xtwy[i] += wi * target;
            for j in 0..n {
                xtwx[i][j] += wi * row[j];
            }
        }
    }
    for (i, r) in xtwx.iter_mut().enumerate() {
        r[i] += spec.ridge;
    }
    let mut phi = solve(xtwx, xtwy)?;
    let rest: f64 = phi.iter().sum();
    phi.push(delta - rest);
    Ok(phi)
}

/// KernelSHAP attribution with each superpixel value broadcast to its pixels.
pub fn kernel_shap(
    model: &Model,
    x: &[f64],
    shape: ImageShape,
    k: usize,
    spec: &ShapSpec,
    kind: OutputKind,
    stream: u64,
) -> Result<Attribution> {
    let phi = superpixel_values(model, x, shape, k, spec, kind, stream)?;
    let seg = segment(shape, spec.patch);
    Attribution::checked(seg.iter().map(|&s| phi[s]).collect(), Method::KernelShap, k)
}
