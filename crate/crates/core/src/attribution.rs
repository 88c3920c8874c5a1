//! Explanation methods: gradient saliency, LRP (epsilon rule) and KernelSHAP
//! over square superpixels.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageShape, Sample};
use crate::error::{Error, Result};
use crate::nn::{Model, OutputKind};

pub mod export;
mod shap;

pub use shap::{kernel_shap, kernel_weight, superpixel_values, ShapSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lrp,
    Saliency,
    KernelShap,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Lrp, Method::Saliency, Method::KernelShap];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lrp => "LRP",
            Method::Saliency => "Saliency",
            Method::KernelShap => "KernelSHAP",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "lrp" => Ok(Method::Lrp),
            "saliency" => Ok(Method::Saliency),
            "kernelshap" | "kernel_shap" | "shap" => Ok(Method::KernelShap),
            _ => Err(Error::Config(format!("unknown attribution method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub values: Vec<f64>,
    pub method: Method,
    pub class: usize,
    pub normalized: bool,
}

impl Attribution {
    fn checked(values: Vec<f64>, method: Method, class: usize) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("{method} produced a non-finite attribution")));
        }
        Ok(Self {
            values,
            method,
            class,
            normalized: false,
        })
    }
}

/// |d f_k / d x|, elementwise.
pub fn saliency(model: &Model, x: &[f64], k: usize, kind: OutputKind) -> Result<Attribution> {
    let grad = model.input_gradient(x, k, kind)?;
    Attribution::checked(grad.into_iter().map(f64::abs).collect(), Method::Saliency, k)
}

/// LRP epsilon rule, starting from the class-`k` logit.
///
/// `epsilon = None` uses `1e-6 * mean |z|` per layer, where `z` are the
/// layer's pre-activations (bias included).
pub fn lrp(model: &Model, x: &[f64], k: usize, epsilon: Option<f64>) -> Result<Attribution> {
    if k >= model.class_count() {
        return Err(Error::Shape(format!("class {k} out of range")));
    }
    if let Some(e) = epsilon {
        if e.is_nan() || e < 0.0 {
            return Err(Error::Config(format!("LRP epsilon must be >= 0, got {e}")));
        }
    }
    let trace = model.trace(x)?;
    let logits = trace.inputs.last().unwrap();
    let mut relevance = vec![0.0; logits.len()];
    relevance[k] = logits[k];

    for (l, layer) in model.layers().iter().enumerate().rev() {
        let z = &trace.pre[l];
        let eps = epsilon.unwrap_or_else(|| {
            1e-6 * z.iter().map(|v| v.abs()).sum::<f64>() / z.len() as f64
        });
        let mut back = vec![0.0; layer.in_dim];
        for (j, (&r, &zj)) in relevance.iter().zip(z).enumerate() {
            if r == 0.0 {
                continue;
            }
            let denom = zj + eps * if zj >= 0.0 { 1.0 } else { -1.0 };
            if denom == 0.0 {
                return Err(Error::Numeric(format!(
                    "zero LRP denominator at layer {l}, unit {j}; use epsilon > 0"
                )));
            }
            let s = r / denom;
            for (b, &w) in back.iter_mut().zip(layer.row(j)) {
                *b += w * s;
            }
        }
        for (b, &a) in back.iter_mut().zip(&trace.inputs[l]) {
            *b *= a;
        }
        relevance = back;
    }
    Attribution::checked(relevance, Method::Lrp, k)
}

/// Scale by the largest absolute value. All-zero input is returned unchanged.
pub fn normalize_attribution(e: &Attribution) -> Attribution {
    let max = e.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let values = if max > 0.0 {
        e.values.iter().map(|v| v / max).collect()
    } else {
        e.values.clone()
    };
    Attribution {
        values,
        normalized: true,
        ..e.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttributionSettings {
    /// Output differentiated by Saliency and explained by KernelSHAP.
    pub output: OutputKind,
    pub lrp_epsilon: Option<f64>,
    pub shap: ShapSpec,
}

impl Default for AttributionSettings {
    fn default() -> Self {
        Self {
            output: OutputKind::Probability,
            lrp_epsilon: None,
            shap: ShapSpec::default(),
        }
    }
}

pub fn attribute(
    model: &Model,
    sample: &Sample,
    shape: ImageShape,
    method: Method,
    class: usize,
    settings: &AttributionSettings,
) -> Result<Attribution> {
    match method {
        Method::Saliency => saliency(model, &sample.pixels, class, settings.output),
        Method::Lrp => lrp(model, &sample.pixels, class, settings.lrp_epsilon),
        Method::KernelShap => kernel_shap(
            model,
            &sample.pixels,
            shape,
            class,
            &settings.shap,
            settings.output,
            sample.id as u64,
        ),
    }
}

/// Attributions for every (method, sample), explaining the predicted class.
/// Result is indexed `[method][sample]`.
pub fn attribute_dataset(
    model: &Model,
    dataset: &Dataset,
    methods: &[Method],
    settings: &AttributionSettings,
) -> Result<Vec<Vec<Attribution>>> {
    methods
        .iter()
        .map(|&method| {
            dataset
                .samples
                .par_iter()
                .map(|s| {
                    let class = model.predict(&s.pixels)?;
                    attribute(model, s, dataset.shape, method, class, settings)
                })
                .collect()
        })
        .collect()
}
