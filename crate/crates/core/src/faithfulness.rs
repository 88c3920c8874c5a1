//! Faithfulness evaluation: rank features by attribution, perturb them
//! cumulatively partition by partition, record the model output after each
//! step and aggregate the resulting curve into one score.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{normalize_attribution, Attribution};
use crate::data::{Dataset, ImageShape, Sample};
use crate::error::{Error, Result};
use crate::nn::{argmax, Model, OutputKind};
use crate::seed;

/// Standard deviation of the blur used by [`Perturbation::GaussianBlur`], in pixels.
pub const BLUR_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Draw from N(0, 1).
    GaussianNoise,
    /// Draw from U(0, 1).
    UniformNoise,
    /// Take the value of a Gaussian-blurred copy of the original image.
    GaussianBlur,
}

impl Perturbation {
    pub const ALL: [Perturbation; 3] = [
        Perturbation::GaussianNoise,
        Perturbation::UniformNoise,
        Perturbation::GaussianBlur,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Perturbation::GaussianNoise => "gaussian_noise",
            Perturbation::UniformNoise => "uniform_noise",
            Perturbation::GaussianBlur => "gaussian_blur",
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Perturbation::ALL
            .into_iter()
            .find(|p| p.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown perturbation {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Auc,
    Correlation,
}

impl Aggregation {
    pub fn direction(self) -> Direction {
        match self {
            Aggregation::Auc => Direction::LowerIsBetter,
            Aggregation::Correlation => Direction::HigherIsBetter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    Descending,
    Ascending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
}

impl Direction {
    /// True if `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::LowerIsBetter => a < b,
            Direction::HigherIsBetter => a > b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaithfulnessConfig {
    /// Features perturbed per step (C).
    pub partition_size: usize,
    pub perturbation: Perturbation,
    pub normalize: bool,
    pub aggregation: Aggregation,
    pub order: SortOrder,
    pub seed: u64,
    /// Model output tracked along the curve.
    pub monitor: OutputKind,
}

impl Default for FaithfulnessConfig {
    /// C = 28, uniform noise, no normalization, AUC.
    fn default() -> Self {
        Self {
            partition_size: 28,
            perturbation: Perturbation::UniformNoise,
            normalize: false,
            aggregation: Aggregation::Auc,
            order: SortOrder::Descending,
            seed: 0,
            monitor: OutputKind::Probability,
        }
    }
}

impl FaithfulnessConfig {
    /// Short human-readable identifier of the manipulable axes.
    pub fn label(&self) -> String {
        format!(
            "C={}|{}|norm={}",
            self.partition_size, self.perturbation, self.normalize
        )
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.partition_size == 0 || self.partition_size > dim {
            return Err(Error::Config(format!(
                "partition size {} must be in 1..={dim}",
                self.partition_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub sets: Vec<Vec<usize>>,
    /// Sum of attributions inside each set.
    pub sums: Vec<f64>,
}

impl PartitionPlan {
    /// Number of perturbation steps K.
    pub fn steps(&self) -> usize {
        self.sets.len()
    }
}

/// Sort feature indices by attribution (ties by ascending index) and chunk
/// them into consecutive sets of `partition_size`; the last set may be smaller.
pub fn build_partition_plan(
    values: &[f64],
    partition_size: usize,
    order: SortOrder,
) -> Result<PartitionPlan> {
    if partition_size == 0 || partition_size > values.len() {
        return Err(Error::Config(format!(
            "partition size {partition_size} must be in 1..={}",
            values.len()
        )));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let by_value = match order {
            SortOrder::Descending => values[b].total_cmp(&values[a]),
            SortOrder::Ascending => values[a].total_cmp(&values[b]),
        };
        by_value.then(a.cmp(&b))
    });
    let sets: Vec<Vec<usize>> = idx.chunks(partition_size).map(<[usize]>::to_vec).collect();
    let sums = sets
        .iter()
        .map(|s| s.iter().map(|&i| values[i]).sum())
        .collect();
    Ok(PartitionPlan { sets, sums })
}

fn reflect(i: isize, n: usize) -> usize {
    // Half-sample symmetric: ... b a | a b c ... c b a | a b ...
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Separable Gaussian blur, kernel truncated at 3 sigma, reflect padding,
/// applied per channel.
pub fn gaussian_blur(x: &[f64], shape: ImageShape, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = {
        let raw: Vec<f64> = (-radius..=radius)
            .map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|k| k / total).collect()
    };
    let (w, h) = (shape.width, shape.height);
    let mut tmp = vec![0.0; x.len()];
    for y in 0..h {
        for xx in 0..w {
            for c in 0..shape.channels {
                tmp[shape.index(xx, y, c)] = kernel
                    .iter()
                    .enumerate()
                    .map(|(t, k)| {
                        let sx = reflect(xx as isize + t as isize - radius, w);
                        k * x[shape.index(sx, y, c)]
                    })
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; x.len()];
    for y in 0..h {
        for xx in 0..w {
            for c in 0..shape.channels {
                out[shape.index(xx, y, c)] = kernel
                    .iter()
                    .enumerate()
                    .map(|(t, k)| {
                        let sy = reflect(y as isize + t as isize - radius, h);
                        k * tmp[shape.index(xx, sy, c)]
                    })
                    .sum();
            }
        }
    }
    out
}

fn replace(
    target: &mut [f64],
    indices: &[usize],
    perturbation: Perturbation,
    blurred: Option<&[f64]>,
    rng: &mut impl Rng,
) {
    match perturbation {
        Perturbation::GaussianNoise => {
            for &i in indices {
                target[i] = rng.sample(StandardNormal);
            }
        }
        Perturbation::UniformNoise => {
            for &i in indices {
                target[i] = rng.random::<f64>();
            }
        }
        Perturbation::GaussianBlur => {
            let blurred = blurred.expect("blurred image required");
            for &i in indices {
                target[i] = blurred[i];
            }
        }
    }
}

/// Replace the listed pixels of `x`. Noise is drawn in the order of `indices`.
pub fn perturb(
    x: &[f64],
    shape: ImageShape,
    indices: &[usize],
    perturbation: Perturbation,
    seed: u64,
) -> Result<Vec<f64>> {
    if x.len() != shape.dim() {
        return Err(Error::Shape(format!(
            "image has {} values, shape needs {}",
            x.len(),
            shape.dim()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
        return Err(Error::Shape(format!("index {bad} out of range")));
    }
    let blurred =
        (perturbation == Perturbation::GaussianBlur).then(|| gaussian_blur(x, shape, BLUR_SIGMA));
    let mut out = x.to_vec();
    replace(
        &mut out,
        indices,
        perturbation,
        blurred.as_deref(),
        &mut seed::rng(&[seed]),
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaithfulnessCurve {
    /// outputs[0] is the unperturbed output; outputs[k] follows k steps.
    pub outputs: Vec<f64>,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    pub direction: Direction,
}

/// Curve of the monitored output (class = argmax of the unperturbed
/// prediction) as S_1, S_1 ∪ S_2, ... are replaced. Step `k` draws its noise
/// from the stream keyed by (config seed, sample id, k).
pub fn faithfulness_curve(
    model: &Model,
    sample: &Sample,
    shape: ImageShape,
    e: &Attribution,
    config: &FaithfulnessConfig,
) -> Result<(FaithfulnessCurve, PartitionPlan)> {
    let x = &sample.pixels;
    if x.len() != shape.dim() || e.values.len() != x.len() {
        return Err(Error::Shape(format!(
            "sample has {} values, attribution {}, shape {}",
            x.len(),
            e.values.len(),
            shape.dim()
        )));
    }
    config.validate(x.len())?;
    let normalized;
    let e = if config.normalize && !e.normalized {
        normalized = normalize_attribution(e);
        &normalized
    } else {
        e
    };
    let plan = build_partition_plan(&e.values, config.partition_size, config.order)?;

    let class = argmax(&model.forward(x)?);
    let blurred = (config.perturbation == Perturbation::GaussianBlur)
        .then(|| gaussian_blur(x, shape, BLUR_SIGMA));

    let mut current = x.clone();
    let mut outputs = Vec::with_capacity(plan.steps() + 1);
    outputs.push(model.output(&current, config.monitor)?[class]);
    for (k, set) in plan.sets.iter().enumerate() {
        let mut rng = seed::rng(&[config.seed, sample.id as u64, k as u64 + 1]);
        replace(&mut current, set, config.perturbation, blurred.as_deref(), &mut rng);
        outputs.push(model.output(&current, config.monitor)?[class]);
    }
    Ok((FaithfulnessCurve { outputs, class }, plan))
}

/// Trapezoidal area under the curve with unit spacing.
pub fn auc(curve: &FaithfulnessCurve) -> Score {
    let value = curve
        .outputs
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .sum();
    Score {
        value,
        direction: Direction::LowerIsBetter,
    }
}

/// Pearson correlation between per-step output drops and partition sums.
/// `None` when either series has zero variance or there are fewer than two steps.
pub fn correlation(curve: &FaithfulnessCurve, plan: &PartitionPlan) -> Option<Score> {
    let drops: Vec<f64> = curve.outputs.windows(2).map(|w| w[0] - w[1]).collect();
    pearson(&drops, &plan.sums).map(|value| Score {
        value,
        direction: Direction::HigherIsBetter,
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Score of one sample; `None` marks an undefined correlation.
pub fn sample_score(
    model: &Model,
    sample: &Sample,
    shape: ImageShape,
    e: &Attribution,
    config: &FaithfulnessConfig,
) -> Result<Option<f64>> {
    let (curve, plan) = faithfulness_curve(model, sample, shape, e, config)?;
    Ok(match config.aggregation {
        Aggregation::Auc => Some(auc(&curve).value),
        Aggregation::Correlation => correlation(&curve, &plan).map(|s| s.value),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodScore {
    /// Mean over samples with a defined score; `None` if there were none.
    pub mean: Option<f64>,
    pub used: usize,
    pub undefined: usize,
}

/// Mean score per method. `attributions[m][s]` explains `dataset.samples[s]`.
///
/// Samples are scored in parallel; per-sample scores are then summed in
/// sample order, so the result equals sequential execution bit for bit.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    attributions: &[Vec<Attribution>],
    config: &FaithfulnessConfig,
) -> Result<Vec<MethodScore>> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot evaluate an empty dataset".into()));
    }
    config.validate(dataset.dim())?;
    attributions
        .iter()
        .map(|per_sample| {
            if per_sample.len() != dataset.len() {
                return Err(Error::Shape(format!(
                    "{} attributions for {} samples",
                    per_sample.len(),
                    dataset.len()
                )));
            }
            let scores = dataset
                .samples
                .par_iter()
                .zip(per_sample)
                .map(|(s, e)| sample_score(model, s, dataset.shape, e, config))
                .collect::<Result<Vec<_>>>()?;
            Ok(mean_of_defined(&scores))
        })
        .collect()
}

pub(crate) fn mean_of_defined(scores: &[Option<f64>]) -> MethodScore {
    let (sum, used) = scores
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    MethodScore {
        mean: (used > 0).then(|| sum / used as f64),
        used,
        undefined: scores.len() - used,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::Method;

    #[test]
    fn plan_hand_sorted() {
        let plan = build_partition_plan(&[3.0, 1.0, 2.0, 0.0], 2, SortOrder::Descending).unwrap();
        assert_eq!(plan.sets, vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(plan.sums, vec![5.0, 1.0]);
        let asc = build_partition_plan(&[3.0, 1.0, 2.0, 0.0], 2, SortOrder::Ascending).unwrap();
        assert_eq!(asc.sets, vec![vec![3, 1], vec![2, 0]]);
    }

    #[test]
    fn plan_ties_follow_index_order() {
        let plan = build_partition_plan(&[1.0; 5], 2, SortOrder::Descending).unwrap();
        assert_eq!(plan.sets, vec![vec![0, 1], vec![2, 3], vec![4]]);
    }

    #[test]
    fn plan_rejects_bad_partition_size() {
        assert!(build_partition_plan(&[1.0, 2.0], 0, SortOrder::Descending).is_err());
        assert!(build_partition_plan(&[1.0, 2.0], 3, SortOrder::Descending).is_err());
    }

    #[test]
    fn plan_for_mnist_geometry() {
        let values: Vec<f64> = (0..784).map(|i| ((i * 37) % 101) as f64 - 50.0).collect();
        let plan = build_partition_plan(&values, 28, SortOrder::Descending).unwrap();
        assert_eq!(plan.steps(), 28);
        assert!(plan.sets.iter().all(|s| s.len() == 28));
        let total: f64 = values.iter().sum();
        assert!((plan.sums.iter().sum::<f64>() - total).abs() < 1e-9);
    }

    #[test]
    fn perturb_empty_set_is_identity() {
        let shape = ImageShape::gray(3, 3);
        let x: Vec<f64> = (0..9).map(|i| i as f64 / 9.0).collect();
        for p in Perturbation::ALL {
            assert_eq!(perturb(&x, shape, &[], p, 1).unwrap(), x);
        }
    }

    #[test]
    fn perturb_touches_only_listed_indices_and_is_deterministic() {
        let shape = ImageShape::gray(4, 4);
        let x = vec![0.25; 16];
        let idx = [1, 5, 9];
        let a = perturb(&x, shape, &idx, Perturbation::UniformNoise, 42).unwrap();
        let b = perturb(&x, shape, &idx, Perturbation::UniformNoise, 42).unwrap();
        assert_eq!(a, b);
        for i in 0..16 {
            if idx.contains(&i) {
                assert!((0.0..1.0).contains(&a[i]));
            } else {
                assert_eq!(a[i], x[i]);
            }
        }
        let full: Vec<usize> = (0..16).collect();
        assert_eq!(
            perturb(&x, shape, &full, Perturbation::GaussianNoise, 7).unwrap(),
            perturb(&x, shape, &full, Perturbation::GaussianNoise, 7).unwrap()
        );
    }

    #[test]
    fn blur_of_constant_image_is_constant() {
        let shape = ImageShape::gray(28, 28);
        let x = vec![0.7; 784];
        let all: Vec<usize> = (0..784).collect();
        let out = perturb(&x, shape, &all, Perturbation::GaussianBlur, 0).unwrap();
        assert!(out.iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn blur_preserves_mass_and_spreads_a_point() {
        let shape = ImageShape::gray(21, 21);
        let mut x = vec![0.0; 441];
        x[shape.index(10, 10, 0)] = 1.0;
        let b = gaussian_blur(&x, shape, BLUR_SIGMA);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(b[shape.index(10, 10, 0)] < 0.05);
        assert!((b[shape.index(9, 10, 0)] - b[shape.index(11, 10, 0)]).abs() < 1e-15);
    }

    #[test]
    fn reflect_indexing() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn unknown_perturbation_tag() {
        assert!(matches!("salt".parse::<Perturbation>(), Err(Error::Config(_))));
        assert_eq!(
            "gaussian_blur".parse::<Perturbation>().unwrap(),
            Perturbation::GaussianBlur
        );
    }

    #[test]
    fn auc_examples() {
        let flat = FaithfulnessCurve {
            outputs: vec![1.0; 5],
            class: 0,
        };
        assert_eq!(auc(&flat).value, 4.0);
        let drop = FaithfulnessCurve {
            outputs: vec![1.0, 0.0],
            class: 0,
        };
        assert_eq!(auc(&drop).value, 0.5);
    }

    #[test]
    fn correlation_examples() {
        let plan = PartitionPlan {
            sets: vec![vec![0], vec![1], vec![2]],
            sums: vec![3.0, 2.0, 1.0],
        };
        // drops 0.3, 0.2, 0.1
        let curve = FaithfulnessCurve {
            outputs: vec![1.0, 0.7, 0.5, 0.4],
            class: 0,
        };
        assert!((correlation(&curve, &plan).unwrap().value - 1.0).abs() < 1e-12);
        // drops -3, -2, -1
        let neg = FaithfulnessCurve {
            outputs: vec![0.0, 3.0, 5.0, 6.0],
            class: 0,
        };
        assert!((correlation(&neg, &plan).unwrap().value + 1.0).abs() < 1e-12);
        let flat = FaithfulnessCurve {
            outputs: vec![1.0; 4],
            class: 0,
        };
        assert!(correlation(&flat, &plan).is_none());
    }

    #[test]
    fn mean_skips_undefined() {
        let m = mean_of_defined(&[Some(1.0), None, Some(3.0)]);
        assert_eq!(m.mean, Some(2.0));
        assert_eq!((m.used, m.undefined), (2, 1));
        assert_eq!(mean_of_defined(&[None]).mean, None);
    }

    #[test]
    fn input_independent_model_gives_flat_curve() {
        use crate::nn::{Activation, Dense};
        let layer = Dense::new(9, 2, vec![0.0; 18], vec![0.4, -0.2], Activation::Identity).unwrap();
        let model = Model::new(vec![layer]).unwrap();
        let shape = ImageShape::gray(3, 3);
        let sample = Sample {
            id: 0,
            pixels: vec![0.5; 9],
            label: 0,
        };
        let e = Attribution {
            values: (0..9).map(f64::from).collect(),
            method: Method::Saliency,
            class: 0,
            normalized: false,
        };
        let config = FaithfulnessConfig {
            partition_size: 2,
            ..FaithfulnessConfig::default()
        };
        let (curve, plan) = faithfulness_curve(&model, &sample, shape, &e, &config).unwrap();
        assert_eq!(plan.steps(), 5);
        assert_eq!(curve.outputs.len(), 6);
        assert!(curve.outputs.iter().all(|&v| v == curve.outputs[0]));
    }
}
