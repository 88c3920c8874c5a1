use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use faithgrid::attribution::attribute_dataset;
use faithgrid::data::synthetic::{make_synthetic, SyntheticSpec};
use faithgrid::faithfulness::{correlation, faithfulness_curve, gaussian_blur, pearson, sample_score, BLUR_SIGMA};
use faithgrid::manipulation::advantage;
use faithgrid::nn::{accuracy, train, Activation, Dense, TrainSpec};
use faithgrid::{
    evaluate, grid_evaluate, inter_manipulate, mrr, mrr_cross_dataset, Aggregation, Attribution,
    AttributionSettings, Dataset, Direction, FaithfulnessConfig, FeasibleSet, GridResult,
    ImageShape, Method, Model, OutputKind, Perturbation, Sample,
};

fn small_synthetic(samples: usize, seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        width: 8,
        height: 8,
        classes: 3,
        samples,
        ..SyntheticSpec::default()
    };
    make_synthetic(&spec, seed).unwrap().dataset
}

fn linear_model(weights: &[f64]) -> Model {
    let d = weights.len();
    let mut w = weights.to_vec();
    w.extend(std::iter::repeat_n(0.0, d));
    Model::new(vec![Dense::new(d, 2, w, vec![10.0, 0.0], Activation::Identity).unwrap()]).unwrap()
}

#[test]
fn linear_model_blur_curve_is_partial_sums() {
    let shape = ImageShape::gray(5, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let weights: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pixels: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
    let attr: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let model = linear_model(&weights);
    let sample = Sample { id: 0, pixels: pixels.clone(), label: 0 };
    let e = Attribution { values: attr.clone(), method: Method::Lrp, class: 0, normalized: false };
    let config = FaithfulnessConfig {
        partition_size: 1,
        perturbation: Perturbation::GaussianBlur,
        monitor: OutputKind::Logit,
        ..FaithfulnessConfig::default()
    };
    let (curve, plan) = faithfulness_curve(&model, &sample, shape, &e, &config).unwrap();

    let blurred = gaussian_blur(&pixels, shape, BLUR_SIGMA);
    let mut order: Vec<usize> = (0..20).collect();
    order.sort_by(|&a, &b| attr[b].total_cmp(&attr[a]));
    let mut expected = vec![10.0 + weights.iter().zip(&pixels).map(|(w, x)| w * x).sum::<f64>()];
    for &i in &order {
        let last = *expected.last().unwrap();
        expected.push(last + weights[i] * (blurred[i] - pixels[i]));
    }
    assert_eq!(plan.sets.iter().flatten().copied().collect::<Vec<_>>(), order);
    for (got, want) in curve.outputs.iter().zip(&expected) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn blur_of_constant_image_is_constant() {
    let shape = ImageShape::gray(7, 3);
    let out = gaussian_blur(&[0.25; 21], shape, BLUR_SIGMA);
    assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn pearson_matches_textbook_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.random_range(2..40);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let nf = n as f64;
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        let sab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let saa: f64 = a.iter().map(|x| x * x).sum();
        let sbb: f64 = b.iter().map(|y| y * y).sum();
        let r = (nf * sab - sa * sb) / ((nf * saa - sa * sa).sqrt() * (nf * sbb - sb * sb).sqrt());
        assert!((pearson(&a, &b).unwrap() - r).abs() < 1e-12);
    }
    assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
}

#[test]
fn flat_model_has_undefined_correlation() {
    let data = small_synthetic(6, 3);
    let model = Model::new(vec![
        Dense::new(64, 3, vec![0.0; 192], vec![0.0; 3], Activation::Identity).unwrap(),
    ])
    .unwrap();
    let attributions = attribute_dataset(&model, &data, &[Method::Saliency], &AttributionSettings::default()).unwrap();
    let config = FaithfulnessConfig {
        aggregation: Aggregation::Correlation,
        ..FaithfulnessConfig::default()
    };
    let score = evaluate(&model, &data, &attributions, &config).unwrap()[0];
    assert_eq!(score.mean, None);
    assert_eq!((score.used, score.undefined), (0, 6));
}

#[test]
fn evaluate_is_mean_of_sample_scores() {
    let data = small_synthetic(12, 4);
    let model = Model::mlp(64, &[10], 3, 4).unwrap();
    let attributions = attribute_dataset(&model, &data, &[Method::Saliency, Method::Lrp], &AttributionSettings::default()).unwrap();
    for aggregation in [Aggregation::Auc, Aggregation::Correlation] {
        for perturbation in Perturbation::ALL {
            let config = FaithfulnessConfig {
                partition_size: 5,
                perturbation,
                aggregation,
                ..FaithfulnessConfig::default()
            };
            let scores = evaluate(&model, &data, &attributions, &config).unwrap();
            for (per_sample, got) in attributions.iter().zip(&scores) {
                let defined: Vec<f64> = data
                    .samples
                    .iter()
                    .zip(per_sample)
                    .filter_map(|(s, e)| sample_score(&model, s, data.shape, e, &config).unwrap())
                    .collect();
                assert_eq!(got.used, defined.len());
                assert_eq!(got.used + got.undefined, data.len());
                let mean = defined.iter().sum::<f64>() / defined.len() as f64;
                assert!((got.mean.unwrap() - mean).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn correlation_of_linear_logit_drops() {
    // drops equal w_i (x_i - 0) under zero replacement, so attribution w*x correlates perfectly
    let shape = ImageShape::gray(4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let weights: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pixels: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
    let blurred = gaussian_blur(&pixels, shape, BLUR_SIGMA);
    let values: Vec<f64> = (0..16).map(|i| weights[i] * (pixels[i] - blurred[i])).collect();
    let model = linear_model(&weights);
    let sample = Sample { id: 0, pixels, label: 0 };
    let e = Attribution { values, method: Method::Lrp, class: 0, normalized: false };
    let config = FaithfulnessConfig {
        partition_size: 3,
        perturbation: Perturbation::GaussianBlur,
        monitor: OutputKind::Logit,
        aggregation: Aggregation::Correlation,
        ..FaithfulnessConfig::default()
    };
    let (curve, plan) = faithfulness_curve(&model, &sample, shape, &e, &config).unwrap();
    assert!((correlation(&curve, &plan).unwrap().value - 1.0).abs() < 1e-12);
}

#[test]
fn duplicated_dataset_keeps_the_mean() {
    let data = small_synthetic(8, 6);
    let model = Model::mlp(64, &[10], 3, 6).unwrap();
    let attributions = attribute_dataset(&model, &data, &[Method::Lrp], &AttributionSettings::default()).unwrap();
    let mut doubled = data.clone();
    doubled.samples.extend(data.samples.clone());
    let doubled_attr = vec![[attributions[0].clone(), attributions[0].clone()].concat()];
    let config = FaithfulnessConfig {
        partition_size: 7,
        perturbation: Perturbation::GaussianNoise,
        ..FaithfulnessConfig::default()
    };
    let once = evaluate(&model, &data, &attributions, &config).unwrap()[0];
    let twice = evaluate(&model, &doubled, &doubled_attr, &config).unwrap()[0];
    assert!((once.mean.unwrap() - twice.mean.unwrap()).abs() < 1e-12);
    assert_eq!(twice.used, 2 * once.used);
}

fn synthetic_grid() -> (GridResult, Model, Dataset, Vec<Vec<Attribution>>, FeasibleSet) {
    let data = small_synthetic(10, 7);
    let model = Model::mlp(64, &[12], 3, 7).unwrap();
    let mut settings = AttributionSettings::default();
    settings.shap.patch = 4;
    settings.shap.samples = 64;
    let attributions = attribute_dataset(&model, &data, &Method::ALL, &settings).unwrap();
    let feasible = FeasibleSet {
        partition_sizes: vec![4, 8, 16],
        ..FeasibleSet::default()
    };
    let template = FaithfulnessConfig {
        partition_size: 8,
        ..FaithfulnessConfig::default()
    };
    let grid = grid_evaluate(&model, &data, &Method::ALL, &attributions, &feasible, &template).unwrap();
    (grid, model, data, attributions, feasible)
}

#[test]
fn grid_columns_match_fresh_evaluations_and_inter_is_brute_force_optimal() {
    let (grid, model, data, attributions, feasible) = synthetic_grid();
    assert_eq!(grid.configs.len(), 18);
    assert_eq!(grid.configs, feasible.configs(&grid.configs[0]));
    for (c, config) in grid.configs.iter().enumerate() {
        let fresh = evaluate(&model, &data, &attributions, config).unwrap();
        let column: Vec<Option<f64>> = fresh.iter().map(|s| s.mean).collect();
        assert_eq!(grid.column(c), column, "{}", config.label());
    }

    let base = FaithfulnessConfig {
        partition_size: 8,
        ..FaithfulnessConfig::default()
    };
    for (m, &focus) in Method::ALL.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..18 {
            let column: Vec<f64> = grid.column(c).into_iter().map(Option::unwrap).collect();
            let others: f64 = column.iter().enumerate().filter(|&(i, _)| i != m).map(|(_, v)| v).sum();
            let objective = 2.0 * column[m] - others;
            assert!((advantage(&grid, m, c).unwrap() - objective).abs() < 1e-12);
            if best.is_none_or(|(_, b)| objective < b - 1e-12) {
                best = Some((c, objective));
            }
        }
        let outcome = inter_manipulate(&grid, focus, &base).unwrap();
        assert_eq!(outcome.chosen_index, best.unwrap().0, "{focus}");
        assert_eq!(outcome.base, base);
    }
}

#[test]
fn mrr_recomputed_by_hand() {
    let (grid, ..) = synthetic_grid();
    let r = mrr(&grid).unwrap();
    for m in 0..3 {
        let ranks: Vec<f64> = (0..18)
            .map(|c| {
                let column: Vec<f64> = grid.column(c).into_iter().map(Option::unwrap).collect();
                let below = column
                    .iter()
                    .enumerate()
                    .filter(|&(i, &v)| v < column[m] || (v == column[m] && i < m))
                    .count();
                below as f64 / 3.0
            })
            .collect();
        let mean = ranks.iter().sum::<f64>() / 18.0;
        let var = ranks.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 18.0;
        assert!((r.means[m] - mean).abs() < 1e-12);
        assert!((r.stds[m] - var.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn pooled_mrr_equals_concatenated_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let feasible = FeasibleSet::default();
    let configs = feasible.configs(&FaithfulnessConfig::default());
    let random_grid = |rng: &mut ChaCha8Rng, configs: &[FaithfulnessConfig]| {
        let scores = (0..3)
            .map(|_| configs.iter().map(|_| Some(rng.random_range(0.0..30.0))).collect())
            .collect();
        GridResult::new(Method::ALL.to_vec(), configs.to_vec(), scores, Direction::LowerIsBetter).unwrap()
    };
    let a = random_grid(&mut rng, &configs);
    let b = random_grid(&mut rng, &configs);
    let pooled = mrr_cross_dataset(&[mrr(&a).unwrap(), mrr(&b).unwrap()]).unwrap();

    // one grid holding both datasets' columns side by side
    let mut wide_configs = configs.clone();
    wide_configs.extend(configs.iter().map(|c| FaithfulnessConfig { seed: 1, ..c.clone() }));
    let wide_scores = (0..3).map(|m| [a.scores[m].clone(), b.scores[m].clone()].concat()).collect();
    let wide = GridResult::new(Method::ALL.to_vec(), wide_configs, wide_scores, Direction::LowerIsBetter).unwrap();
    let direct = mrr(&wide).unwrap();
    assert_eq!(pooled.normalized, direct.normalized);
    assert_eq!(pooled.config_count, 36);
    for m in 0..3 {
        assert!((pooled.means[m] - direct.means[m]).abs() < 1e-15);
        assert!((pooled.stds[m] - direct.stds[m]).abs() < 1e-15);
    }
}

#[test]
fn linear_probe_separates_synthetic_classes() {
    let spec = SyntheticSpec {
        samples: 400,
        ..SyntheticSpec::default()
    };
    let train_set = make_synthetic(&spec, 1).unwrap().dataset;
    let test_set = make_synthetic(&spec, 2).unwrap().dataset;
    let outcome = train(
        &train_set,
        Some(&test_set),
        &TrainSpec {
            hidden: vec![],
            epochs: 5,
            ..TrainSpec::default()
        },
    )
    .unwrap();
    assert_eq!(accuracy(&outcome.model, &test_set).unwrap(), 1.0);
    assert_eq!(outcome.test_accuracy, Some(1.0));
    assert!(outcome.epoch_losses.last() < outcome.epoch_losses.first());
}
