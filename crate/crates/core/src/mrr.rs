//! Mean Resilience Rank: rank methods within every configuration, then
//! average the normalized ranks over the feasible set.
//!
//! Ranks are assigned on raw scores (0 = lowest). For lower-is-better
//! scores that makes a small mean rank good; `RankVector::oriented_means`
//! flips them for higher-is-better scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faithfulness::Direction;
use crate::manipulation::GridResult;

/// Integer ranks, 0 for the lowest score. Equal scores are ranked by index.
pub fn rank_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps index order among ties
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0; scores.len()];
    for (rank, &i) in order.iter().enumerate() {
        ranks[i] = rank;
    }
    ranks
}

fn has_tie(scores: &[f64]) -> bool {
    scores
        .iter()
        .enumerate()
        .any(|(i, a)| scores[i + 1..].iter().any(|b| a == b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankVector {
    /// Mean of rank / M over configurations, in `[0, (M-1)/M]`.
    pub means: Vec<f64>,
    /// Population standard deviation of rank / M over configurations.
    pub stds: Vec<f64>,
    /// normalized[m][c] = rank / M of method m in configuration c.
    pub normalized: Vec<Vec<f64>>,
    pub config_count: usize,
    pub direction: Direction,
    /// Configurations in which at least two methods tied.
    pub tied_configs: usize,
}

impl RankVector {
    pub fn method_count(&self) -> usize {
        self.means.len()
    }

    /// Upper bound of any mean rank.
    pub fn max_rank(&self) -> f64 {
        (self.method_count() - 1) as f64 / self.method_count() as f64
    }

    /// Mean ranks where smaller is always better.
    pub fn oriented_means(&self) -> Vec<f64> {
        match self.direction {
            Direction::LowerIsBetter => self.means.clone(),
            Direction::HigherIsBetter => self.means.iter().map(|r| self.max_rank() - r).collect(),
        }
    }

    fn from_normalized(
        normalized: Vec<Vec<f64>>,
        direction: Direction,
        tied_configs: usize,
    ) -> Self {
        let config_count = normalized.first().map_or(0, Vec::len);
        let (means, stds) = normalized.iter().map(|row| mean_std(row)).unzip();
        Self {
            means,
            stds,
            normalized,
            config_count,
            direction,
            tied_configs,
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean ranks of a complete `scores[method][config]` matrix.
pub fn rank_matrix(scores: &[Vec<f64>], direction: Direction) -> Result<RankVector> {
    let m = scores.len();
    if m < 2 {
        return Err(Error::Config("MRR needs at least two methods".into()));
    }
    let configs = scores[0].len();
    if configs == 0 || scores.iter().any(|r| r.len() != configs) {
        return Err(Error::Shape("score rows must be non-empty and of equal length".into()));
    }
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("MRR needs finite scores".into()));
    }
    let mut normalized = vec![Vec::with_capacity(configs); m];
    let mut tied = 0;
    for c in 0..configs {
        let column: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        tied += usize::from(has_tie(&column));
        for (row, r) in normalized.iter_mut().zip(rank_scores(&column)) {
            row.push(r as f64 / m as f64);
        }
    }
    Ok(RankVector::from_normalized(normalized, direction, tied))
}

/// Mean ranks over a grid; every cell must hold a score.
pub fn mrr(grid: &GridResult) -> Result<RankVector> {
    let gaps = grid.gaps();
    if !gaps.is_empty() {
        let cells: Vec<String> = gaps
            .iter()
            .map(|&(mi, ci)| format!("{} @ {}", grid.methods[mi], grid.configs[ci].label()))
            .collect();
        return Err(Error::IncompleteGrid(cells.join("; ")));
    }
    let scores: Vec<Vec<f64>> = grid
        .scores
        .iter()
        .map(|r| r.iter().map(|v| v.unwrap()).collect())
        .collect();
    rank_matrix(&scores, grid.direction)
}

/// Pools the per-configuration ranks of several datasets. Callers are
/// responsible for using the same method order in every vector.
pub fn mrr_cross_dataset(vectors: &[RankVector]) -> Result<RankVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Config("no rank vectors to pool".into()))?;
    let mut normalized = vec![Vec::new(); first.method_count()];
    let mut tied = 0;
    for v in vectors {
        if v.method_count() != first.method_count() {
            return Err(Error::Config(format!(
                "method counts differ: {} vs {}",
                first.method_count(),
                v.method_count()
            )));
        }
        if v.direction != first.direction {
            return Err(Error::Config("score directions differ across datasets".into()));
        }
        for (pooled, row) in normalized.iter_mut().zip(&v.normalized) {
            pooled.extend_from_slice(row);
        }
        tied += v.tied_configs;
    }
    Ok(RankVector::from_normalized(normalized, first.direction, tied))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::Method;
    use crate::faithfulness::FaithfulnessConfig;

    fn grid(columns: &[&[f64]]) -> GridResult {
        let m = columns[0].len();
        let configs = (0..columns.len())
            .map(|i| FaithfulnessConfig {
                partition_size: i + 1,
                ..FaithfulnessConfig::default()
            })
            .collect();
        let scores = (0..m)
            .map(|mi| columns.iter().map(|c| Some(c[mi])).collect())
            .collect();
        GridResult::new(Method::ALL[..m].to_vec(), configs, scores, Direction::LowerIsBetter).unwrap()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_scores(&[25.19, 20.23, 23.94]), vec![2, 0, 1]);
        assert_eq!(rank_scores(&[1.0, 1.0, 1.0]), vec![0, 1, 2]);
        assert_eq!(rank_scores(&[2.0, 1.0, 2.0]), vec![1, 0, 2]);
        assert_eq!(rank_scores(&[5.0]), vec![0]);
    }

    #[test]
    fn hand_example_one_sixth() {
        // method 0 ranked 0 then 1
        let g = grid(&[&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0]]);
        let r = mrr(&g).unwrap();
        assert_eq!(r.means[0], 1.0 / 6.0);
        assert_eq!(r.stds[0], 1.0 / 6.0);
        assert_eq!(r.means[2], 2.0 / 3.0);
        assert_eq!(r.stds[2], 0.0);
        assert_eq!(r.tied_configs, 0);
    }

    #[test]
    fn gaps_are_listed() {
        let mut g = grid(&[&[1.0, 2.0], &[2.0, 1.0]]);
        g.scores[1][0] = None;
        match mrr(&g) {
            Err(Error::IncompleteGrid(msg)) => assert!(msg.contains("Saliency"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cross_dataset_identity_and_pooling() {
        let a = mrr(&grid(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap();
        assert_eq!(mrr_cross_dataset(std::slice::from_ref(&a)).unwrap(), a);
        let pooled = mrr_cross_dataset(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(pooled.means, a.means);
        assert_eq!(pooled.stds, a.stds);
        assert_eq!(pooled.config_count, 4);

        let b = mrr(&grid(&[&[1.0, 2.0, 3.0]])).unwrap();
        assert!(mrr_cross_dataset(&[a, b]).is_err());
    }

    #[test]
    fn oriented_means_flip_for_higher_is_better() {
        let mut g = grid(&[&[0.9, 0.1]]);
        g.direction = Direction::HigherIsBetter;
        let r = mrr(&g).unwrap();
        assert_eq!(r.means, vec![0.5, 0.0]);
        assert_eq!(r.oriented_means(), vec![0.0, 0.5]);
    }

    #[test]
    fn ties_are_counted() {
        let r = mrr(&grid(&[&[1.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert_eq!(r.tied_configs, 1);
    }
}
