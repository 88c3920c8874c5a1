//! Exhaustive search over a feasible hyperparameter set.
//!
//! Intra-manipulation picks the configuration that gives one method its most
//! favorable score. Inter-manipulation picks the configuration that maximizes
//! one method's advantage over all others. "Favorable" follows the score
//! direction: for AUC (lower is better) both searches minimize.

use serde::{Deserialize, Serialize};

use crate::attribution::{Attribution, Method};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::faithfulness::{evaluate, Direction, FaithfulnessConfig, Perturbation};
use crate::nn::Model;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeasibleSet {
    pub partition_sizes: Vec<usize>,
    pub perturbations: Vec<Perturbation>,
    pub normalize_options: Vec<bool>,
}

impl Default for FeasibleSet {
    /// The 28x28 grayscale axes: C in {14, 28, 56}, three perturbations, normalize on/off.
    fn default() -> Self {
        Self {
            partition_sizes: vec![14, 28, 56],
            perturbations: Perturbation::ALL.to_vec(),
            normalize_options: vec![true, false],
        }
    }
}

impl FeasibleSet {
    pub fn validate(&self) -> Result<()> {
        if self.partition_sizes.is_empty()
            || self.perturbations.is_empty()
            || self.normalize_options.is_empty()
        {
            return Err(Error::Config("feasible set axes must be non-empty".into()));
        }
        Ok(())
    }

    /// Cartesian product in axis order (partition size, perturbation,
    /// normalize); remaining fields are copied from `template`.
    pub fn configs(&self, template: &FaithfulnessConfig) -> Vec<FaithfulnessConfig> {
        let mut out = Vec::new();
        for &partition_size in &self.partition_sizes {
            for &perturbation in &self.perturbations {
                for &normalize in &self.normalize_options {
                    out.push(FaithfulnessConfig {
                        partition_size,
                        perturbation,
                        normalize,
                        ..template.clone()
                    });
                }
            }
        }
        out
    }

    pub fn contains(&self, c: &FaithfulnessConfig) -> bool {
        self.partition_sizes.contains(&c.partition_size)
            && self.perturbations.contains(&c.perturbation)
            && self.normalize_options.contains(&c.normalize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub methods: Vec<Method>,
    pub configs: Vec<FaithfulnessConfig>,
    /// scores[m][c]; `None` marks a cell with no defined sample score.
    pub scores: Vec<Vec<Option<f64>>>,
    /// Undefined-sample counts, same layout as `scores`.
    pub undefined: Vec<Vec<usize>>,
    pub direction: Direction,
}

impl GridResult {
    pub fn new(
        methods: Vec<Method>,
        configs: Vec<FaithfulnessConfig>,
        scores: Vec<Vec<Option<f64>>>,
        direction: Direction,
    ) -> Result<Self> {
        if scores.len() != methods.len() || scores.iter().any(|r| r.len() != configs.len()) {
            return Err(Error::Shape(format!(
                "score matrix must be {} x {}",
                methods.len(),
                configs.len()
            )));
        }
        let undefined = scores.iter().map(|r| vec![0; r.len()]).collect();
        Ok(Self {
            methods,
            configs,
            scores,
            undefined,
            direction,
        })
    }

    pub fn method_index(&self, m: Method) -> Option<usize> {
        self.methods.iter().position(|&x| x == m)
    }

    pub fn config_index(&self, c: &FaithfulnessConfig) -> Option<usize> {
        self.configs.iter().position(|x| x == c)
    }

    /// Scores of all methods in one configuration.
    pub fn column(&self, c: usize) -> Vec<Option<f64>> {
        self.scores.iter().map(|r| r[c]).collect()
    }

    /// Cells without a score, as (method, config) index pairs.
    pub fn gaps(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (m, row) in self.scores.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if v.is_none() {
                    out.push((m, c));
                }
            }
        }
        out
    }
}

/// Mean score for every (method, config) in the feasible set. Attributions
/// are computed once upstream and reused; only normalization is re-applied.
pub fn grid_evaluate(
    model: &Model,
    dataset: &Dataset,
    methods: &[Method],
    attributions: &[Vec<Attribution>],
    feasible: &FeasibleSet,
    template: &FaithfulnessConfig,
) -> Result<GridResult> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot run a grid on an empty dataset".into()));
    }
    if methods.len() != attributions.len() {
        return Err(Error::Shape(format!(
            "{} methods but {} attribution sets",
            methods.len(),
            attributions.len()
        )));
    }
    feasible.validate()?;
    let configs = feasible.configs(template);
    let mut scores = vec![Vec::with_capacity(configs.len()); methods.len()];
    let mut undefined = vec![Vec::with_capacity(configs.len()); methods.len()];
    for config in &configs {
        let column = evaluate(model, dataset, attributions, config)?;
        for (m, s) in column.into_iter().enumerate() {
            scores[m].push(s.mean);
            undefined[m].push(s.undefined);
        }
    }
    Ok(GridResult {
        methods: methods.to_vec(),
        configs,
        scores,
        undefined,
        direction: template.aggregation.direction(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Intra,
    Inter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationOutcome {
    pub mode: Mode,
    pub focus: Method,
    pub methods: Vec<Method>,
    pub chosen: FaithfulnessConfig,
    pub chosen_index: usize,
    pub chosen_scores: Vec<Option<f64>>,
    pub base: FaithfulnessConfig,
    pub base_scores: Vec<Option<f64>>,
    /// Value of the optimized objective at the chosen configuration.
    pub objective: f64,
}

fn focus_index(grid: &GridResult, focus: Method) -> Result<usize> {
    grid.method_index(focus)
        .ok_or_else(|| Error::Config(format!("{focus} is not part of the grid")))
}

fn base_index(grid: &GridResult, base: &FaithfulnessConfig) -> Result<usize> {
    grid.config_index(base).ok_or_else(|| {
        Error::Config(format!("base config {} is not in the feasible set", base.label()))
    })
}

/// First index whose objective is strictly best, skipping undefined cells.
fn arg_best(objective: impl Iterator<Item = Option<f64>>, direction: Direction) -> Option<(usize, f64)> {
    objective
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .fold(None, |best, (i, v)| match best {
            Some((_, b)) if !direction.better(v, b) => best,
            _ => Some((i, v)),
        })
}

fn outcome(
    grid: &GridResult,
    mode: Mode,
    focus: Method,
    chosen_index: usize,
    objective: f64,
    base: usize,
) -> ManipulationOutcome {
    ManipulationOutcome {
        mode,
        focus,
        methods: grid.methods.clone(),
        chosen: grid.configs[chosen_index].clone(),
        chosen_index,
        chosen_scores: grid.column(chosen_index),
        base: grid.configs[base].clone(),
        base_scores: grid.column(base),
        objective,
    }
}

/// Configuration giving `focus` its best score; ties go to the first config
/// in enumeration order.
pub fn intra_manipulate(
    grid: &GridResult,
    focus: Method,
    base: &FaithfulnessConfig,
) -> Result<ManipulationOutcome> {
    let m = focus_index(grid, focus)?;
    let b = base_index(grid, base)?;
    let (best, value) = arg_best(grid.scores[m].iter().copied(), grid.direction)
        .ok_or_else(|| Error::IncompleteGrid(format!("no defined score for {focus}")))?;
    Ok(outcome(grid, Mode::Intra, focus, best, value, b))
}

/// Balanced advantage of `focus` in config `c`: `(M-1) * s_focus - sum of the others`.
/// `None` if any cell in the column is undefined.
pub fn advantage(grid: &GridResult, m: usize, c: usize) -> Option<f64> {
    let column = grid.column(c);
    let others: Option<f64> = column
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != m)
        .map(|(_, v)| *v)
        .sum();
    Some((grid.methods.len() - 1) as f64 * column[m]? - others?)
}

/// Configuration maximizing `focus`'s advantage over the other methods
/// (minimizing it when lower scores are better).
pub fn inter_manipulate(
    grid: &GridResult,
    focus: Method,
    base: &FaithfulnessConfig,
) -> Result<ManipulationOutcome> {
    if grid.methods.len() < 2 {
        return Err(Error::Config("inter-manipulation needs at least two methods".into()));
    }
    let m = focus_index(grid, focus)?;
    let b = base_index(grid, base)?;
    let (best, value) = arg_best(
        (0..grid.configs.len()).map(|c| advantage(grid, m, c)),
        grid.direction,
    )
    .ok_or_else(|| Error::IncompleteGrid("no fully defined configuration".into()))?;
    Ok(outcome(grid, Mode::Inter, focus, best, value, b))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    pub axis: String,
    pub value: String,
    pub count: usize,
}

/// How often each feasible value appears among the chosen configurations.
/// Values outside `feasible` are appended after the feasible ones.
pub fn occurrence_summary(outcomes: &[ManipulationOutcome], feasible: &FeasibleSet) -> Vec<Occurrence> {
    fn tally<T: PartialEq + Clone + ToString>(
        axis: &str,
        values: &[T],
        chosen: impl Iterator<Item = T>,
        out: &mut Vec<Occurrence>,
    ) {
        let mut rows: Vec<(T, usize)> = Vec::new();
        for v in values {
            if !rows.iter().any(|(x, _)| x == v) {
                rows.push((v.clone(), 0));
            }
        }
        for c in chosen {
            match rows.iter_mut().find(|(x, _)| *x == c) {
                Some((_, n)) => *n += 1,
                None => rows.push((c, 1)),
            }
        }
        out.extend(rows.into_iter().map(|(v, count)| Occurrence {
            axis: axis.to_string(),
            value: v.to_string(),
            count,
        }));
    }

    let mut out = Vec::new();
    tally(
        "partition_size",
        &feasible.partition_sizes,
        outcomes.iter().map(|o| o.chosen.partition_size),
        &mut out,
    );
    tally(
        "perturbation",
        &feasible.perturbations,
        outcomes.iter().map(|o| o.chosen.perturbation),
        &mut out,
    );
    tally(
        "normalize",
        &feasible.normalize_options,
        outcomes.iter().map(|o| o.chosen.normalize),
        &mut out,
    );
    out
}
