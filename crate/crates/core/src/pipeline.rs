//! Run configuration and the staged commands behind the CLI.
//!
//! Output layout, relative to the output directory:
//!
//! ```text
//! <dataset>/model.fgrd               trained model (unless `model` is set)
//! <dataset>/training.json            losses and accuracies
//! <dataset>/attributions/<method>.csv
//! <dataset>/evaluate.csv             base-config mean score per method
//! <dataset>/curves.csv               base-config curves
//! <dataset>/grid.csv                 every (method, config) score
//! <dataset>/intra.csv, inter_<method>.csv, outcomes_<mode>.json, occurrence_<mode>.csv
//! <dataset>/boxplot.csv
//! mrr.csv                            mean rank per method and dataset
//! manifest-<command>.json
//! ```
//!
//! Stages run their prerequisites when the artifacts are missing: a model is
//! trained if no model file exists and attributions are computed if their
//! CSV is absent.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::export::{read_attributions, write_attributions};
use crate::attribution::{attribute_dataset, Attribution, AttributionSettings, Method};
use crate::data::idx::load_idx;
use crate::data::synthetic::{make_synthetic, SyntheticSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::faithfulness::{evaluate, faithfulness_curve, FaithfulnessConfig};
use crate::manipulation::{
    grid_evaluate, inter_manipulate, intra_manipulate, occurrence_summary, FeasibleSet, GridResult,
    ManipulationOutcome, Mode,
};
use crate::mrr::{mrr, mrr_cross_dataset};
use crate::nn::{load_model, save_model, train, Model, TrainSpec};
use crate::report::{self, ArtifactRecord, CurveRow, OutcomeRecord};
use crate::seed;

/// Environment variable overriding `output_dir`.
pub const OUT_ENV: &str = "FAITHGRID_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    /// IDX files. The train pair is only needed by `train`.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        train_images: Option<PathBuf>,
        #[serde(default)]
        train_labels: Option<PathBuf>,
    },
    /// Generated blobs; train and evaluation splits use different seeds.
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub source: Source,
    /// Model file; defaults to `<output_dir>/<name>/model.fgrd`.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainSpec,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("faithgrid-out")
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_samples() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overwrites every component seed (evaluation, KernelSHAP, training,
    /// synthetic data) when the config is resolved.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Evaluation samples per dataset (the first ones after filtering).
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Keep only samples the model classifies correctly.
    #[serde(default)]
    pub correct_only: bool,
    #[serde(default)]
    pub base: FaithfulnessConfig,
    #[serde(default)]
    pub feasible: FeasibleSet,
    #[serde(default)]
    pub attribution: AttributionSettings,
    pub datasets: Vec<DatasetConfig>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a TOML file; relative paths are taken relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let root = path.parent().unwrap_or(Path::new(""));
        config.rebase(root);
        Ok(config)
    }

    fn rebase(&mut self, root: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for d in &mut self.datasets {
            if let Some(m) = &mut d.model {
                fix(m);
            }
            if let Source::Idx {
                images,
                labels,
                train_images,
                train_labels,
            } = &mut d.source
            {
                fix(images);
                fix(labels);
                train_images.iter_mut().for_each(fix);
                train_labels.iter_mut().for_each(fix);
            }
        }
    }

    /// Applies the run seed to all components and validates.
    pub fn resolve(mut self) -> Result<Self> {
        self.base.seed = self.seed;
        self.attribution.shap.seed = self.seed;
        for d in &mut self.datasets {
            d.train.seed = self.seed;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Config("at least one dataset is required".into()));
        }
        let mut names = BTreeSet::new();
        for d in &self.datasets {
            let safe = !d.name.is_empty()
                && d.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            if !safe {
                return Err(Error::Config(format!(
                    "dataset name {:?} must be non-empty ASCII letters, digits, '-' or '_'",
                    d.name
                )));
            }
            if !names.insert(&d.name) {
                return Err(Error::Config(format!("duplicate dataset name {:?}", d.name)));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.methods.iter().collect::<BTreeSet<_>>().len() != self.methods.len() {
            return Err(Error::Config("methods must be unique".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("sample budget must be positive".into()));
        }
        self.feasible.validate()
    }

    /// Hash of everything that determines report contents (the output
    /// directory is excluded).
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        report::config_hash(&c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Command {
    Train,
    Attribute,
    Evaluate,
    Manipulate { mode: Mode, focus: Option<Method> },
    Mrr,
    Report,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Train => "train",
            Command::Attribute => "attribute",
            Command::Evaluate => "evaluate",
            Command::Manipulate { .. } => "manipulate",
            Command::Mrr => "mrr",
            Command::Report => "report",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: Command,
    pub config_hash: String,
    pub config: RunConfig,
    /// Paths relative to the output directory.
    pub artifacts: Vec<ArtifactRecord>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub config_hash: String,
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

fn method_tag(m: Method) -> &'static str {
    match m {
        Method::Lrp => "lrp",
        Method::Saliency => "saliency",
        Method::KernelShap => "kernel_shap",
    }
}

fn mode_tag(m: Mode) -> &'static str {
    match m {
        Mode::Intra => "intra",
        Mode::Inter => "inter",
    }
}

/// One command execution over a resolved config.
pub struct Session {
    config: RunConfig,
    hash: String,
    written: Vec<PathBuf>,
    models: Vec<Option<Model>>,
    grids: Vec<Option<GridResult>>,
}

impl Session {
    pub fn new(config: RunConfig) -> Result<Self> {
        let config = config.resolve()?;
        let hash = config.hash()?;
        let n = config.datasets.len();
        Ok(Self {
            config,
            hash,
            written: Vec::new(),
            models: vec![None; n],
            grids: vec![None; n],
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.output_dir
    }

    fn dataset_dir(&self, i: usize) -> PathBuf {
        self.config.output_dir.join(&self.config.datasets[i].name)
    }

    fn model_path(&self, i: usize) -> PathBuf {
        self.config.datasets[i]
            .model
            .clone()
            .unwrap_or_else(|| self.dataset_dir(i).join("model.fgrd"))
    }

    fn record(&mut self, path: PathBuf) {
        if !self.written.contains(&path) {
            self.written.push(path);
        }
    }

    fn split(&self, i: usize, train_split: bool) -> Result<Dataset> {
        let d = &self.config.datasets[i];
        match &d.source {
            Source::Idx {
                images,
                labels,
                train_images,
                train_labels,
            } => {
                if train_split {
                    match (train_images, train_labels) {
                        (Some(ti), Some(tl)) => load_idx(ti, tl, &d.name, "train"),
                        _ => Err(Error::Config(format!(
                            "dataset {:?} needs train_images and train_labels to train a model",
                            d.name
                        ))),
                    }
                } else {
                    load_idx(images, labels, &d.name, "test")
                }
            }
            Source::Synthetic { spec } => {
                let stream = if train_split { 1 } else { 2 };
                let mut data = make_synthetic(spec, seed::derive(&[self.config.seed, stream]))?.dataset;
                data.name.clone_from(&d.name);
                data.split = if train_split { "train" } else { "test" }.into();
                Ok(data)
            }
        }
    }

    /// Trains and saves the model for dataset `i`, overwriting any existing file.
    pub fn train(&mut self, i: usize) -> Result<()> {
        let train_set = self.split(i, true)?;
        let test_set = self.split(i, false)?;
        let outcome = train(&train_set, Some(&test_set), &self.config.datasets[i].train)?;
        let path = self.model_path(i);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        save_model(&outcome.model, &path)?;
        self.record(path);
        let json = self.dataset_dir(i).join("training.json");
        report::write_json(
            &json,
            &TrainingRecord {
                config_hash: self.hash.clone(),
                epoch_losses: outcome.epoch_losses,
                train_accuracy: outcome.train_accuracy,
                test_accuracy: outcome.test_accuracy,
            },
        )?;
        self.record(json);
        self.models[i] = Some(outcome.model);
        Ok(())
    }

    fn model(&mut self, i: usize) -> Result<Model> {
        if let Some(m) = &self.models[i] {
            return Ok(m.clone());
        }
        let path = self.model_path(i);
        if !path.exists() {
            self.train(i)?;
            return self.model(i);
        }
        let model = load_model(&path)?;
        self.models[i] = Some(model.clone());
        Ok(model)
    }

    /// The evaluation samples of dataset `i`.
    pub fn eval_set(&mut self, i: usize) -> Result<(Model, Dataset)> {
        let model = self.model(i)?;
        let mut data = self.split(i, false)?;
        if model.input_dim() != data.dim() {
            return Err(Error::Shape(format!(
                "model expects {} inputs, dataset {:?} has {}",
                model.input_dim(),
                data.name,
                data.dim()
            )));
        }
        if self.config.correct_only {
            let mut keep = BTreeSet::new();
            for s in &data.samples {
                if model.predict(&s.pixels)? == s.label {
                    keep.insert(s.id);
                }
            }
            data = data.filter(|s| keep.contains(&s.id));
        }
        let data = data.take(self.config.samples);
        if data.is_empty() {
            return Err(Error::Config(format!("dataset {:?} has no evaluation samples", data.name)));
        }
        Ok((model, data))
    }

    fn attribution_path(&self, i: usize, m: Method) -> PathBuf {
        self.dataset_dir(i)
            .join("attributions")
            .join(format!("{}.csv", method_tag(m)))
    }

    /// Computes and writes attributions for every method.
    pub fn attribute(&mut self, i: usize) -> Result<Vec<Vec<Attribution>>> {
        let (model, data) = self.eval_set(i)?;
        let methods = self.config.methods.clone();
        let all = attribute_dataset(&model, &data, &methods, &self.config.attribution)?;
        for (&m, rows) in methods.iter().zip(&all) {
            let path = self.attribution_path(i, m);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            write_attributions(&path, rows)?;
            self.record(path);
        }
        Ok(all)
    }

    fn attributions(&mut self, i: usize, data: &Dataset) -> Result<Vec<Vec<Attribution>>> {
        let methods = self.config.methods.clone();
        if methods.iter().any(|&m| !self.attribution_path(i, m).exists()) {
            return self.attribute(i);
        }
        methods
            .iter()
            .map(|&m| {
                let rows = read_attributions(self.attribution_path(i, m), data.dim())?;
                if rows.len() != data.len() || rows.iter().any(|a| a.method != m) {
                    return Err(Error::Config(format!(
                        "stale attribution file {}; rerun `attribute`",
                        self.attribution_path(i, m).display()
                    )));
                }
                Ok(rows)
            })
            .collect()
    }

    pub fn evaluate(&mut self, i: usize) -> Result<()> {
        let (model, data) = self.eval_set(i)?;
        let attributions = self.attributions(i, &data)?;
        let base = &self.config.base.clone();
        let scores = evaluate(&model, &data, &attributions, base)?;
        let dir = self.dataset_dir(i);
        let path = dir.join("evaluate.csv");
        report::write_evaluate(&path, &self.hash, &self.config.methods, &scores)?;
        self.record(path);

        let mut curves = Vec::new();
        for (&m, per_sample) in self.config.methods.iter().zip(&attributions) {
            for (s, e) in data.samples.iter().zip(per_sample) {
                let (curve, _) = faithfulness_curve(&model, s, data.shape, e, base)?;
                curves.push((s.id, m, curve));
            }
        }
        let rows: Vec<CurveRow<'_>> = curves
            .iter()
            .map(|(id, m, c)| CurveRow {
                sample_id: *id,
                method: *m,
                curve: c,
            })
            .collect();
        let path = dir.join("curves.csv");
        report::write_curves(&path, &self.hash, &rows)?;
        self.record(path);
        Ok(())
    }

    pub fn grid(&mut self, i: usize) -> Result<GridResult> {
        if let Some(g) = &self.grids[i] {
            return Ok(g.clone());
        }
        let (model, data) = self.eval_set(i)?;
        let attributions = self.attributions(i, &data)?;
        let grid = grid_evaluate(
            &model,
            &data,
            &self.config.methods,
            &attributions,
            &self.config.feasible,
            &self.config.base,
        )?;
        let path = self.dataset_dir(i).join("grid.csv");
        report::write_grid(&path, &self.hash, &grid)?;
        self.record(path);
        self.grids[i] = Some(grid.clone());
        Ok(grid)
    }

    pub fn manipulate(&mut self, i: usize, mode: Mode, focus: Option<Method>) -> Result<Vec<ManipulationOutcome>> {
        let grid = self.grid(i)?;
        let foci = match focus {
            Some(f) => vec![f],
            None => self.config.methods.clone(),
        };
        let base = self.config.base.clone();
        let outcomes = foci
            .iter()
            .map(|&f| match mode {
                Mode::Intra => intra_manipulate(&grid, f, &base),
                Mode::Inter => inter_manipulate(&grid, f, &base),
            })
            .collect::<Result<Vec<_>>>()?;
        let dir = self.dataset_dir(i);
        match mode {
            Mode::Intra => {
                let path = dir.join("intra.csv");
                report::write_intra_table(&path, &self.hash, &outcomes)?;
                self.record(path);
            }
            Mode::Inter => {
                for o in &outcomes {
                    let path = dir.join(format!("inter_{}.csv", method_tag(o.focus)));
                    report::write_inter_table(&path, &self.hash, o)?;
                    self.record(path);
                }
            }
        }
        let tag = mode_tag(mode);
        let path = dir.join(format!("outcomes_{tag}.json"));
        report::write_json(
            &path,
            &OutcomeRecord {
                config_hash: self.hash.clone(),
                outcomes: outcomes.clone(),
            },
        )?;
        self.record(path);
        let path = dir.join(format!("occurrence_{tag}.csv"));
        report::write_occurrences(&path, &self.hash, &occurrence_summary(&outcomes, &self.config.feasible))?;
        self.record(path);
        Ok(outcomes)
    }

    pub fn mrr(&mut self) -> Result<()> {
        let mut per_dataset = Vec::new();
        for i in 0..self.config.datasets.len() {
            let grid = self.grid(i)?;
            let path = self.dataset_dir(i).join("boxplot.csv");
            report::export_boxplot_data(&path, &self.hash, &grid)?;
            self.record(path);
            per_dataset.push((self.config.datasets[i].name.clone(), mrr(&grid)?));
        }
        let vectors: Vec<_> = per_dataset.iter().map(|(_, v)| v.clone()).collect();
        let pooled = mrr_cross_dataset(&vectors)?;
        let path = self.config.output_dir.join("mrr.csv");
        report::write_mrr_table(&path, &self.hash, &self.config.methods, &per_dataset, &pooled)?;
        self.record(path);
        Ok(())
    }

    pub fn run(&mut self, command: Command) -> Result<PathBuf> {
        let n = self.config.datasets.len();
        match command {
            Command::Train => (0..n).try_for_each(|i| self.train(i))?,
            Command::Attribute => (0..n).try_for_each(|i| self.attribute(i).map(drop))?,
            Command::Evaluate => (0..n).try_for_each(|i| self.evaluate(i))?,
            Command::Manipulate { mode, focus } => {
                (0..n).try_for_each(|i| self.manipulate(i, mode, focus).map(drop))?
            }
            Command::Mrr => self.mrr()?,
            Command::Report => {
                for i in 0..n {
                    self.evaluate(i)?;
                    self.manipulate(i, Mode::Intra, None)?;
                    if self.config.methods.len() > 1 {
                        self.manipulate(i, Mode::Inter, None)?;
                    }
                }
                if self.config.methods.len() > 1 {
                    self.mrr()?;
                }
            }
        }
        self.write_manifest(command)
    }

    fn write_manifest(&mut self, command: Command) -> Result<PathBuf> {
        let out = self.config.output_dir.clone();
        let artifacts = self
            .written
            .iter()
            .map(|p| {
                let mut rec = ArtifactRecord::of(p)?;
                if let Ok(rel) = p.strip_prefix(&out) {
                    rec.path = rel.to_path_buf();
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config_hash: self.hash.clone(),
            config: self.config.clone(),
            artifacts,
        };
        let path = out.join(format!("manifest-{command}.json"));
        report::write_json(&path, &manifest)?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub command: String,
    pub kind: String,
    pub message: String,
}

/// Writes `error.json` into `dir`, best effort.
pub fn write_error_record(dir: &Path, command: &str, err: &Error) -> Result<PathBuf> {
    let path = dir.join("error.json");
    report::write_json(
        &path,
        &ErrorRecord {
            command: command.to_string(),
            kind: err.kind().to_string(),
            message: err.to_string(),
        },
    )?;
    Ok(path)
}
