//! JSON config records for each subcommand.
//!
//! Relative paths inside a config file resolve against the file's directory.
//!
//! Seeds: every random stream comes from the base seed `s` through
//! `derive_seed(s, path)`. The paths are:
//!
//! | stream                         | path                     |
//! |--------------------------------|--------------------------|
//! | synthetic data, split `k`      | `[TASK_DATA, k]`         |
//! | weight initialization          | `[TASK_INIT]`            |
//! | training shuffles              | `[TASK_TRAIN]`           |
//! | sanity run `r`                 | `[TASK_RUN, r]`          |
//! | theory experiment `i`          | `[TASK_EXPERIMENT, i]`   |
//! | faithfulness stochastic maps   | `[TASK_FAITHFULNESS]`    |

use std::fs;
use std::path::{Path, PathBuf};

use attrib_audit::attribution::Method;
use attrib_audit::faithfulness::OcclusionConfig;
use attrib_audit::seed::derive_seed;
use attrib_audit::simmetrics::{Metric, Preprocessing, SsimParams};
use attrib_audit::theory::TheoryExperiment;
use attrib_audit::zoo::{load_idx, synth_dataset, ArchitectureId, Dataset, RandomizationMode, SynthKind, SynthSpec};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::CliError;

pub const TASK_DATA: u64 = 1;
pub const TASK_INIT: u64 = 2;
pub const TASK_TRAIN: u64 = 3;
pub const TASK_RUN: u64 = 4;
pub const TASK_EXPERIMENT: u64 = 5;
pub const TASK_FAITHFULNESS: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        kind: SynthKind,
        size: usize,
        classes: usize,
        n: usize,
        #[serde(default)]
        split: Split,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl DataSource {
    fn resolve(&mut self, dir: &Path) {
        if let DataSource::Idx { images, labels, .. } = self {
            *images = dir.join(&*images);
            *labels = dir.join(&*labels);
        }
    }

    fn check_paths(&self) -> Result<(), CliError> {
        if let DataSource::Idx { images, labels, .. } = self {
            for p in [images, labels] {
                if !p.is_file() {
                    return Err(CliError::Path(format!("dataset file not found: {}", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn load(&self, base_seed: u64) -> Result<Dataset, CliError> {
        Ok(match self {
            DataSource::Synthetic { kind, size, classes, n, split } => {
                let spec = SynthSpec { kind: *kind, size: *size, classes: *classes };
                synth_dataset(&spec, *n, derive_seed(base_seed, &[TASK_DATA, *split as u64]))?
            }
            DataSource::Idx { images, labels, limit } => {
                let d = load_idx(images, labels)?;
                match limit {
                    Some(n) => d.head(*n),
                    None => d,
                }
            }
        })
    }
}

fn existing_file(p: &Path, what: &str) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Path(format!("{what} not found: {}", p.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCommand {
    pub arch: ArchitectureId,
    pub data: DataSource,
    pub epochs: usize,
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_batch() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Group {
    pub name: String,
    pub layers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SanityCommand {
    pub model: PathBuf,
    #[serde(default)]
    pub model_name: Option<String>,
    pub data: DataSource,
    pub methods: Vec<Method>,
    pub metrics: Vec<Metric>,
    /// Top-down randomization groups; one group per parameterized layer
    /// when absent.
    #[serde(default)]
    pub groups: Option<Vec<Group>>,
    #[serde(default = "cascading")]
    pub mode: RandomizationMode,
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    #[serde(default)]
    pub ssim: SsimParams,
    pub n_images: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn cascading() -> RandomizationMode {
    RandomizationMode::Cascading
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedModel {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaithfulnessCommand {
    pub models: Vec<NamedModel>,
    pub data: DataSource,
    pub methods: Vec<Method>,
    pub n_images: usize,
    #[serde(default)]
    pub occlusion: OcclusionConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryCommand {
    pub experiments: Vec<TheoryExperiment>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsCommand {
    pub model: PathBuf,
    pub data: DataSource,
    #[serde(default)]
    pub n_images: Option<usize>,
    /// Also write the overtaking grid over all quantile pairs.
    #[serde(default = "yes")]
    pub overtaking: bool,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

/// Parsing, path resolution and pre-dispatch validation.
pub trait Command: DeserializeOwned {
    fn resolve(&mut self, dir: &Path);
    fn validate(&self) -> Result<(), CliError>;
    fn seed(&self) -> Option<u64>;
    fn out(&self) -> Option<&Path>;
}

macro_rules! common {
    () => {
        fn seed(&self) -> Option<u64> {
            self.seed
        }

        fn out(&self) -> Option<&Path> {
            self.out.as_deref()
        }
    };
}

fn resolve_out(out: &mut Option<PathBuf>, dir: &Path) {
    if let Some(o) = out {
        *o = dir.join(&*o);
    }
}

impl Command for TrainCommand {
    fn resolve(&mut self, dir: &Path) {
        self.data.resolve(dir);
        resolve_out(&mut self.out, dir);
    }

    fn validate(&self) -> Result<(), CliError> {
        self.data.check_paths()?;
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CliError::Config("epochs, batch_size and lr must be positive".into()));
        }
        Ok(())
    }

    common!();
}

impl Command for SanityCommand {
    fn resolve(&mut self, dir: &Path) {
        self.model = dir.join(&self.model);
        self.data.resolve(dir);
        resolve_out(&mut self.out, dir);
    }

    fn validate(&self) -> Result<(), CliError> {
        existing_file(&self.model, "model file")?;
        self.data.check_paths()?;
        if matches!(&self.groups, Some(g) if g.is_empty()) {
            return Err(CliError::Config("the randomization group list is empty".into()));
        }
        if self.runs == 0 || self.n_images == 0 || self.methods.is_empty() || self.metrics.is_empty() {
            return Err(CliError::Config("need at least one run, image, method and metric".into()));
        }
        Ok(())
    }

    common!();
}

impl Command for FaithfulnessCommand {
    fn resolve(&mut self, dir: &Path) {
        for m in &mut self.models {
            m.path = dir.join(&m.path);
        }
        self.data.resolve(dir);
        resolve_out(&mut self.out, dir);
    }

    fn validate(&self) -> Result<(), CliError> {
        for m in &self.models {
            existing_file(&m.path, "model file")?;
        }
        self.data.check_paths()?;
        if self.models.is_empty() || self.methods.is_empty() || self.n_images == 0 {
            return Err(CliError::Config("need at least one model, method and image".into()));
        }
        Ok(())
    }

    common!();
}

impl Command for TheoryCommand {
    fn resolve(&mut self, dir: &Path) {
        resolve_out(&mut self.out, dir);
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.experiments.is_empty() {
            return Err(CliError::Config("the experiment list is empty".into()));
        }
        Ok(())
    }

    common!();
}

impl Command for StatsCommand {
    fn resolve(&mut self, dir: &Path) {
        self.model = dir.join(&self.model);
        self.data.resolve(dir);
        resolve_out(&mut self.out, dir);
    }

    fn validate(&self) -> Result<(), CliError> {
        existing_file(&self.model, "model file")?;
        self.data.check_paths()
    }

    common!();
}

pub fn load<C: Command>(path: &Path) -> Result<C, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Path(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: C = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.resolve(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}
