//! Run configuration: one TOML file plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crossgr::registry::{ModelKind, ModelSettings};
use crossgr::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub ks: Vec<usize>,
    /// Sampled negatives per test user.
    pub negatives: usize,
    /// Rank against every unseen item instead of a sample.
    pub full_catalog: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            ks: vec![5, 10, 20],
            negatives: 99,
            full_catalog: false,
        }
    }
}

/// Hyper-parameter lists for `grid`; an empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub latent_dim: Vec<usize>,
    pub num_gin_layers: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub negatives_per_positive: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub target: String,
    #[serde(default)]
    pub sources: Vec<String>,
    /// Drives the split, initialization, batching and candidate sampling.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Market label to interaction file. Relative paths are resolved
    /// against the config file's directory.
    pub data: BTreeMap<String, PathBuf>,
    /// Models for `compare` when `--model` is not given.
    #[serde(default)]
    pub models: Option<Vec<String>>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub grid: GridSettings,
}

fn default_name() -> String {
    "run".into()
}

fn default_out() -> PathBuf {
    "runs".into()
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub latent_dim: Option<usize>,
    pub num_negative: Option<usize>,
    pub max_epochs: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, CliError> {
        let mut config: RunConfig = toml::from_str(text)
            .map_err(|e| CliError::Config(format!("{}: {e}", origin.display())))?;
        let base = origin.parent().unwrap_or(Path::new(""));
        for path in config.data.values_mut() {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if config.out.is_relative() && !base.as_os_str().is_empty() {
            config.out = base.join(&config.out);
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, path)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(d) = o.latent_dim {
            let c = &mut self.model.crossgr;
            c.latent_dim = d;
            c.gin_mlp_hidden = d;
            c.scorer_hidden = 4 * d;
        }
        if let Some(n) = o.num_negative {
            self.train.negatives_per_positive = n;
        }
        if let Some(n) = o.max_epochs {
            self.train.max_epochs = n;
            self.train.patience = self.train.patience.min(n);
        }
        self.train.seed = self.seed;
    }

    /// Checks the structural rules and that every data file exists.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::Config(format!(
                "invalid run name {:?}",
                self.name
            )));
        }
        if !self.data.contains_key(&self.target) {
            return Err(CliError::Config(format!(
                "target market {} has no [data] entry",
                self.target
            )));
        }
        if self.sources.contains(&self.target) {
            return Err(CliError::Config(format!(
                "target market {} also listed as a source",
                self.target
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.sources {
            if !seen.insert(s) {
                return Err(CliError::Config(format!("source market {s} listed twice")));
            }
            if !self.data.contains_key(s) {
                return Err(CliError::Config(format!(
                    "source market {s} has no [data] entry"
                )));
            }
        }
        for (market, path) in &self.data {
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "data file for market {market} not found: {}",
                    path.display()
                )));
            }
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(CliError::Config(
                "eval.ks must be non-empty positive cutoffs".into(),
            ));
        }
        if !self.eval.full_catalog && self.eval.negatives == 0 {
            return Err(CliError::Config("eval.negatives must be positive".into()));
        }
        self.train.validate()?;
        self.model.crossgr.validate()?;
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(&self.name)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses model tokens, accepting repeated and comma-separated values.
pub fn parse_kinds<S: AsRef<str>>(tokens: &[S]) -> Result<Vec<ModelKind>, CliError> {
    let mut kinds = Vec::new();
    for token in tokens.iter().flat_map(|t| t.as_ref().split(',')) {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let kind: ModelKind = token.parse()?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    Ok(kinds)
}
