use std::path::{Path, PathBuf};

use absgen::corrupt::Corruption;
use absgen::data::PairOptions;
use absgen::nn::{LossKind, ModelKind, OutputConvention, DEFAULT_MARGIN};
use absgen::optim::{AdamConfig, Optimizer};
use absgen::theory::TransferConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One experiment: dataset, model, training, evaluation and one-shot
/// settings. Every section is optional; missing fields take the defaults
/// shown by `train`'s effective-config echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Label written into report rows. Defaults to the config file stem.
    pub experiment: String,
    pub seed: u64,
    pub dataset: Option<DatasetConfig>,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub oneshot: OneshotSection,
    pub theory: Option<TransferConfig>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            experiment: String::new(),
            seed: 0,
            dataset: None,
            model: ModelConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            oneshot: OneshotSection::default(),
            theory: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Manifest path, relative to the config file.
    pub manifest: PathBuf,
    /// Classes kept from both splits (all when absent).
    #[serde(default)]
    pub classes: Option<Vec<String>>,
    /// Classes kept from the probe split; falls back to `classes`.
    #[serde(default)]
    pub probe_classes: Option<Vec<String>>,
    /// `[height, width]` that PGM images are resized to.
    #[serde(default)]
    pub image_size: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureKind {
    Pair,
    Siamese,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub architecture: ArchitectureKind,
    /// Output reading of the pair MLP. CNN heads are always probabilities.
    pub output: OutputConvention,
    pub margin: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mlp,
            architecture: ArchitectureKind::Pair,
            output: OutputConvention::SignedDistance,
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub loss: Option<LossKind>,
    pub pairs: PairOptions,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 100,
            pairs_per_epoch: 23_582,
            batch_size: 256,
            optimizer: Optimizer::Adam(AdamConfig::default()),
            loss: None,
            pairs: PairOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Corruption names such as `raw`, `salt_pepper:0.5`, `style1`.
    pub corruptions: Vec<String>,
    pub runs: usize,
    pub n_pairs: usize,
    pub pairs: PairOptions,
    /// Decision threshold for F1; the model's own threshold when absent.
    pub threshold: Option<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            corruptions: Corruption::standard_suite().iter().map(ToString::to_string).collect(),
            runs: 10,
            n_pairs: 2000,
            pairs: PairOptions::default(),
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OneshotSection {
    pub n_way: usize,
    pub trials: usize,
    pub queries_per_class: usize,
}

impl Default for OneshotSection {
    fn default() -> Self {
        Self {
            n_way: 5,
            trials: 400,
            queries_per_class: 1,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn check_pairs(field: &str, p: &PairOptions) -> Result<(), CliError> {
    if !(p.balance > 0.0 && p.balance < 1.0) {
        return Err(invalid(&format!("{field}.balance"), format!("must lie in (0, 1), got {}", p.balance)));
    }
    Ok(())
}

impl Config {
    /// Reads and validates a config; relative paths are resolved against
    /// the config's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| absgen::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            invalid(if field == "." { "<root>" } else { &field }, e.into_inner().to_string())
        })?;
        if cfg.experiment.is_empty() {
            cfg.experiment = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "experiment".into());
        }
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(ds) = cfg.dataset.as_mut() {
            if ds.manifest.is_relative() {
                ds.manifest = base.join(&ds.manifest);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.experiment.contains([',', '\n']) {
            return Err(invalid("experiment", "must not contain commas or newlines"));
        }
        if !(self.model.margin > 0.0 && self.model.margin.is_finite()) {
            return Err(invalid("model.margin", "must be positive"));
        }
        if self.model.output == OutputConvention::Embedding {
            return Err(invalid("model.output", "pair models need a scalar output"));
        }
        if let Some(ds) = &self.dataset {
            if let Some([h, w]) = ds.image_size {
                if h == 0 || w == 0 {
                    return Err(invalid("dataset.image_size", "dimensions must be positive"));
                }
            }
            for (field, list) in [("dataset.classes", &ds.classes), ("dataset.probe_classes", &ds.probe_classes)] {
                if list.as_ref().is_some_and(|l| l.is_empty()) {
                    return Err(invalid(field, "must name at least one class"));
                }
            }
        }
        let t = &self.train;
        if t.pairs_per_epoch == 0 {
            return Err(invalid("train.pairs_per_epoch", "must be at least 1"));
        }
        if t.batch_size == 0 {
            return Err(invalid("train.batch_size", "must be at least 1"));
        }
        let lr = match t.optimizer {
            Optimizer::Adam(a) => a.lr,
            Optimizer::Sgd { lr } => lr,
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(invalid("train.optimizer.lr", format!("must be positive, got {lr}")));
        }
        check_pairs("train.pairs", &t.pairs)?;
        let e = &self.eval;
        for (i, name) in e.corruptions.iter().enumerate() {
            name.parse::<Corruption>()
                .map_err(|err| invalid(&format!("eval.corruptions[{i}]"), err.to_string()))?;
        }
        if e.runs == 0 {
            return Err(invalid("eval.runs", "must be at least 1"));
        }
        if e.n_pairs < 2 {
            return Err(invalid("eval.n_pairs", "must be at least 2"));
        }
        check_pairs("eval.pairs", &e.pairs)?;
        let o = &self.oneshot;
        if o.n_way < 2 {
            return Err(invalid("oneshot.n_way", "must be at least 2"));
        }
        if o.trials == 0 {
            return Err(invalid("oneshot.trials", "must be at least 1"));
        }
        if o.queries_per_class == 0 {
            return Err(invalid("oneshot.queries_per_class", "must be at least 1"));
        }
        if let Some(theory) = &self.theory {
            theory
                .a
                .validate()
                .map_err(|err| invalid("theory.a", err.to_string()))?;
            theory
                .b
                .validate()
                .map_err(|err| invalid("theory.b", err.to_string()))?;
            if theory.n_train < 2 || theory.n_test < 2 {
                return Err(invalid("theory", "n_train and n_test must be at least 2"));
            }
            if theory.batch_size == 0 {
                return Err(invalid("theory.batch_size", "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn corruptions(&self) -> Vec<Corruption> {
        self.eval
            .corruptions
            .iter()
            .filter_map(|c| c.parse().ok())
            .collect()
    }

    pub fn dataset(&self) -> Result<&DatasetConfig, CliError> {
        self.dataset
            .as_ref()
            .ok_or_else(|| invalid("dataset", "this command needs a dataset section"))
    }
}
