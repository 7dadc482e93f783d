//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys,
//! repeated keys and malformed values are rejected with the line number.
//!
//! | key | default |
//! |-----|---------|
//! | `policy` | `amp` (`none`, `mixup`, `amp`) |
//! | `alpha` | `1.0` |
//! | `epsilon` | `0.002` |
//! | `mix_layer` | `sent` (`word`, `sent`) |
//! | `per_pair_lambda` | `true` |
//! | `min_mode` | `compare` (`compare`, `always_perturbed`) |
//! | `backbone` | `embed-mlp` (`embed-mlp`, `text-cnn`) |
//! | `embed_dim` | `16` |
//! | `hidden_dim` | `32` |
//! | `filter_widths` | `3,4,5` |
//! | `feature_maps` | `16` |
//! | `dropout` | `0.5` (text-cnn only) |
//! | `batch_size` | `50` |
//! | `lr` | `2e-4` |
//! | `max_steps` | `8000` |
//! | `seeds` | `0,1,2,3,4,5,6,7,8,9` |
//! | `max_len` | `32` |
//! | `min_freq` | `1` |
//! | `dev_fraction` | `0.1` |
//! | `subsample_ratio` | `1.0` |
//! | `train_path`, `test_path` | unset: use the synthetic task |
//! | `embeddings_path` | unset |
//! | `freeze_embeddings` | `false` |
//! | `synthetic_classes` | `6` |
//! | `synthetic_per_class` | `100` |
//! | `synthetic_test_per_class` | `100` |
//! | `synthetic_vocab` | `500` |
//! | `synthetic_signal_tokens` | `5` |
//! | `synthetic_noise_len` | `20` |
//! | `data_seed` | `0` |

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::mixup::{MinMode, MixConfig, Policy};
use crate::models::Layer;

#[derive(Clone, Debug, PartialEq)]
pub enum Backbone {
    EmbedMlp {
        hidden_dim: usize,
    },
    TextCnn {
        filter_widths: Vec<usize>,
        feature_maps: usize,
        dropout: f64,
    },
}

impl Backbone {
    pub fn name(&self) -> &'static str {
        match self {
            Backbone::EmbedMlp { .. } => "embed-mlp",
            Backbone::TextCnn { .. } => "text-cnn",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Files {
        train: PathBuf,
        test: PathBuf,
    },
    Synthetic {
        spec: SyntheticSpec,
        test_per_class: usize,
        data_seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub mix: MixConfig,
    pub backbone: Backbone,
    pub embed_dim: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_steps: usize,
    pub seeds: Vec<u64>,
    pub max_len: usize,
    pub min_freq: usize,
    pub dev_fraction: f64,
    pub subsample_ratio: f64,
    pub data: DataSource,
    pub embeddings_path: Option<PathBuf>,
    pub freeze_embeddings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mix: MixConfig::default(),
            backbone: Backbone::EmbedMlp { hidden_dim: 32 },
            embed_dim: 16,
            batch_size: 50,
            lr: 2e-4,
            max_steps: 8000,
            seeds: (0..10).collect(),
            max_len: 32,
            min_freq: 1,
            dev_fraction: 0.1,
            subsample_ratio: 1.0,
            data: DataSource::Synthetic {
                spec: SyntheticSpec::default(),
                test_per_class: 100,
                data_seed: 0,
            },
            embeddings_path: None,
            freeze_embeddings: false,
        }
    }
}

#[derive(Default)]
struct Raw {
    train_path: Option<PathBuf>,
    test_path: Option<PathBuf>,
    backbone: Option<String>,
    hidden_dim: Option<usize>,
    filter_widths: Option<Vec<usize>>,
    feature_maps: Option<usize>,
    dropout: Option<f64>,
    spec: SyntheticSpec,
    test_per_class: Option<usize>,
    data_seed: Option<u64>,
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::format(line, format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|part| parse_value(line, key, part.trim()))
        .collect()
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::format(line, format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn min_mode_name(mode: MinMode) -> &'static str {
    match mode {
        MinMode::Compare => "compare",
        MinMode::AlwaysPerturbed => "always_perturbed",
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.mix.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if self.embed_dim == 0 || self.max_len == 0 || self.min_freq == 0 {
            return Err(Error::config("embed_dim, max_len and min_freq must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::config(format!(
                "dev_fraction {} not in (0, 1)",
                self.dev_fraction
            )));
        }
        if !(self.subsample_ratio > 0.0 && self.subsample_ratio <= 1.0) {
            return Err(Error::config(format!(
                "subsample_ratio {} not in (0, 1]",
                self.subsample_ratio
            )));
        }
        match &self.backbone {
            Backbone::EmbedMlp { hidden_dim } if *hidden_dim == 0 => {
                return Err(Error::config("hidden_dim must be positive"));
            }
            Backbone::TextCnn {
                filter_widths,
                feature_maps,
                dropout,
            } => {
                if filter_widths.is_empty() || filter_widths.contains(&0) || *feature_maps == 0 {
                    return Err(Error::config("text-cnn needs positive filter widths and maps"));
                }
                if let Some(w) = filter_widths.iter().find(|&&w| w > self.max_len) {
                    return Err(Error::config(format!(
                        "filter width {w} exceeds max_len {}",
                        self.max_len
                    )));
                }
                if !(0.0..1.0).contains(dropout) {
                    return Err(Error::config(format!("dropout {dropout} not in [0, 1)")));
                }
            }
            _ => {}
        }
        if let DataSource::Synthetic { test_per_class, .. } = &self.data {
            if *test_per_class == 0 {
                return Err(Error::config("synthetic_test_per_class must be positive"));
            }
        }
        Ok(())
    }

    /// Serializes to the text format accepted by [`FromStr`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("policy", self.mix.policy.to_string());
        put("alpha", self.mix.alpha.to_string());
        put("epsilon", self.mix.epsilon.to_string());
        put("mix_layer", self.mix.layer.to_string());
        put("per_pair_lambda", self.mix.per_pair_lambda.to_string());
        put("min_mode", min_mode_name(self.mix.min_mode).into());
        put("backbone", self.backbone.name().into());
        match &self.backbone {
            Backbone::EmbedMlp { hidden_dim } => put("hidden_dim", hidden_dim.to_string()),
            Backbone::TextCnn {
                filter_widths,
                feature_maps,
                dropout,
            } => {
                put("filter_widths", join(filter_widths));
                put("feature_maps", feature_maps.to_string());
                put("dropout", dropout.to_string());
            }
        }
        put("embed_dim", self.embed_dim.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr", self.lr.to_string());
        put("max_steps", self.max_steps.to_string());
        put("seeds", join(&self.seeds));
        put("max_len", self.max_len.to_string());
        put("min_freq", self.min_freq.to_string());
        put("dev_fraction", self.dev_fraction.to_string());
        put("subsample_ratio", self.subsample_ratio.to_string());
        match &self.data {
            DataSource::Files { train, test } => {
                put("train_path", train.display().to_string());
                put("test_path", test.display().to_string());
            }
            DataSource::Synthetic {
                spec,
                test_per_class,
                data_seed,
            } => {
                put("synthetic_classes", spec.num_classes.to_string());
                put("synthetic_per_class", spec.per_class.to_string());
                put("synthetic_test_per_class", test_per_class.to_string());
                put("synthetic_vocab", spec.vocab_size.to_string());
                put("synthetic_signal_tokens", spec.signal_tokens_per_class.to_string());
                put("synthetic_noise_len", spec.noise_len.to_string());
                put("data_seed", data_seed.to_string());
            }
        }
        if let Some(p) = &self.embeddings_path {
            put("embeddings_path", p.display().to_string());
        }
        put("freeze_embeddings", self.freeze_embeddings.to_string());
        out
    }
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut raw = Raw::default();
        let mut seen = HashSet::new();
        for (idx, line) in text.lines().enumerate() {
            let n = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(n, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                return Err(Error::format(n, format!("missing value for `{key}`")));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::format(n, format!("duplicate key `{key}`")));
            }
            match key {
                "policy" => cfg.mix.policy = value.parse::<Policy>().map_err(|e| at(n, e))?,
                "alpha" => cfg.mix.alpha = parse_value(n, key, value)?,
                "epsilon" => cfg.mix.epsilon = parse_value(n, key, value)?,
                "mix_layer" => cfg.mix.layer = value.parse::<Layer>().map_err(|e| at(n, e))?,
                "per_pair_lambda" => cfg.mix.per_pair_lambda = parse_bool(n, key, value)?,
                "min_mode" => {
                    cfg.mix.min_mode = match value {
                        "compare" => MinMode::Compare,
                        "always_perturbed" => MinMode::AlwaysPerturbed,
                        _ => return Err(Error::format(n, format!("unknown min_mode `{value}`"))),
                    }
                }
                "backbone" => raw.backbone = Some(value.to_string()),
                "hidden_dim" => raw.hidden_dim = Some(parse_value(n, key, value)?),
                "filter_widths" => raw.filter_widths = Some(parse_list(n, key, value)?),
                "feature_maps" => raw.feature_maps = Some(parse_value(n, key, value)?),
                "dropout" => raw.dropout = Some(parse_value(n, key, value)?),
                "embed_dim" => cfg.embed_dim = parse_value(n, key, value)?,
                "batch_size" => cfg.batch_size = parse_value(n, key, value)?,
                "lr" => cfg.lr = parse_value(n, key, value)?,
                "max_steps" => cfg.max_steps = parse_value(n, key, value)?,
                "seeds" => cfg.seeds = parse_list(n, key, value)?,
                "max_len" => cfg.max_len = parse_value(n, key, value)?,
                "min_freq" => cfg.min_freq = parse_value(n, key, value)?,
                "dev_fraction" => cfg.dev_fraction = parse_value(n, key, value)?,
                "subsample_ratio" => cfg.subsample_ratio = parse_value(n, key, value)?,
                "train_path" => raw.train_path = Some(value.into()),
                "test_path" => raw.test_path = Some(value.into()),
                "embeddings_path" => cfg.embeddings_path = Some(value.into()),
                "freeze_embeddings" => cfg.freeze_embeddings = parse_bool(n, key, value)?,
                "synthetic_classes" => raw.spec.num_classes = parse_value(n, key, value)?,
                "synthetic_per_class" => raw.spec.per_class = parse_value(n, key, value)?,
                "synthetic_test_per_class" => {
                    raw.test_per_class = Some(parse_value(n, key, value)?)
                }
                "synthetic_vocab" => raw.spec.vocab_size = parse_value(n, key, value)?,
                "synthetic_signal_tokens" => {
                    raw.spec.signal_tokens_per_class = parse_value(n, key, value)?
                }
                "synthetic_noise_len" => raw.spec.noise_len = parse_value(n, key, value)?,
                "data_seed" => raw.data_seed = Some(parse_value(n, key, value)?),
                other => return Err(Error::format(n, format!("unknown key `{other}`"))),
            }
        }

        cfg.backbone = match raw.backbone.as_deref().unwrap_or("embed-mlp") {
            "embed-mlp" => Backbone::EmbedMlp {
                hidden_dim: raw.hidden_dim.unwrap_or(32),
            },
            "text-cnn" => Backbone::TextCnn {
                filter_widths: raw.filter_widths.unwrap_or_else(|| vec![3, 4, 5]),
                feature_maps: raw.feature_maps.unwrap_or(16),
                dropout: raw.dropout.unwrap_or(0.5),
            },
            other => return Err(Error::config(format!("unknown backbone `{other}`"))),
        };
        cfg.data = match (raw.train_path, raw.test_path) {
            (Some(train), Some(test)) => DataSource::Files { train, test },
            (None, None) => DataSource::Synthetic {
                spec: raw.spec,
                test_per_class: raw.test_per_class.unwrap_or(raw.spec.per_class),
                data_seed: raw.data_seed.unwrap_or(0),
            },
            _ => return Err(Error::config("train_path and test_path must be given together")),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn at(line: usize, err: Error) -> Error {
    match err {
        Error::Config(msg) => Error::format(line, msg),
        other => other,
    }
}
