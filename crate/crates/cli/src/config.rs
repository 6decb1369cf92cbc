//! Layered run configuration: built-in defaults, per-dataset bundles, an
//! optional TOML config file, then command-line flag overrides. Every key
//! remembers where its final value came from so the run manifest can show
//! the provenance of the whole configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hiegat::error::{HiegatError, Result};
use hiegat::gat::ReadoutMode;
use hiegat::model::{HieGnnConfig, LambdaPolicy, LambdaRule, LevelConfig};
use hiegat::optim::OptimizerKind;
use hiegat::text::{SentenceMode, DEFAULT_CHUNK_SIZE};
use hiegat::train::TrainConfig;

/// One dataset's file layout and paper defaults.
pub struct DatasetBundle {
    pub name: &'static str,
    pub meta: &'static str,
    pub text: &'static str,
    pub learning_rate: f64,
    pub mode: &'static str,
}

/// The five benchmark corpora in the standard two-file layout.
/// Punctuation-stripped distributions use chunked sentence windows.
pub const BUNDLES: [DatasetBundle; 5] = [
    DatasetBundle {
        name: "mr",
        meta: "mr.txt",
        text: "corpus/mr.clean.txt",
        learning_rate: 1e-4,
        mode: "punct",
    },
    DatasetBundle {
        name: "r8",
        meta: "R8.txt",
        text: "corpus/R8.clean.txt",
        learning_rate: 1e-3,
        mode: "chunk",
    },
    DatasetBundle {
        name: "r52",
        meta: "R52.txt",
        text: "corpus/R52.clean.txt",
        learning_rate: 1e-3,
        mode: "chunk",
    },
    DatasetBundle {
        name: "ohsumed",
        meta: "ohsumed.txt",
        text: "corpus/ohsumed.clean.txt",
        learning_rate: 1e-3,
        mode: "chunk",
    },
    DatasetBundle {
        name: "20ng",
        meta: "20ng.txt",
        text: "corpus/20ng.clean.txt",
        learning_rate: 1e-3,
        mode: "chunk",
    },
];

pub fn bundle(name: &str) -> Option<&'static DatasetBundle> {
    BUNDLES.iter().find(|b| b.name.eq_ignore_ascii_case(name))
}

/// Key-value store where later layers win and each key remembers its source.
pub struct Resolver {
    entries: BTreeMap<String, (String, &'static str)>,
}

impl Resolver {
    pub fn with_defaults() -> Self {
        let mut r = Resolver {
            entries: BTreeMap::new(),
        };
        let defaults = [
            ("data.data_dir", "data".to_string()),
            ("data.dataset", String::new()),
            ("data.meta", String::new()),
            ("data.text", String::new()),
            ("data.mode", "punct".to_string()),
            ("data.chunk_size", DEFAULT_CHUNK_SIZE.to_string()),
            ("model.embedding_dim", "200".to_string()),
            ("model.dropout", "0.5".to_string()),
            ("model.negative_slope", "0.2".to_string()),
            ("model.readout", "mean".to_string()),
            ("model.lambda_policy", "per_sample".to_string()),
            ("model.word_layers", "1".to_string()),
            ("model.word_heads", "1".to_string()),
            ("model.word_window", "2".to_string()),
            ("model.sen_layers", "1".to_string()),
            ("model.sen_heads", "1".to_string()),
            ("model.sen_window", "2".to_string()),
            ("model.doc_layers", "3".to_string()),
            ("model.doc_heads", "3".to_string()),
            ("model.doc_window", "2".to_string()),
            ("train.batch_size", "64".to_string()),
            ("train.learning_rate", "1e-3".to_string()),
            ("train.max_epochs", "200".to_string()),
            ("train.patience", "10".to_string()),
            ("train.validation_fraction", "0.1".to_string()),
            ("train.optimizer", "adam".to_string()),
            ("train.clip_norm", "5".to_string()),
            ("train.lambda", "schedule".to_string()),
            ("run.seed", "1".to_string()),
        ];
        for (k, v) in defaults {
            r.entries.insert(k.to_string(), (v, "default"));
        }
        r
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>, source: &'static str) {
        self.entries.insert(key.to_string(), (value.into(), source));
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(|(v, _)| v.as_str())
            .ok_or_else(|| HiegatError::Config(format!("unknown configuration key '{key}'")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse::<T>()
            .map_err(|_| HiegatError::Config(format!("cannot parse {key} = '{raw}'")))
    }

    /// Applies a dataset bundle under the `bundle:<name>` source tag.
    pub fn apply_bundle(&mut self, b: &DatasetBundle) {
        let source: &'static str = "dataset-bundle";
        self.set("data.dataset", b.name, source);
        self.set("data.meta", b.meta, source);
        self.set("data.text", b.text, source);
        self.set("data.mode", b.mode, source);
        self.set("train.learning_rate", b.learning_rate.to_string(), source);
    }

    /// Parses a TOML config file into flattened `section.key` entries,
    /// rejecting unknown keys.
    pub fn load_file(&self, path: &Path) -> Result<Vec<(String, String)>> {
        let text = std::fs::read_to_string(path)?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| HiegatError::Config(format!("{}: {e}", path.display())))?;
        let mut out = Vec::new();
        for (section, value) in table {
            let sub = value.as_table().ok_or_else(|| {
                HiegatError::Config(format!(
                    "{}: top-level key '{section}' must be a section",
                    path.display()
                ))
            })?;
            for (key, v) in sub {
                let flat = format!("{section}.{key}");
                if !self.entries.contains_key(&flat) {
                    return Err(HiegatError::Config(format!(
                        "{}: unknown configuration key '{flat}'",
                        path.display()
                    )));
                }
                let rendered = match v {
                    toml::Value::String(s) => s.clone(),
                    toml::Value::Array(items) => items
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                    other => other.to_string(),
                };
                out.push((flat, rendered));
            }
        }
        Ok(out)
    }

    pub fn apply_entries(&mut self, entries: &[(String, String)], source: &'static str) {
        for (k, v) in entries {
            self.set(k, v.clone(), source);
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        PathBuf::from(self.get("data.data_dir").unwrap_or("data"))
    }

    pub fn meta_path(&self) -> Result<PathBuf> {
        let meta = self.get("data.meta")?;
        if meta.is_empty() {
            return Err(HiegatError::Config(
                "no corpus selected: pass --dataset or --meta/--text".into(),
            ));
        }
        Ok(self.data_dir().join(meta))
    }

    pub fn text_path(&self) -> Result<PathBuf> {
        let text = self.get("data.text")?;
        if text.is_empty() {
            return Err(HiegatError::Config(
                "no corpus selected: pass --dataset or --meta/--text".into(),
            ));
        }
        Ok(self.data_dir().join(text))
    }

    pub fn sentence_mode(&self) -> Result<SentenceMode> {
        match self.get("data.mode")? {
            "punct" => Ok(SentenceMode::Punct),
            "chunk" => Ok(SentenceMode::Chunk(self.parse("data.chunk_size")?)),
            other => Err(HiegatError::Config(format!(
                "unknown sentence mode '{other}' (expected punct or chunk)"
            ))),
        }
    }

    fn level(&self, prefix: &str) -> Result<LevelConfig> {
        Ok(LevelConfig {
            layers: self.parse(&format!("model.{prefix}_layers"))?,
            heads: self.parse(&format!("model.{prefix}_heads"))?,
            window: self.parse(&format!("model.{prefix}_window"))?,
        })
    }

    pub fn model_config(&self, num_classes: usize) -> Result<HieGnnConfig> {
        let readout = match self.get("model.readout")? {
            "mean" => ReadoutMode::Mean,
            "max" => ReadoutMode::Max,
            "sum" => ReadoutMode::Sum,
            other => return Err(HiegatError::Config(format!("unknown readout '{other}'"))),
        };
        let lambda_policy = match self.get("model.lambda_policy")? {
            "per_sample" => LambdaPolicy::PerSample,
            "batch_mean" => LambdaPolicy::BatchMean,
            other => {
                return Err(HiegatError::Config(format!(
                    "unknown lambda policy '{other}'"
                )))
            }
        };
        let config = HieGnnConfig {
            embedding_dim: self.parse("model.embedding_dim")?,
            word: self.level("word")?,
            sen: self.level("sen")?,
            doc: self.level("doc")?,
            readout,
            dropout: self.parse("model.dropout")?,
            negative_slope: self.parse("model.negative_slope")?,
            lambda_policy,
            lambda_rule: self.lambda_rule()?,
            num_classes,
            seed: self.parse("run.seed")?,
        };
        config.validate()?;
        Ok(config)
    }

    fn lambda_rule(&self) -> Result<LambdaRule> {
        let raw = self.get("train.lambda")?;
        if raw == "schedule" {
            return Ok(LambdaRule::Schedule);
        }
        let [d, s, w] = parse_lambda_triple(raw)?;
        Ok(LambdaRule::Fixed { d, s, w })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let optimizer = match self.get("train.optimizer")? {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => return Err(HiegatError::Config(format!("unknown optimizer '{other}'"))),
        };
        let clip_raw = self.get("train.clip_norm")?;
        let clip_norm = if clip_raw == "none" {
            None
        } else {
            Some(self.parse::<f64>("train.clip_norm")?)
        };
        let lambda_raw = self.get("train.lambda")?;
        let lambda_override = if lambda_raw == "schedule" {
            None
        } else {
            Some(parse_lambda_triple(lambda_raw)?)
        };
        let cfg = TrainConfig {
            batch_size: self.parse("train.batch_size")?,
            learning_rate: self.parse("train.learning_rate")?,
            max_epochs: self.parse("train.max_epochs")?,
            patience: self.parse("train.patience")?,
            validation_fraction: self.parse("train.validation_fraction")?,
            lambda_override,
            optimizer,
            clip_norm,
            seed: self.parse("run.seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The manifest body: every resolved key, its value and its source.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, (v, source)) in &self.entries {
            let shown = if v.is_empty() { "(unset)" } else { v.as_str() };
            let _ = writeln!(s, "{k} = {shown}  # source: {source}");
        }
        s
    }
}

pub fn parse_lambda_triple(raw: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = raw.split(',').map(|s| s.trim()).collect();
    if parts.len() != 3 {
        return Err(HiegatError::Config(format!(
            "lambda must be three comma-separated weights, got '{raw}'"
        )));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .parse()
            .map_err(|_| HiegatError::Config(format!("bad lambda component '{p}'")))?;
    }
    Ok(out)
}
