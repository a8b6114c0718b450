//! Run configuration: one flat JSON object with dotted keys.
//!
//! ```json
//! {"model.variant": "DEFINE", "model.n": 64, "train.lr": 1.0, "data.train": "train.txt"}
//! ```
//!
//! Missing keys take their defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde_json::{Map, Number, Value};

use crate::embedder::ExpansionVariant;
use crate::error::{Error, Result};
use crate::lm::{ModelConfig, Optimizer, TrainConfig};
use crate::transforms::Activation;

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    /// Tokens seen fewer times than this map to `<unk>`.
    pub min_count: u64,
    pub eval_batch_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            valid: None,
            min_count: 1,
            eval_batch_size: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub out: Option<PathBuf>,
}

/// Every accepted key, in serialization order.
pub const KEYS: &[&str] = &[
    "model.variant",
    "model.vocab_size",
    "model.n",
    "model.k",
    "model.m",
    "model.depth",
    "model.g_max",
    "model.use_reduce",
    "model.dims",
    "model.bias",
    "model.activation",
    "model.seed",
    "model.hidden",
    "model.lstm_layers",
    "model.zero_projection",
    "train.epochs",
    "train.lr",
    "train.clip",
    "train.batch_size",
    "train.bptt",
    "train.seed",
    "train.optimizer",
    "train.momentum",
    "train.dropout",
    "train.lr_decay",
    "data.train",
    "data.valid",
    "data.min_count",
    "data.eval_batch_size",
    "run.out",
];

fn usize_of(v: &Value) -> std::result::Result<usize, String> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| format!("expected a non-negative integer, got {v}"))
}

fn u64_of(v: &Value) -> std::result::Result<u64, String> {
    v.as_u64()
        .ok_or_else(|| format!("expected a non-negative integer, got {v}"))
}

fn f64_of(v: &Value) -> std::result::Result<f64, String> {
    v.as_f64().ok_or_else(|| format!("expected a number, got {v}"))
}

fn bool_of(v: &Value) -> std::result::Result<bool, String> {
    v.as_bool().ok_or_else(|| format!("expected true or false, got {v}"))
}

fn str_of(v: &Value) -> std::result::Result<&str, String> {
    v.as_str().ok_or_else(|| format!("expected a string, got {v}"))
}

fn path_of(v: &Value) -> std::result::Result<Option<PathBuf>, String> {
    if v.is_null() {
        Ok(None)
    } else {
        str_of(v).map(|s| Some(PathBuf::from(s)))
    }
}

fn path_value(p: &Option<PathBuf>) -> Value {
    p.as_ref()
        .map_or(Value::Null, |p| Value::String(p.to_string_lossy().into_owned()))
}

fn float(x: f64) -> Value {
    Number::from_f64(x).map_or(Value::Null, Value::Number)
}

impl RunConfig {
    /// Sets one dotted key. The value is type-checked but not validated
    /// against the rest of the config.
    pub fn set(&mut self, key: &str, v: &Value) -> std::result::Result<(), String> {
        let d = &mut self.model.define;
        let t = &mut self.train;
        match key {
            "model.variant" => d.variant = str_of(v)?.parse().map_err(|e: Error| e.to_string())?,
            "model.vocab_size" => d.vocab_size = usize_of(v)?,
            "model.n" => d.n = usize_of(v)?,
            "model.k" => d.k = usize_of(v)?,
            "model.m" => d.m = usize_of(v)?,
            "model.depth" => d.depth = usize_of(v)?,
            "model.g_max" => d.g_max = usize_of(v)?,
            "model.use_reduce" => d.use_reduce = bool_of(v)?,
            "model.dims" => {
                d.dims = match v {
                    Value::Null => None,
                    Value::Array(items) => Some(items.iter().map(usize_of).collect::<std::result::Result<_, _>>()?),
                    other => return Err(format!("expected an array of integers or null, got {other}")),
                }
            }
            "model.bias" => d.bias = bool_of(v)?,
            "model.activation" => {
                d.activation = str_of(v)?.parse::<Activation>().map_err(|e| e.to_string())?
            }
            "model.seed" => d.seed = u64_of(v)?,
            "model.hidden" => self.model.hidden = usize_of(v)?,
            "model.lstm_layers" => self.model.lstm_layers = usize_of(v)?,
            "model.zero_projection" => self.model.zero_projection = bool_of(v)?,
            "train.epochs" => t.epochs = usize_of(v)?,
            "train.lr" => t.lr = f64_of(v)?,
            "train.clip" => t.clip = f64_of(v)?,
            "train.batch_size" => t.batch_size = usize_of(v)?,
            "train.bptt" => t.bptt = usize_of(v)?,
            "train.seed" => t.seed = u64_of(v)?,
            "train.optimizer" => t.optimizer = str_of(v)?.parse::<Optimizer>().map_err(|e| e.to_string())?,
            "train.momentum" => t.momentum = f64_of(v)?,
            "train.dropout" => t.dropout = f64_of(v)?,
            "train.lr_decay" => t.lr_decay = f64_of(v)?,
            "data.train" => self.data.train = path_of(v)?,
            "data.valid" => self.data.valid = path_of(v)?,
            "data.min_count" => self.data.min_count = u64_of(v)?,
            "data.eval_batch_size" => self.data.eval_batch_size = usize_of(v)?,
            "run.out" => self.out = path_of(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Sets a key from command-line text: numbers, booleans, `null` and
    /// JSON arrays are parsed as JSON, anything else is taken as a string.
    pub fn set_str(&mut self, key: &str, text: &str) -> Result<()> {
        let v = serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()));
        self.set(key, &v)
            .map_err(|e| Error::InvalidConfig(vec![format!("{key}: {e}")]))
    }

    pub fn to_json(&self) -> Map<String, Value> {
        let d = &self.model.define;
        let t = &self.train;
        let entries: Vec<(&str, Value)> = vec![
            ("model.variant", Value::from(d.variant.name())),
            ("model.vocab_size", Value::from(d.vocab_size)),
            ("model.n", Value::from(d.n)),
            ("model.k", Value::from(d.k)),
            ("model.m", Value::from(d.m)),
            ("model.depth", Value::from(d.depth)),
            ("model.g_max", Value::from(d.g_max)),
            ("model.use_reduce", Value::from(d.use_reduce)),
            ("model.dims", d.dims.as_ref().map_or(Value::Null, |v| Value::from(v.clone()))),
            ("model.bias", Value::from(d.bias)),
            (
                "model.activation",
                Value::from(match d.activation {
                    Activation::None => "none",
                    Activation::Tanh => "tanh",
                }),
            ),
            ("model.seed", Value::from(d.seed)),
            ("model.hidden", Value::from(self.model.hidden)),
            ("model.lstm_layers", Value::from(self.model.lstm_layers)),
            ("model.zero_projection", Value::from(self.model.zero_projection)),
            ("train.epochs", Value::from(t.epochs)),
            ("train.lr", float(t.lr)),
            ("train.clip", float(t.clip)),
            ("train.batch_size", Value::from(t.batch_size)),
            ("train.bptt", Value::from(t.bptt)),
            ("train.seed", Value::from(t.seed)),
            (
                "train.optimizer",
                Value::from(match t.optimizer {
                    Optimizer::Sgd => "sgd",
                    Optimizer::SgdMomentum => "sgd_momentum",
                }),
            ),
            ("train.momentum", float(t.momentum)),
            ("train.dropout", float(t.dropout)),
            ("train.lr_decay", float(t.lr_decay)),
            ("data.train", path_value(&self.data.train)),
            ("data.valid", path_value(&self.data.valid)),
            ("data.min_count", Value::from(self.data.min_count)),
            ("data.eval_batch_size", Value::from(self.data.eval_batch_size)),
            ("run.out", path_value(&self.out)),
        ];
        debug_assert_eq!(entries.len(), KEYS.len());
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Pretty JSON, one key per line, newline-terminated.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&Value::Object(self.to_json())).expect("serializable");
        s.push('\n');
        s
    }

    /// Parses without validating. Reports every unknown or ill-typed key.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(vec![format!("not valid JSON: {e}")]))?;
        let Value::Object(map) = value else {
            return Err(Error::InvalidConfig(vec!["config must be a JSON object".into()]));
        };
        let mut cfg = RunConfig::default();
        let mut problems = Vec::new();
        for (key, v) in &map {
            if let Err(e) = cfg.set(key, v) {
                problems.push(format!("{key}: {e}"));
            }
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        RunConfig::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = self.model.violations();
        out.extend(self.train.violations());
        if self.data.min_count == 0 {
            out.push("data.min_count must be >= 1".into());
        }
        if self.data.eval_batch_size == 0 {
            out.push("data.eval_batch_size must be >= 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    pub fn variant(&self) -> ExpansionVariant {
        self.model.define.variant
    }
}
