//! The run configuration file.
//!
//! ```text
//! {
//!   "task": "ner" | "mner" | "gmner",
//!   "data": {"files": {"train": path, "test": path, "merge_dev": bool}}
//!         | {"synthetic": {"sentences": n, "seed": n, "with_images": bool}},
//!   "encoder": {"embed_dim", "num_layers", "num_heads", "ffn_dim", "max_sequence_length", "dropout_rate"},
//!   "stage1": {"epochs", "batch_size", "lr", "weight_decay", "awp_enabled", "awp_start_fraction", "awp_rho"},
//!   "stage2": {"epochs", "batch_size", "lr", "weight_decay", "lambda_grounding", "grounding_threshold"},
//!   "knowledge": {"max_objects", "max_wiki_chars", "snapshot", "online", "endpoint", "cache_dir", "timeout_secs"},
//!   "harvest_folds": n,
//!   "tyt": "adaptive" | "half" | "full" | "off",
//!   "seeds": [n, ...],
//!   "noise": {"task": {...}, "rates": [...], "seeds": [...]},
//!   "threads": n,
//!   "output_dir": path
//! }
//! ```
//!
//! Relative paths resolve against the working directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::EvalTask;
use crate::io::sha256_hex;
use crate::knowledge::wiki::{DEFAULT_ENDPOINT, DEFAULT_MAX_WIKI_CHARS};
use crate::neural::EncoderShape;
use crate::stage1::Stage1Config;
use crate::stage2::Stage2Config;
use crate::tyt::{NoiseTask, TytMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ner,
    Mner,
    Gmner,
}

impl Task {
    pub fn eval_task(self) -> EvalTask {
        match self {
            Task::Ner | Task::Mner => EvalTask::Ner,
            Task::Gmner => EvalTask::gmner(),
        }
    }

    /// Text-only NER distills stage 1 only.
    pub fn distills_stage2(self) -> bool {
        self != Task::Ner
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Ner => "ner",
            Task::Mner => "mner",
            Task::Gmner => "gmner",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub train: PathBuf,
    pub test: PathBuf,
    /// Fold the `dev` sibling of a CoNLL train file into training.
    #[serde(default)]
    pub merge_dev: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub sentences: usize,
    pub seed: u64,
    pub with_images: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Files(FileData),
    /// Generated corpus, evaluated on its own training split.
    Synthetic(SyntheticData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeConfig {
    pub max_objects: usize,
    pub max_wiki_chars: usize,
    pub snapshot: Option<PathBuf>,
    pub online: bool,
    pub endpoint: String,
    /// Defaults to `<output_dir>/cache`; the cache environment variable
    /// overrides both.
    pub cache_dir: Option<PathBuf>,
    pub timeout_secs: u64,
}

impl Default for KnowledgeConfig {
    fn default() -> Self {
        Self {
            max_objects: 18,
            max_wiki_chars: DEFAULT_MAX_WIKI_CHARS,
            snapshot: None,
            online: false,
            endpoint: DEFAULT_ENDPOINT.to_string(),
            cache_dir: None,
            timeout_secs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub task: NoiseTask,
    pub rates: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            task: NoiseTask::default(),
            rates: vec![0.0, 0.1, 0.2],
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub data: DataSource,
    pub encoder: EncoderShape,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub knowledge: KnowledgeConfig,
    pub harvest_folds: usize,
    pub tyt: TytMode,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub threads: usize,
    pub output_dir: PathBuf,
}

pub const PRESETS: [(&str, &str); 5] = [
    ("conll2003", include_str!("../../configs/conll2003.json")),
    ("twitter2015", include_str!("../../configs/twitter2015.json")),
    ("twitter2017", include_str!("../../configs/twitter2017.json")),
    ("twitter_gmner", include_str!("../../configs/twitter_gmner.json")),
    ("desk", include_str!("../../configs/desk.json")),
];

impl RunConfig {
    pub fn from_value(value: Value) -> Result<Self> {
        let config: RunConfig =
            serde_path_to_error::deserialize(value).map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::from_value(preset_value(name)?)
    }

    /// A config file path, or the name of a built-in preset when no such
    /// file exists. `overrides` are `key.path=value` pairs applied first.
    pub fn load(spec: &str, overrides: &[String]) -> Result<Self> {
        let path = Path::new(spec);
        let mut value = if path.exists() {
            crate::io::read_json(path)?
        } else {
            preset_value(spec).map_err(|_| {
                Error::Config(format!(
                    "`{spec}` is neither a config file nor a preset ({})",
                    PRESETS.map(|p| p.0).join(", ")
                ))
            })?
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        if matches!(self.task, Task::Ner | Task::Mner) && self.stage2.lambda_grounding != 0.0 {
            return Err(Error::Config(format!(
                "task {} requires stage2.lambda_grounding = 0, got {}",
                self.task, self.stage2.lambda_grounding
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.harvest_folds < 2 {
            return Err(Error::Config("harvest_folds must be >= 2".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if self.knowledge.max_wiki_chars == 0 {
            return Err(Error::Config("knowledge.max_wiki_chars must be >= 1".into()));
        }
        if !self.knowledge.endpoint.contains("{query}") {
            return Err(Error::Config("knowledge.endpoint needs a {query} slot".into()));
        }
        self.noise.task.validate()
    }

    /// Hash of everything that affects results; the output directory and
    /// thread count are left out.
    pub fn content_hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
            m.remove("threads");
        }
        Ok(sha256_hex(serde_json::to_string(&v)?.as_bytes()))
    }
}

fn preset_value(name: &str) -> Result<Value> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
    Ok(serde_json::from_str(text)?)
}

/// `a.b.c=value`, where value is parsed as JSON and otherwise taken as a
/// string. Intermediate objects must exist, except that the final key may
/// be new.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parsed = Value::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key in `{assignment}`")))?;
    let mut node = root;
    for p in parts {
        node = node
            .get_mut(p)
            .ok_or_else(|| Error::Config(format!("override `{key}`: no field `{p}`")))?;
    }
    match node {
        Value::Object(m) => {
            m.insert(last.to_string(), parsed);
            Ok(())
        }
        _ => Err(Error::Config(format!("override `{key}`: parent is not an object"))),
    }
}

/// `1,2,3` into seeds.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|_| Error::Config(format!("bad seed `{p}`"))))
        .collect()
}
