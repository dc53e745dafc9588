//! `key = value` run configuration with dotted keys and `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DatasetSpec, Family, Split};
use crate::error::{Error, Result};
use crate::model::{InitScheme, ModelConfig};
use crate::tensor::GeluKind;
use crate::trainer::TrainConfig;

/// Which evaluation protocols `eval` runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    InDist,
    CrossFamily,
    Perturbed,
    All,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::InDist => "in_dist",
            Protocol::CrossFamily => "cross_family",
            Protocol::Perturbed => "perturbed",
            Protocol::All => "all",
        }
    }

    pub fn includes(self, p: Protocol) -> bool {
        self == Protocol::All || self == p
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_dist" => Ok(Protocol::InDist),
            "cross_family" => Ok(Protocol::CrossFamily),
            "perturbed" => Ok(Protocol::Perturbed),
            "all" => Ok(Protocol::All),
            _ => Err(Error::Config(format!(
                "unknown protocol {s:?} (expected in_dist, cross_family, perturbed or all)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitChoice {
    #[default]
    TruncNormal,
    Xavier,
}

impl InitChoice {
    pub fn name(self) -> &'static str {
        match self {
            InitChoice::TruncNormal => "trunc_normal",
            InitChoice::Xavier => "xavier",
        }
    }

    pub fn scheme(self) -> InitScheme {
        match self {
            InitChoice::TruncNormal => InitScheme::Standard,
            InitChoice::Xavier => InitScheme::Xavier,
        }
    }
}

impl FromStr for InitChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trunc_normal" => Ok(InitChoice::TruncNormal),
            "xavier" => Ok(InitChoice::Xavier),
            _ => Err(Error::Config(format!("unknown init {s:?} (expected trunc_normal or xavier)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub family: Family,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub frames_per_video: usize,
    pub seed: u64,
    /// Also generate the other family's test split for the cross-family protocol.
    pub cross_family: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        let d = DatasetSpec::default();
        DataConfig {
            family: d.family,
            train: d.train,
            val: d.val,
            test: d.test,
            frames_per_video: d.frames_per_video,
            seed: d.seed,
            cross_family: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathsConfig {
    /// Where `gen-data` writes images and the manifest, and where the other
    /// commands read them.
    pub data_dir: PathBuf,
    /// Where weights, history and reports are written.
    pub out_dir: PathBuf,
    /// Weights to read; empty means `<out_dir>/weights.bolf`.
    pub weights: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            weights: PathBuf::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub protocol: Protocol,
    pub split: Split,
    pub threshold: f64,
    /// Distortion level of the single-kind and mixed perturbation protocols.
    pub level: u8,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            protocol: Protocol::All,
            split: Split::Test,
            threshold: 0.5,
            level: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub init: InitChoice,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub paths: PathsConfig,
    pub eval: EvalConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

/// Every accepted key, in serialization order.
pub const KEYS: &[&str] = &[
    "model.height",
    "model.width",
    "model.channels",
    "model.patch_size",
    "model.dim",
    "model.depth",
    "model.heads",
    "model.mlp_ratio",
    "model.dropout",
    "model.gelu",
    "model.init",
    "train.epochs",
    "train.batch_size",
    "train.lr0",
    "train.momentum",
    "train.lr_min",
    "train.seed",
    "train.eval_every",
    "train.weight_decay",
    "train.grad_clip",
    "data.family",
    "data.train",
    "data.val",
    "data.test",
    "data.frames_per_video",
    "data.seed",
    "data.cross_family",
    "paths.data_dir",
    "paths.out_dir",
    "paths.weights",
    "eval.protocol",
    "eval.split",
    "eval.threshold",
    "eval.level",
    "eval.seed",
];

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "model.height" => self.model.height = parse(key, v)?,
            "model.width" => self.model.width = parse(key, v)?,
            "model.channels" => self.model.channels = parse(key, v)?,
            "model.patch_size" => self.model.patch_size = parse(key, v)?,
            "model.dim" => self.model.dim = parse(key, v)?,
            "model.depth" => self.model.depth = parse(key, v)?,
            "model.heads" => self.model.heads = parse(key, v)?,
            "model.mlp_ratio" => self.model.mlp_ratio = parse(key, v)?,
            "model.dropout" => self.model.dropout = parse(key, v)?,
            "model.gelu" => {
                self.model.gelu = GeluKind::parse(v)
                    .ok_or_else(|| Error::Config(format!("model.gelu: expected exact or tanh, got {v:?}")))?
            }
            "model.init" => self.init = v.parse()?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr0" => self.train.lr0 = parse(key, v)?,
            "train.momentum" => self.train.momentum = parse(key, v)?,
            "train.lr_min" => self.train.lr_min = parse(key, v)?,
            "train.seed" => self.train.seed = parse(key, v)?,
            "train.eval_every" => self.train.eval_every = parse(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, v)?,
            "train.grad_clip" => self.train.grad_clip = parse(key, v)?,
            "data.family" => self.data.family = v.parse()?,
            "data.train" => self.data.train = parse(key, v)?,
            "data.val" => self.data.val = parse(key, v)?,
            "data.test" => self.data.test = parse(key, v)?,
            "data.frames_per_video" => self.data.frames_per_video = parse(key, v)?,
            "data.seed" => self.data.seed = parse(key, v)?,
            "data.cross_family" => self.data.cross_family = parse_bool(key, v)?,
            "paths.data_dir" => self.paths.data_dir = PathBuf::from(v),
            "paths.out_dir" => self.paths.out_dir = PathBuf::from(v),
            "paths.weights" => self.paths.weights = PathBuf::from(v),
            "eval.protocol" => self.eval.protocol = v.parse()?,
            "eval.split" => self.eval.split = v.parse().map_err(|_| Error::Config(format!("eval.split: unknown split {v:?}")))?,
            "eval.threshold" => self.eval.threshold = parse(key, v)?,
            "eval.level" => self.eval.level = parse(key, v)?,
            "eval.seed" => self.eval.seed = parse(key, v)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key {other:?}; valid keys are {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Textual value of one key.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "model.height" => self.model.height.to_string(),
            "model.width" => self.model.width.to_string(),
            "model.channels" => self.model.channels.to_string(),
            "model.patch_size" => self.model.patch_size.to_string(),
            "model.dim" => self.model.dim.to_string(),
            "model.depth" => self.model.depth.to_string(),
            "model.heads" => self.model.heads.to_string(),
            "model.mlp_ratio" => self.model.mlp_ratio.to_string(),
            "model.dropout" => self.model.dropout.to_string(),
            "model.gelu" => self.model.gelu.name().to_string(),
            "model.init" => self.init.name().to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.lr0" => self.train.lr0.to_string(),
            "train.momentum" => self.train.momentum.to_string(),
            "train.lr_min" => self.train.lr_min.to_string(),
            "train.seed" => self.train.seed.to_string(),
            "train.eval_every" => self.train.eval_every.to_string(),
            "train.weight_decay" => self.train.weight_decay.to_string(),
            "train.grad_clip" => self.train.grad_clip.to_string(),
            "data.family" => self.data.family.to_string(),
            "data.train" => self.data.train.to_string(),
            "data.val" => self.data.val.to_string(),
            "data.test" => self.data.test.to_string(),
            "data.frames_per_video" => self.data.frames_per_video.to_string(),
            "data.seed" => self.data.seed.to_string(),
            "data.cross_family" => self.data.cross_family.to_string(),
            "paths.data_dir" => self.paths.data_dir.display().to_string(),
            "paths.out_dir" => self.paths.out_dir.display().to_string(),
            "paths.weights" => self.paths.weights.display().to_string(),
            "eval.protocol" => self.eval.protocol.name().to_string(),
            "eval.split" => self.eval.split.to_string(),
            "eval.threshold" => self.eval.threshold.to_string(),
            "eval.level" => self.eval.level.to_string(),
            "eval.seed" => self.eval.seed.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Parses config text on top of the defaults, then validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key = value` lines (blank lines and `#` comments ignored).
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Applies a `key=value` override from the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form key=value")))?;
        self.set(k, v)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.dataset_spec(self.data.family).validate()?;
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::Config(format!("eval.threshold must lie in [0, 1], got {}", self.eval.threshold)));
        }
        if self.eval.level > crate::data::MAX_LEVEL {
            return Err(Error::Config(format!("eval.level must be 0..=5, got {}", self.eval.level)));
        }
        Ok(())
    }

    /// Dataset spec for `family`, with image dimensions taken from the model.
    pub fn dataset_spec(&self, family: Family) -> DatasetSpec {
        DatasetSpec {
            family,
            train: self.data.train,
            val: self.data.val,
            test: self.data.test,
            frames_per_video: self.data.frames_per_video,
            height: self.model.height,
            width: self.model.width,
            channels: self.model.channels,
            seed: self.data.seed,
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths.data_dir.join("manifest.csv")
    }

    pub fn weights_path(&self) -> PathBuf {
        if self.paths.weights.as_os_str().is_empty() {
            self.paths.out_dir.join("weights.bolf")
        } else {
            self.paths.weights.clone()
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

impl std::fmt::Display for RunConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut section = "";
        let mut out = String::new();
        for key in KEYS {
            let prefix = key.split('.').next().unwrap_or("");
            if prefix != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = prefix;
            }
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("every listed key has a value"));
        }
        f.write_str(&out)
    }
}
