//! Line-oriented `key = value` experiment configuration.
//!
//! Keys use dotted section prefixes (`optimizer.s = 0.8`); `#` starts a
//! comment. Unknown keys are rejected. Relative paths resolve against the
//! directory of the config file.

use std::collections::HashSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nn::Activation;
use crate::optim::{BetaSchedule, HyperParams, LrSchedule, MaskStreams, OptimizerKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value {value:?} for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Sweep,
    Verify,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Mode::Train),
            "sweep" => Ok(Mode::Sweep),
            "verify" => Ok(Mode::Verify),
            _ => Err("expected train, sweep or verify".into()),
        }
    }
}

impl Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Train => "train",
            Mode::Sweep => "sweep",
            Mode::Verify => "verify",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DataKind {
    #[default]
    Blobs,
    Idx,
}

impl FromStr for DataKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "blobs" => Ok(DataKind::Blobs),
            "idx" => Ok(DataKind::Idx),
            _ => Err("expected blobs or idx".into()),
        }
    }
}

impl Display for DataKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataKind::Blobs => "blobs",
            DataKind::Idx => "idx",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobsSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub spacing: f64,
    pub sigma: f64,
}

impl Default for BlobsSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            dim: 2,
            train_per_class: 200,
            test_per_class: 100,
            spacing: 2.0,
            sigma: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IdxSpec {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Keep only the first N examples; 0 keeps all.
    pub train_limit: usize,
    pub test_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataSpec {
    pub kind: DataKind,
    pub blobs: BlobsSpec,
    pub idx: IdxSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![16],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle: bool,
    /// Evaluate every N epochs; the first and last epochs are always evaluated.
    pub eval_every: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            shuffle: true,
            eval_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSpec {
    pub histogram_epochs: Vec<usize>,
    pub histogram_bins: usize,
    pub pca_epochs: Vec<usize>,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            histogram_epochs: Vec::new(),
            histogram_bins: 10,
            pca_epochs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub s_values: Vec<f64>,
    pub threshold: f64,
    pub parallel: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            s_values: vec![1.0, 0.8, 0.6, 0.2],
            threshold: 0.9,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySpec {
    pub lemma43_traces: usize,
    pub lemma44_traces: usize,
    pub regret_instances: usize,
    pub max_steps: usize,
    pub max_dim: usize,
    pub regret_horizon: usize,
    /// Gradient scale `G∞` of random traces is drawn uniformly from this range.
    pub g_inf_min: f64,
    pub g_inf_max: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            lemma43_traces: 1000,
            lemma44_traces: 200,
            regret_instances: 50,
            max_steps: 1000,
            max_dim: 8,
            regret_horizon: 2000,
            g_inf_min: 1.0,
            g_inf_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: Mode,
    pub data: DataSpec,
    pub model: ModelSpec,
    pub optimizer: OptimizerKind,
    pub hp: HyperParams,
    pub mask_streams: MaskStreams,
    pub train: TrainSpec,
    pub analysis: AnalysisSpec,
    /// Write a checkpoint every N epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub sweep: SweepSpec,
    pub verify: VerifySpec,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            mode: Mode::Train,
            data: DataSpec::default(),
            model: ModelSpec::default(),
            optimizer: OptimizerKind::StochGradAdam,
            hp: HyperParams::default(),
            mask_streams: MaskStreams::Serial,
            train: TrainSpec::default(),
            analysis: AnalysisSpec::default(),
            checkpoint_every: 0,
            sweep: SweepSpec::default(),
            verify: VerifySpec::default(),
            output_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| parse(key, item))
        .collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn resolve(base: Option<&Path>, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty());
        Self::parse_with_base(&text, base)
    }

    /// Parses config text; relative paths stay relative to the working directory.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with_base(text, None)
    }

    fn parse_with_base(text: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                text: raw.to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Invalid(format!("key `{key}` set twice (line {})", n + 1)));
            }
            cfg.set_with_base(key, value, base)?;
        }
        Ok(cfg)
    }

    /// Sets one key; paths are taken as given.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set_with_base(key, value, None)
    }

    fn set_with_base(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        let k = key;
        let v = value;
        match k {
            "seed" => self.seed = parse(k, v)?,
            "mode" => self.mode = parse(k, v)?,
            "data.kind" => self.data.kind = parse(k, v)?,
            "data.n_classes" => self.data.blobs.n_classes = parse(k, v)?,
            "data.dim" => self.data.blobs.dim = parse(k, v)?,
            "data.train_per_class" => self.data.blobs.train_per_class = parse(k, v)?,
            "data.test_per_class" => self.data.blobs.test_per_class = parse(k, v)?,
            "data.spacing" => self.data.blobs.spacing = parse(k, v)?,
            "data.sigma" => self.data.blobs.sigma = parse(k, v)?,
            "data.train_images" => self.data.idx.train_images = resolve(base, v),
            "data.train_labels" => self.data.idx.train_labels = resolve(base, v),
            "data.test_images" => self.data.idx.test_images = resolve(base, v),
            "data.test_labels" => self.data.idx.test_labels = resolve(base, v),
            "data.train_limit" => self.data.idx.train_limit = parse(k, v)?,
            "data.test_limit" => self.data.idx.test_limit = parse(k, v)?,
            "model.hidden" => self.model.hidden = parse_list(k, v)?,
            "model.activation" => self.model.activation = parse(k, v)?,
            "optimizer.name" => self.optimizer = parse(k, v)?,
            "optimizer.alpha" => self.hp.alpha = parse(k, v)?,
            "optimizer.beta1" => self.hp.beta1 = parse(k, v)?,
            "optimizer.beta2" => self.hp.beta2 = parse(k, v)?,
            "optimizer.epsilon" => self.hp.epsilon = parse(k, v)?,
            "optimizer.s" => self.hp.s = parse(k, v)?,
            "optimizer.lambda" => self.hp.lambda = parse(k, v)?,
            "optimizer.beta_schedule" => self.hp.beta_schedule = parse::<BetaSchedule>(k, v)?,
            "optimizer.lr_schedule" => self.hp.lr_schedule = parse::<LrSchedule>(k, v)?,
            "optimizer.clip" => {
                self.hp.clip = match v {
                    "none" | "" => None,
                    _ => Some(parse(k, v)?),
                }
            }
            "optimizer.mask_streams" => self.mask_streams = parse(k, v)?,
            "train.epochs" => self.train.epochs = parse(k, v)?,
            "train.batch_size" => self.train.batch_size = parse(k, v)?,
            "train.shuffle" => self.train.shuffle = parse(k, v)?,
            "train.eval_every" => self.train.eval_every = parse(k, v)?,
            "analysis.histogram_epochs" => self.analysis.histogram_epochs = parse_list(k, v)?,
            "analysis.histogram_bins" => self.analysis.histogram_bins = parse(k, v)?,
            "analysis.pca_epochs" => self.analysis.pca_epochs = parse_list(k, v)?,
            "checkpoint.every" => self.checkpoint_every = parse(k, v)?,
            "sweep.s_values" => self.sweep.s_values = parse_list(k, v)?,
            "sweep.threshold" => self.sweep.threshold = parse(k, v)?,
            "sweep.parallel" => self.sweep.parallel = parse(k, v)?,
            "verify.lemma43_traces" => self.verify.lemma43_traces = parse(k, v)?,
            "verify.lemma44_traces" => self.verify.lemma44_traces = parse(k, v)?,
            "verify.regret_instances" => self.verify.regret_instances = parse(k, v)?,
            "verify.max_steps" => self.verify.max_steps = parse(k, v)?,
            "verify.max_dim" => self.verify.max_dim = parse(k, v)?,
            "verify.regret_horizon" => self.verify.regret_horizon = parse(k, v)?,
            "verify.g_inf_min" => self.verify.g_inf_min = parse(k, v)?,
            "verify.g_inf_max" => self.verify.g_inf_max = parse(k, v)?,
            "output.dir" => self.output_dir = Some(resolve(base, v)),
            _ => return Err(ConfigError::UnknownKey(k.to_string())),
        }
        Ok(())
    }

    /// Checks ranges and that every referenced input file exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        self.hp.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match self.data.kind {
            DataKind::Blobs => {
                let b = &self.data.blobs;
                if b.n_classes < 2 || b.dim == 0 || b.train_per_class == 0 || b.test_per_class == 0 {
                    return invalid("blobs need n_classes >= 2 and non-zero dim and sizes".into());
                }
                if !(b.sigma > 0.0 && b.sigma.is_finite() && b.spacing.is_finite()) {
                    return invalid("blobs need sigma > 0 and finite spacing".into());
                }
            }
            DataKind::Idx => {
                let i = &self.data.idx;
                for (name, p) in [
                    ("data.train_images", &i.train_images),
                    ("data.train_labels", &i.train_labels),
                    ("data.test_images", &i.test_images),
                    ("data.test_labels", &i.test_labels),
                ] {
                    if p.as_os_str().is_empty() {
                        return invalid(format!("`{name}` is required for idx data"));
                    }
                    if !p.is_file() {
                        return invalid(format!("`{name}` = {} does not exist", p.display()));
                    }
                }
            }
        }
        if self.model.hidden.contains(&0) {
            return invalid("hidden layer widths must be >= 1".into());
        }
        if self.train.batch_size == 0 || self.train.eval_every == 0 {
            return invalid("train.batch_size and train.eval_every must be >= 1".into());
        }
        if self.analysis.histogram_bins == 0 {
            return invalid("analysis.histogram_bins must be >= 1".into());
        }
        let mut seen = Vec::new();
        for &s in &self.sweep.s_values {
            if !(0.0..=1.0).contains(&s) {
                return invalid(format!("sweep s value {s} outside [0, 1]"));
            }
            if seen.contains(&s) {
                return invalid(format!("duplicate sweep s value {s}"));
            }
            seen.push(s);
        }
        if self.mode == Mode::Sweep && self.sweep.s_values.is_empty() {
            return invalid("sweep.s_values is empty".into());
        }
        if !(0.0..=1.0).contains(&self.sweep.threshold) {
            return invalid("sweep.threshold must lie in [0, 1]".into());
        }
        let v = &self.verify;
        if v.max_steps == 0 || v.max_dim == 0 || v.regret_horizon == 0 {
            return invalid("verify sizes must be >= 1".into());
        }
        if !(v.g_inf_min > 0.0 && v.g_inf_min <= v.g_inf_max && v.g_inf_max.is_finite()) {
            return invalid("verify needs 0 < g_inf_min <= g_inf_max".into());
        }
        Ok(())
    }

    /// Every key with its canonical value, paired with whether it can change
    /// the training trajectory.
    pub fn entries(&self) -> Vec<(&'static str, String, bool)> {
        let mut e: Vec<(&'static str, String, bool)> = vec![
            ("seed", self.seed.to_string(), true),
            ("mode", self.mode.to_string(), false),
            ("data.kind", self.data.kind.to_string(), true),
        ];
        match self.data.kind {
            DataKind::Blobs => {
                let b = &self.data.blobs;
                e.extend([
                    ("data.n_classes", b.n_classes.to_string(), true),
                    ("data.dim", b.dim.to_string(), true),
                    ("data.train_per_class", b.train_per_class.to_string(), true),
                    ("data.test_per_class", b.test_per_class.to_string(), true),
                    ("data.spacing", format!("{:?}", b.spacing), true),
                    ("data.sigma", format!("{:?}", b.sigma), true),
                ]);
            }
            DataKind::Idx => {
                let i = &self.data.idx;
                e.extend([
                    ("data.train_images", i.train_images.display().to_string(), true),
                    ("data.train_labels", i.train_labels.display().to_string(), true),
                    ("data.test_images", i.test_images.display().to_string(), true),
                    ("data.test_labels", i.test_labels.display().to_string(), true),
                    ("data.train_limit", i.train_limit.to_string(), true),
                    ("data.test_limit", i.test_limit.to_string(), true),
                ]);
            }
        }
        let hp = &self.hp;
        e.extend([
            ("model.hidden", join(&self.model.hidden), true),
            ("model.activation", self.model.activation.to_string(), true),
            ("optimizer.name", self.optimizer.to_string(), true),
            ("optimizer.alpha", format!("{:?}", hp.alpha), true),
            ("optimizer.beta1", format!("{:?}", hp.beta1), true),
            ("optimizer.beta2", format!("{:?}", hp.beta2), true),
            ("optimizer.epsilon", format!("{:?}", hp.epsilon), true),
            ("optimizer.s", format!("{:?}", hp.s), true),
            ("optimizer.lambda", format!("{:?}", hp.lambda), true),
            ("optimizer.beta_schedule", hp.beta_schedule.to_string(), true),
            ("optimizer.lr_schedule", hp.lr_schedule.to_string(), true),
            (
                "optimizer.clip",
                hp.clip.map_or_else(|| "none".to_string(), |c| format!("{c:?}")),
                true,
            ),
            ("optimizer.mask_streams", self.mask_streams.to_string(), true),
            ("train.epochs", self.train.epochs.to_string(), false),
            ("train.batch_size", self.train.batch_size.to_string(), true),
            ("train.shuffle", self.train.shuffle.to_string(), true),
            ("train.eval_every", self.train.eval_every.to_string(), false),
            ("analysis.histogram_epochs", join(&self.analysis.histogram_epochs), false),
            ("analysis.histogram_bins", self.analysis.histogram_bins.to_string(), false),
            ("analysis.pca_epochs", join(&self.analysis.pca_epochs), false),
            ("checkpoint.every", self.checkpoint_every.to_string(), false),
        ]);
        let sw = &self.sweep;
        let v = &self.verify;
        e.extend([
            ("sweep.s_values", join(&sw.s_values), false),
            ("sweep.threshold", format!("{:?}", sw.threshold), false),
            ("sweep.parallel", sw.parallel.to_string(), false),
            ("verify.lemma43_traces", v.lemma43_traces.to_string(), false),
            ("verify.lemma44_traces", v.lemma44_traces.to_string(), false),
            ("verify.regret_instances", v.regret_instances.to_string(), false),
            ("verify.max_steps", v.max_steps.to_string(), false),
            ("verify.max_dim", v.max_dim.to_string(), false),
            ("verify.regret_horizon", v.regret_horizon.to_string(), false),
            ("verify.g_inf_min", format!("{:?}", v.g_inf_min), false),
            ("verify.g_inf_max", format!("{:?}", v.g_inf_max), false),
        ]);
        if let Some(dir) = &self.output_dir {
            e.push(("output.dir", dir.display().to_string(), false));
        }
        e
    }

    /// Canonical config text; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v, _)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 over the trajectory-affecting keys. Epoch count, cadence,
    /// exports and output location are excluded so a run can be resumed
    /// with a larger epoch budget.
    pub fn trajectory_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (k, v, affects) in self.entries() {
            if affects {
                h.update(k.as_bytes());
                h.update(b"=");
                h.update(v.as_bytes());
                h.update(b"\n");
            }
        }
        h.finalize().into()
    }

    /// Input width and class count implied by the data spec, without loading IDX files.
    pub fn blobs_dims(&self) -> Option<(usize, usize)> {
        (self.data.kind == DataKind::Blobs).then_some((self.data.blobs.dim, self.data.blobs.n_classes))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
