//! Run configuration and the plain-text config file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::data::Mode;
use crate::distill::{DistillConfig, DistillVariant, StudentInit};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            batch_size: 16,
            max_epochs: 50,
            patience: 5,
        }
    }
}

/// Teacher/student architecture pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Base,
    Large,
    LargeToBase,
}

impl Preset {
    pub fn label(self) -> &'static str {
        match self {
            Preset::Base => "base",
            Preset::Large => "large",
            Preset::LargeToBase => "large-to-base",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Preset::Base),
            "large" => Ok(Preset::Large),
            "large-to-base" => Ok(Preset::LargeToBase),
            other => Err(Error::Parse(format!("unknown preset {other:?}"))),
        }
    }

    pub fn teacher_config(self, vocab_size: usize, max_seq_len: usize) -> ModelConfig {
        match self {
            Preset::Base => ModelConfig::base(vocab_size, max_seq_len),
            Preset::Large | Preset::LargeToBase => ModelConfig::large(vocab_size, max_seq_len),
        }
    }

    pub fn student_config(self, vocab_size: usize, max_seq_len: usize) -> ModelConfig {
        match self {
            Preset::Base | Preset::LargeToBase => ModelConfig::base(vocab_size, max_seq_len),
            Preset::Large => ModelConfig::large(vocab_size, max_seq_len),
        }
    }
}

/// Training-time rationale corruption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FtrType {
    Gold,
    Replace,
    Shuffle,
}

impl FtrType {
    pub fn label(self) -> &'static str {
        match self {
            FtrType::Gold => "gold",
            FtrType::Replace => "replace",
            FtrType::Shuffle => "shuffle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gold" => Ok(FtrType::Gold),
            "replace" => Ok(FtrType::Replace),
            "shuffle" => Ok(FtrType::Shuffle),
            other => Err(Error::Parse(format!("unknown rationale type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Vanilla,
    VanillaTeacherInit,
    DistillStudent,
    DistillTeacher,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    pub mode: Mode,
    pub distill: DistillConfig,
    pub preset: Preset,
    pub seeds: Vec<u64>,
    pub hparams: HyperParams,
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
    pub train_fraction: f64,
    pub ftr_type: FtrType,
    /// Checkpoint prefix (without `_seedN`) of the teacher this run loads.
    pub teacher_prefix: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(method: Method, mode: Mode, dataset_dir: PathBuf, out_dir: PathBuf) -> Self {
        Self {
            method,
            mode,
            distill: DistillConfig {
                variant: DistillVariant::InOut,
                use_task_loss: false,
                teacher_bottleneck: true,
                student_init: StudentInit::FromTeacher,
            },
            preset: Preset::Base,
            seeds: vec![0, 1, 2],
            hparams: HyperParams::default(),
            dataset_dir,
            out_dir,
            train_fraction: 1.0,
            ftr_type: FtrType::Gold,
            teacher_prefix: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} must lie in (0, 1]",
                self.train_fraction
            )));
        }
        if matches!(
            self.method,
            Method::DistillStudent | Method::VanillaTeacherInit
        ) && self.teacher_prefix.is_none()
        {
            return Err(Error::Config(
                "this method requires an existing teacher checkpoint".into(),
            ));
        }
        Ok(())
    }
}

/// `key = value` lines under `[section]` headers. `#` starts a comment.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: HashMap<(String, String), String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse(format!(
                    "config line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            entries.insert(
                (section.clone(), key.trim().to_string()),
                value.trim().to_string(),
            );
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::Parse(format!(
                    "config [{section}] {key} = {v:?} has the wrong type"
                ))
            }),
        }
    }

    /// Fold config-file values into a run config. Only present keys change
    /// anything.
    pub fn apply_to(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(v) = self.get("dataset", "path") {
            cfg.dataset_dir = PathBuf::from(v);
        }
        if let Some(v) = self.get_parsed::<f64>("dataset", "train_fraction")? {
            cfg.train_fraction = v;
        }
        if let Some(v) = self.get("model", "preset") {
            cfg.preset = Preset::parse(v)?;
        }
        if let Some(v) = self.get_parsed::<f64>("train", "lr")? {
            cfg.hparams.lr = v;
        }
        if let Some(v) = self.get_parsed::<usize>("train", "batch_size")? {
            cfg.hparams.batch_size = v;
        }
        if let Some(v) = self.get_parsed::<usize>("train", "max_epochs")? {
            cfg.hparams.max_epochs = v;
        }
        if let Some(v) = self.get_parsed::<usize>("train", "patience")? {
            cfg.hparams.patience = v;
        }
        if let Some(v) = self.get("train", "seeds") {
            cfg.seeds = parse_seeds(v)?;
        }
        if let Some(v) = self.get("distill", "variant") {
            cfg.distill.variant = parse_variant(v)?;
        }
        if let Some(v) = self.get_parsed::<bool>("distill", "use_task_loss")? {
            cfg.distill.use_task_loss = v;
        }
        if let Some(v) = self.get_parsed::<bool>("distill", "teacher_bottleneck")? {
            cfg.distill.teacher_bottleneck = v;
        }
        if let Some(v) = self.get("distill", "student_init") {
            cfg.distill.student_init = parse_student_init(v)?;
        }
        if let Some(v) = self.get("run", "mode") {
            cfg.mode = Mode::parse(v)?;
        }
        if let Some(v) = self.get("run", "ftr_type") {
            cfg.ftr_type = FtrType::parse(v)?;
        }
        if let Some(v) = self.get("run", "out_dir") {
            cfg.out_dir = PathBuf::from(v);
        }
        if let Some(v) = self.get("run", "teacher") {
            cfg.teacher_prefix = Some(PathBuf::from(v));
        }
        Ok(())
    }
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|_| Error::Parse(format!("bad seed {p:?}")))
        })
        .collect()
}

pub fn parse_variant(s: &str) -> Result<DistillVariant> {
    match s {
        "in" => Ok(DistillVariant::In),
        "out" => Ok(DistillVariant::Out),
        "in_out" | "in-out" => Ok(DistillVariant::InOut),
        other => Err(Error::Parse(format!("unknown distill variant {other:?}"))),
    }
}

pub fn parse_student_init(s: &str) -> Result<StudentInit> {
    match s {
        "from-teacher" | "from_teacher" => Ok(StudentInit::FromTeacher),
        "random" => Ok(StudentInit::Random),
        other => Err(Error::Parse(format!("unknown student init {other:?}"))),
    }
}
