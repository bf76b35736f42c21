//! Run configuration in TOML.
//!
//! ```toml
//! seed = 7
//! threads = 4
//!
//! [model]
//! r = 8
//! e = 50
//!
//! [loss]
//! object = 1.0
//! relationship = 1.0
//! embedding = 1.0
//!
//! [train]
//! learning_rate = 0.1
//! epochs = 50
//!
//! [orm]
//! top_m = 10
//! draw_k = 5
//!
//! [ablation]
//! subject_object_attention = false
//!
//! [paths]
//! train = "train.jsonl"
//! ```
//!
//! Every key is optional. Relative paths resolve against the directory of
//! the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{EvalOptions, ReportFormat};
use crate::orm::CandidatePolicy;
use crate::pipeline::Protocol;
use crate::relhead::{Ablation, HeadConfig, LossWeights, TrainConfig};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub r: usize,
    /// expected word-vector size; checked against the loaded table
    pub e: usize,
    pub attention_mean: bool,
    pub init_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            r: 8,
            e: 50,
            attention_mean: true,
            init_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrmSection {
    pub top_m: usize,
    pub draw_k: usize,
    pub backoff: bool,
    pub weighted: bool,
    /// unknown tokens in label phrases are an error instead of skipped
    pub strict_oov: bool,
    /// labels seen fewer times are dropped when building from a corpus
    pub min_count: u64,
}

impl Default for OrmSection {
    fn default() -> Self {
        let p = CandidatePolicy::default();
        OrmSection {
            top_m: p.top_m,
            draw_k: p.draw_k,
            backoff: p.backoff,
            weighted: p.weighted,
            strict_oov: false,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub protocol: Protocol,
    pub recall_k: Vec<usize>,
    pub topk: Vec<usize>,
    pub micro: bool,
    pub graph_constraint: bool,
    pub longtail_threshold: u64,
    pub synonym_threshold: f64,
    pub temperature: f64,
    pub format: ReportFormat,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalOptions::default();
        EvalSection {
            protocol: Protocol::PredCls,
            recall_k: e.recall_k,
            topk: e.topk,
            micro: e.micro,
            graph_constraint: e.graph_constraint,
            longtail_threshold: 1024,
            synonym_threshold: 0.6,
            temperature: 1.0,
            format: ReportFormat::Table,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub objects: Option<PathBuf>,
    pub predicates: Option<PathBuf>,
    /// label list for zero-shot classification
    pub labels: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub orm: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.objects,
            &mut self.predicates,
            &mut self.labels,
            &mut self.vectors,
            &mut self.corpus,
            &mut self.orm,
            &mut self.train,
            &mut self.test,
            &mut self.checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// worker threads; 0 means the rayon default
    pub threads: usize,
    pub model: ModelSection,
    pub loss: LossWeights,
    pub train: TrainSection,
    pub orm: OrmSection,
    pub ablation: Ablation,
    pub eval: EvalSection,
    pub synth: SynthConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(dir) = path.parent() {
            cfg.paths.resolve(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.r == 0 || self.model.e == 0 {
            return Err(Error::Config("model.r and model.e must be >= 1".into()));
        }
        self.train_config().validate().map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        })?;
        self.eval_options().validate()?;
        self.synth.validate()?;
        if self.eval.longtail_threshold == 0 {
            return Err(Error::Config("eval.longtail_threshold must be >= 1".into()));
        }
        if !(self.eval.temperature > 0.0 && self.eval.temperature.is_finite()) {
            return Err(Error::Config("eval.temperature must be positive".into()));
        }
        if self.orm.min_count == 0 {
            return Err(Error::Config("orm.min_count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn policy(&self) -> CandidatePolicy {
        CandidatePolicy {
            top_m: self.orm.top_m,
            draw_k: self.orm.draw_k,
            backoff: self.orm.backoff,
            weighted: self.orm.weighted,
        }
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            attention_mean: self.model.attention_mean,
            ablation: self.ablation,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            r: self.model.r,
            lambda: self.loss,
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.seed,
            threads: self.threads,
            init_scale: self.model.init_scale,
            policy: self.policy(),
            head: self.head_config(),
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            recall_k: self.eval.recall_k.clone(),
            topk: self.eval.topk.clone(),
            micro: self.eval.micro,
            graph_constraint: self.eval.graph_constraint,
        }
    }

    /// The path for `key`, or a config error naming the missing key.
    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| Error::Config(format!("paths.{key} is not set (config or flag)")))
    }
}
