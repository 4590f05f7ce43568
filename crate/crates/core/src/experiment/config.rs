//! Flat TOML run configuration covering every training, loss and pipeline
//! knob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::Init;
use crate::error::{Error, Result};
use crate::image_pipeline::PipelineConfig;
use crate::objectives::LossConfig;
use crate::trainer::{Method, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub arch: String,
    /// Backbone weights (safetensors). Random init from `seed` when unset.
    pub pretrained: Option<PathBuf>,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub alpha: f64,
    pub n_min: usize,
    pub focal_gamma: f64,
    pub mixed_precision: bool,
    pub seed: u64,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub local_branch: bool,
    pub global_size: usize,
    pub local_size: usize,
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub flip_prob: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let p = PipelineConfig::default();
        Self {
            method: t.method,
            arch: "resnet50".into(),
            pretrained: None,
            lr: t.lr,
            momentum: t.momentum,
            batch_size: t.batch_size,
            total_steps: t.total_steps,
            alpha: t.loss_cfg.alpha,
            n_min: t.loss_cfg.n_min,
            focal_gamma: t.loss_cfg.focal_gamma,
            mixed_precision: t.mixed_precision,
            seed: t.seed,
            eval_every: t.eval_every,
            checkpoint_every: t.checkpoint_every,
            local_branch: t.local_branch,
            global_size: p.global_size,
            local_size: p.local_size,
            min_fraction: p.min_fraction,
            max_fraction: p.max_fraction,
            flip_prob: p.flip_prob,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            method: self.method,
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            total_steps: self.total_steps,
            loss_cfg: LossConfig {
                alpha: self.alpha,
                n_min: self.n_min,
                focal_gamma: self.focal_gamma,
            },
            mixed_precision: self.mixed_precision,
            seed: self.seed,
            eval_every: self.eval_every,
            checkpoint_every: self.checkpoint_every,
            local_branch: self.local_branch,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            global_size: self.global_size,
            local_size: self.local_size,
            min_fraction: self.min_fraction,
            max_fraction: self.max_fraction,
            flip_prob: self.flip_prob,
            ..PipelineConfig::default()
        }
    }

    pub fn init(&self) -> Init {
        match &self.pretrained {
            Some(p) => Init::Pretrained(p.clone()),
            None => Init::Random(self.seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::backbone::Arch::parse(&self.arch)?;
        self.train_config().validate()?;
        self.pipeline_config().validate()
    }
}
