//! Run configuration loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::toy::ToyConfig;
use crate::compose::{FilterConfig, ThemeSpec};
use crate::diffusion::{cosine_schedule, ConditionMode, NoiseSchedule, SamplerConfig, COSINE_OFFSET};
use crate::eval::{EvalTrainConfig, EvaluatorConfig};
use crate::losses::LossWeights;
use crate::net::ModelConfig;
use crate::optim::AdamWConfig;
use crate::text::{ExternalEmbedder, StubEmbedder, WordEmbedder};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub cosine_offset: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            cosine_offset: COSINE_OFFSET,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        cosine_schedule(self.steps, self.cosine_offset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub optimizer: AdamWConfig,
    /// Learning rate used by fine-tuning runs.
    pub fine_tune_lr: f64,
    /// Probability of replacing the prompt with the null prompt.
    pub p_uncond: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            warmup_steps: 1000,
            optimizer: AdamWConfig::default(),
            fine_tune_lr: 5e-6,
            p_uncond: 0.1,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("train steps and batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::Config(format!("p_uncond {} outside [0, 1]", self.p_uncond)));
        }
        if !(self.optimizer.lr > 0.0 && self.fine_tune_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextBackend {
    #[default]
    Stub,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextConfig {
    pub backend: TextBackend,
    pub width: usize,
    pub program: Option<PathBuf>,
    pub args: Vec<String>,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            backend: TextBackend::Stub,
            width: 32,
            program: None,
            args: Vec::new(),
        }
    }
}

impl TextConfig {
    pub fn build(&self) -> Result<Box<dyn WordEmbedder>> {
        match self.backend {
            TextBackend::Stub => Ok(Box::new(StubEmbedder::new(self.width))),
            TextBackend::External => {
                let program = self
                    .program
                    .clone()
                    .ok_or_else(|| Error::Config("external text backend needs `program`".into()))?;
                Ok(Box::new(ExternalEmbedder::new(program, self.args.clone(), self.width)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComposeConfig {
    pub themes: Vec<ThemeSpec>,
    pub examples: Vec<String>,
    /// Descriptions requested per theme.
    pub per_theme: usize,
    pub max_in_flight: usize,
    pub llm_model: String,
    pub max_tokens: u32,
    pub condition: ConditionMode,
    pub min_frames: usize,
    pub max_frames: usize,
    pub length_ridge: f64,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        Self {
            themes: Vec::new(),
            examples: Vec::new(),
            per_theme: 5,
            max_in_flight: 4,
            llm_model: "gpt-4o".into(),
            max_tokens: 1024,
            condition: ConditionMode::Clean,
            min_frames: 24,
            max_frames: 64,
            length_ridge: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub r_precision_pool: usize,
    pub diversity_pairs: usize,
    pub multimodality_pairs: usize,
    pub multimodality_prompts: usize,
    pub multimodality_repeats: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            r_precision_pool: 32,
            diversity_pairs: 300,
            multimodality_pairs: 10,
            multimodality_prompts: 8,
            multimodality_repeats: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub text: TextConfig,
    pub evaluator: EvaluatorConfig,
    pub evaluator_train: EvalTrainConfig,
    pub filter: FilterConfig,
    pub compose: ComposeConfig,
    pub toy: ToyConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::toy(),
            schedule: ScheduleConfig::default(),
            sampler: SamplerConfig::default(),
            loss: LossWeights::default(),
            train: TrainConfig::default(),
            text: TextConfig::default(),
            evaluator: EvaluatorConfig::toy(),
            evaluator_train: EvalTrainConfig {
                held_out: 32,
                ..EvalTrainConfig::default()
            },
            filter: FilterConfig::default(),
            compose: ComposeConfig::default(),
            toy: ToyConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.evaluator.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.filter.validate()?;
        let schedule = self.schedule.build()?;
        self.sampler.validate(&schedule)?;
        if self.schedule.steps != self.model.diffusion_steps {
            return Err(Error::Config(format!(
                "schedule has {} steps, model expects {}",
                self.schedule.steps, self.model.diffusion_steps
            )));
        }
        if self.text.width != self.model.text_width || self.text.width != self.evaluator.text_width {
            return Err(Error::Config("text width must match the model and evaluator".into()));
        }
        if self.evaluator.joints != self.model.joints {
            return Err(Error::Config("evaluator and model joint counts differ".into()));
        }
        if self.compose.min_frames < 2 || self.compose.max_frames < self.compose.min_frames {
            return Err(Error::Config("compose frame clamp is invalid".into()));
        }
        if self.compose.max_frames > self.model.max_frames {
            return Err(Error::Config("compose max_frames exceeds the model's max_frames".into()));
        }
        if self.metrics.r_precision_pool < 2 {
            return Err(Error::Config("r_precision_pool must be at least 2".into()));
        }
        Ok(())
    }
}
