//! Training configuration, its validation and its `key = value` file form.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::config::RunConfig;
use crate::losses::{LossWeights, DEFAULT_LAMBDA_A, DEFAULT_LAMBDA_P};
use crate::models::{Discriminator, DiscriminatorConfig, GeneratorConfig, ModelConfig};

use super::adam::AdamConfig;

/// Which terms the generator objective contains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Ablation {
    /// Euclidean loss only; no discriminator.
    Gen,
    /// Euclidean + adversarial.
    Cgan,
    /// Adversarial + perceptual, Euclidean term dropped.
    CganP,
    /// Euclidean + adversarial + perceptual.
    #[default]
    IdCgan,
}

impl Ablation {
    pub fn uses_discriminator(self) -> bool {
        self != Ablation::Gen
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gen" => Ok(Ablation::Gen),
            "cgan" => Ok(Ablation::Cgan),
            "cgan-p" => Ok(Ablation::CganP),
            "id-cgan" => Ok(Ablation::IdCgan),
            _ => Err(Error::Config(format!("unknown ablation `{s}` (expected gen, cgan, cgan-p or id-cgan)"))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Gen => "gen",
            Ablation::Cgan => "cgan",
            Ablation::CganP => "cgan-p",
            Ablation::IdCgan => "id-cgan",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub ablation: Ablation,
    pub batch_size: usize,
    pub iterations: u64,
    pub learning_rate: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    /// `None` means "use the default for the ablation".
    pub lambda_a: Option<f32>,
    pub lambda_p: Option<f32>,
    pub image_size: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    /// Generator base width.
    pub k: usize,
    /// Discriminator base width.
    pub k2: usize,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ablation: Ablation::IdCgan,
            batch_size: 7,
            iterations: 2000,
            learning_rate: 2e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lambda_a: None,
            lambda_p: None,
            image_size: 64,
            seed: 0,
            checkpoint_every: 500,
            log_every: 10,
            k: GeneratorConfig::default().k,
            k2: DiscriminatorConfig::default().k2,
            d_steps: 1,
        }
    }
}

/// Keys accepted in a training config file.
pub const TRAIN_KEYS: &[&str] = &[
    "ablation",
    "batch_size",
    "iterations",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "lambda_a",
    "lambda_p",
    "image_size",
    "seed",
    "checkpoint_every",
    "log_every",
    "k",
    "k2",
    "d_steps",
];

impl TrainConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
        }
        match key {
            "ablation" => self.ablation = value.trim().parse()?,
            "batch_size" => self.batch_size = p(key, value)?,
            "iterations" => self.iterations = p(key, value)?,
            "learning_rate" => self.learning_rate = p(key, value)?,
            "adam_beta1" => self.adam_beta1 = p(key, value)?,
            "adam_beta2" => self.adam_beta2 = p(key, value)?,
            "adam_eps" => self.adam_eps = p(key, value)?,
            "lambda_a" => self.lambda_a = Some(p(key, value)?),
            "lambda_p" => self.lambda_p = Some(p(key, value)?),
            "image_size" => self.image_size = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "checkpoint_every" => self.checkpoint_every = p(key, value)?,
            "log_every" => self.log_every = p(key, value)?,
            "k" => self.k = p(key, value)?,
            "k2" => self.k2 = p(key, value)?,
            "d_steps" => self.d_steps = p(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// The `key = value` file that reproduces this config. Unset lambdas are
    /// omitted so the ablation default still applies on reload.
    pub fn to_config_text(&self) -> String {
        let mut lines = vec![
            format!("ablation = {}", self.ablation),
            format!("batch_size = {}", self.batch_size),
            format!("iterations = {}", self.iterations),
            format!("learning_rate = {:?}", self.learning_rate),
            format!("adam_beta1 = {:?}", self.adam_beta1),
            format!("adam_beta2 = {:?}", self.adam_beta2),
            format!("adam_eps = {:?}", self.adam_eps),
        ];
        if let Some(v) = self.lambda_a {
            lines.push(format!("lambda_a = {v:?}"));
        }
        if let Some(v) = self.lambda_p {
            lines.push(format!("lambda_p = {v:?}"));
        }
        lines.extend([
            format!("image_size = {}", self.image_size),
            format!("seed = {}", self.seed),
            format!("checkpoint_every = {}", self.checkpoint_every),
            format!("log_every = {}", self.log_every),
            format!("k = {}", self.k),
            format!("k2 = {}", self.k2),
            format!("d_steps = {}", self.d_steps),
        ]);
        lines.join("\n") + "\n"
    }

    /// Overlays every entry of a parsed config file.
    pub fn apply_file(&mut self, file: &RunConfig) -> Result<()> {
        for (k, v) in file.iter() {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 1 {
            return bad("batch size must be at least 1".into());
        }
        if self.iterations < 1 {
            return bad("iterations must be at least 1".into());
        }
        if self.checkpoint_every < 1 || self.log_every < 1 {
            return bad("checkpoint and log intervals must be at least 1".into());
        }
        if self.d_steps < 1 {
            return bad("d_steps must be at least 1".into());
        }
        self.adam().validate()?;
        match self.ablation {
            Ablation::Gen if self.lambda_a.is_some() || self.lambda_p.is_some() => {
                return bad("lambda_a / lambda_p do not apply to the gen ablation".into());
            }
            Ablation::Cgan if self.lambda_p.is_some() => {
                return bad("lambda_p does not apply to the cgan ablation".into());
            }
            _ => {}
        }
        self.loss_weights().validate()?;
        self.model_config().validate()?;
        let s = self.image_size;
        if self.ablation.uses_discriminator() {
            if !s.is_multiple_of(8) || s < Discriminator::MIN_SIDE {
                return bad(format!("image size {s} must be a multiple of 8 and at least {}", Discriminator::MIN_SIDE));
            }
        } else if s < 8 || !s.is_multiple_of(2) {
            return bad(format!("image size {s} must be even and at least 8"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    pub fn loss_weights(&self) -> LossWeights {
        let la = self.lambda_a.unwrap_or(DEFAULT_LAMBDA_A);
        let lp = self.lambda_p.unwrap_or(DEFAULT_LAMBDA_P);
        match self.ablation {
            Ablation::Gen => LossWeights::gen(),
            Ablation::Cgan => LossWeights::cgan(la),
            Ablation::CganP => LossWeights::cgan_p(la, lp),
            Ablation::IdCgan => LossWeights::id_cgan(la, lp),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            generator: GeneratorConfig { k: self.k },
            discriminator: DiscriminatorConfig { k2: self.k2 },
            ..Default::default()
        }
    }
}
