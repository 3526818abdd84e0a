//! Flat `key = value` training configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::{LossWeights, PerceptualNorm};
use crate::nets::{DiscriminatorSpec, GeneratorSpec};
use crate::tensor::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOrder {
    GeneratorsFirst,
    DiscriminatorsFirst,
}

impl FromStr for UpdateOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generators-first" => Ok(Self::GeneratorsFirst),
            "discriminators-first" => Ok(Self::DiscriminatorsFirst),
            _ => Err(Error::Config(format!(
                "update_order must be generators-first or discriminators-first, got {s:?}"
            ))),
        }
    }
}

impl std::fmt::Display for UpdateOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::GeneratorsFirst => "generators-first",
            Self::DiscriminatorsFirst => "discriminators-first",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub perceptual_norm: PerceptualNorm,
    pub image_size: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_interval: u64,
    pub update_order: UpdateOrder,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub phi_seed: u64,
    pub phi_weights: Option<PathBuf>,
    pub hazy_dir: Option<PathBuf>,
    pub clean_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            adam: AdamConfig::default(),
            weights: LossWeights::standard(),
            perceptual_norm: PerceptualNorm::Mean,
            image_size: 64,
            batch_size: 1,
            seed: 0,
            checkpoint_interval: 0,
            update_order: UpdateOrder::GeneratorsFirst,
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
            phi_seed: 16,
            phi_weights: None,
            hazy_dir: None,
            clean_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl TrainConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.adam.lr = parse(key, v)?,
            "beta1" => self.adam.beta1 = parse(key, v)?,
            "beta2" => self.adam.beta2 = parse(key, v)?,
            "adam_eps" => self.adam.eps = parse(key, v)?,
            "lambda_cycle" => self.weights.lambda_cycle = parse(key, v)?,
            "gamma" => self.weights.gamma = parse(key, v)?,
            "perceptual_norm" => self.perceptual_norm = v.parse()?,
            "image_size" => self.image_size = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, v)?,
            "update_order" => self.update_order = v.parse()?,
            "channels" => {
                let c = parse(key, v)?;
                self.generator.channels = c;
                self.discriminator.channels = c;
            }
            "gen_base_width" => self.generator.base_width = parse(key, v)?,
            "gen_downsamples" => self.generator.downsamples = parse(key, v)?,
            "gen_res_blocks" => self.generator.res_blocks = parse(key, v)?,
            "gen_outer_kernel" => self.generator.outer_kernel = parse(key, v)?,
            "gen_identity_skip" => self.generator.identity_skip = parse_bool(key, v)?,
            "gen_zero_init_output" => self.generator.zero_init_output = parse_bool(key, v)?,
            "disc_widths" => {
                self.discriminator.widths = v
                    .split(',')
                    .map(|w| parse(key, w.trim()))
                    .collect::<Result<_>>()?
            }
            "disc_slope" => self.discriminator.slope = parse(key, v)?,
            "phi_seed" => self.phi_seed = parse(key, v)?,
            "phi_weights" => self.phi_weights = opt_path(v),
            "hazy_dir" => self.hazy_dir = opt_path(v),
            "clean_dir" => self.clean_dir = opt_path(v),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let widths: Vec<String> = self.discriminator.widths.iter().map(|w| w.to_string()).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("epochs", self.epochs.to_string());
        kv("lr", format!("{:e}", self.adam.lr));
        kv("beta1", self.adam.beta1.to_string());
        kv("beta2", self.adam.beta2.to_string());
        kv("adam_eps", format!("{:e}", self.adam.eps));
        kv("lambda_cycle", self.weights.lambda_cycle.to_string());
        kv("gamma", format!("{:e}", self.weights.gamma));
        kv("perceptual_norm", self.perceptual_norm.to_string());
        kv("image_size", self.image_size.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("checkpoint_interval", self.checkpoint_interval.to_string());
        kv("update_order", self.update_order.to_string());
        kv("channels", self.generator.channels.to_string());
        kv("gen_base_width", self.generator.base_width.to_string());
        kv("gen_downsamples", self.generator.downsamples.to_string());
        kv("gen_res_blocks", self.generator.res_blocks.to_string());
        kv("gen_outer_kernel", self.generator.outer_kernel.to_string());
        kv("gen_identity_skip", self.generator.identity_skip.to_string());
        kv("gen_zero_init_output", self.generator.zero_init_output.to_string());
        kv("disc_widths", widths.join(","));
        kv("disc_slope", self.discriminator.slope.to_string());
        kv("phi_seed", self.phi_seed.to_string());
        kv("phi_weights", path(&self.phi_weights));
        kv("hazy_dir", path(&self.hazy_dir));
        kv("clean_dir", path(&self.clean_dir));
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.image_size == 0 || self.image_size % 32 != 0 {
            return Err(Error::Config(format!(
                "image_size must be a positive multiple of 32, got {}",
                self.image_size
            )));
        }
        if self.batch_size != 1 {
            return Err(Error::Config(format!("only batch_size = 1 is supported, got {}", self.batch_size)));
        }
        if self.generator.channels != self.discriminator.channels {
            return Err(Error::Config("generator and discriminator channel counts differ".into()));
        }
        if self.generator.outer_kernel % 2 == 0 || self.generator.base_width == 0 {
            return Err(Error::Config("gen_outer_kernel must be odd and gen_base_width > 0".into()));
        }
        if self.discriminator.widths.is_empty() {
            return Err(Error::Config("disc_widths must not be empty".into()));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        self.weights
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}
