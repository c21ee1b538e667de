//! Model hyperparameters and the flat run-configuration file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::visibility::MaskMode;
use crate::error::{config, io_err, Result};
use crate::losses::LossWeights;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegMode {
    Off,
    /// The segmentation path owns its own content encoder.
    Separate,
    /// The segmentation path shares the generative content encoder.
    Joint,
}

/// What the segmentor sees when domains are missing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegInput {
    ZeroFilled,
    Completed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub num_domains: usize,
    pub height: usize,
    pub width: usize,
    /// Width of the content code; encoder stages use a quarter and a half of this.
    pub content_channels: usize,
    pub res_blocks: usize,
    pub style_dim: usize,
    pub mlp_hidden: usize,
    pub disc_scales: usize,
    pub num_classes: usize,
    pub seg_mode: SegMode,
    pub seg_input: SegInput,
    pub init_seed: u64,
}

impl ModelConfig {
    /// Small configuration that trains in minutes on a CPU.
    pub fn desk() -> Self {
        Self {
            num_domains: 3,
            height: 32,
            width: 32,
            content_channels: 64,
            res_blocks: 2,
            style_dim: 8,
            mlp_hidden: 256,
            disc_scales: 2,
            num_classes: 2,
            seg_mode: SegMode::Off,
            seg_input: SegInput::Completed,
            init_seed: 0,
        }
    }

    /// Full-size architecture for 256x256 inputs and four domains.
    pub fn full() -> Self {
        Self {
            num_domains: 4,
            height: 256,
            width: 256,
            content_channels: 256,
            res_blocks: 4,
            disc_scales: 3,
            ..Self::desk()
        }
    }

    pub fn base_channels(&self) -> usize {
        self.content_channels / 4
    }

    /// Smallest side length the discriminator accepts at its coarsest scale.
    pub fn min_disc_size(&self) -> usize {
        16 << (self.disc_scales - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_domains == 0 {
            return Err(config("num_domains must be positive"));
        }
        if !self.height.is_multiple_of(4) || !self.width.is_multiple_of(4) || self.height == 0 || self.width == 0 {
            return Err(config(format!(
                "image size {}x{} must be a positive multiple of 4",
                self.height, self.width
            )));
        }
        if self.content_channels < 4 || !self.content_channels.is_multiple_of(4) {
            return Err(config("content_channels must be a positive multiple of 4"));
        }
        if self.style_dim == 0 || self.mlp_hidden == 0 || self.res_blocks == 0 {
            return Err(config("style_dim, mlp_hidden and res_blocks must be positive"));
        }
        if self.disc_scales == 0 {
            return Err(config("disc_scales must be positive"));
        }
        let min = self.min_disc_size();
        if self.height < min || self.width < min {
            return Err(config(format!(
                "{} discriminator scale(s) need images of at least {min}x{min}, got {}x{}",
                self.disc_scales, self.height, self.width
            )));
        }
        let step = 1usize << (self.disc_scales - 1);
        if !self.height.is_multiple_of(step) || !self.width.is_multiple_of(step) {
            return Err(config(format!(
                "image size must be divisible by {step} for {} discriminator scales",
                self.disc_scales
            )));
        }
        if self.seg_mode != SegMode::Off && self.num_classes == 0 {
            return Err(config("segmentation needs at least one class"));
        }
        Ok(())
    }

    /// Stable text form stored in checkpoints and reports.
    pub fn echo(&self) -> String {
        format!(
            "num_domains={} height={} width={} content_channels={} res_blocks={} style_dim={} \
             mlp_hidden={} disc_scales={} num_classes={} seg_mode={:?} seg_input={:?} init_seed={}",
            self.num_domains,
            self.height,
            self.width,
            self.content_channels,
            self.res_blocks,
            self.style_dim,
            self.mlp_hidden,
            self.disc_scales,
            self.num_classes,
            self.seg_mode,
            self.seg_input,
            self.init_seed
        )
    }
}

impl ModelConfig {
    /// Inverse of [`ModelConfig::echo`].
    pub fn from_echo(text: &str) -> Result<Self> {
        let mut kv = std::collections::HashMap::new();
        for tok in text.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| config(format!("bad config token `{tok}`")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| config(format!("config echo lacks `{k}`")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| config(format!("bad value for `{k}`"))) };
        let seg_mode = match get("seg_mode")? {
            "Off" => SegMode::Off,
            "Separate" => SegMode::Separate,
            "Joint" => SegMode::Joint,
            other => return Err(config(format!("bad seg_mode `{other}`"))),
        };
        let seg_input = match get("seg_input")? {
            "ZeroFilled" => SegInput::ZeroFilled,
            "Completed" => SegInput::Completed,
            other => return Err(config(format!("bad seg_input `{other}`"))),
        };
        let m = Self {
            num_domains: num("num_domains")?,
            height: num("height")?,
            width: num("width")?,
            content_channels: num("content_channels")?,
            res_blocks: num("res_blocks")?,
            style_dim: num("style_dim")?,
            mlp_hidden: num("mlp_hidden")?,
            disc_scales: num("disc_scales")?,
            num_classes: num("num_classes")?,
            seg_mode,
            seg_input,
            init_seed: get("init_seed")?.parse().map_err(|_| config("bad value for `init_seed`"))?,
        };
        m.validate()?;
        Ok(m)
    }
}

/// Contents of a training configuration file.
///
/// Every key is optional. Image geometry, domain count and class count come from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub content_channels: usize,
    pub res_blocks: usize,
    pub style_dim: usize,
    pub mlp_hidden: usize,
    pub disc_scales: usize,
    pub seg_mode: SegMode,
    pub seg_input: SegInput,
    pub init_seed: u64,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub mask_mode: String,
    pub multi_sample: bool,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,

    pub lambda_adv: f64,
    pub lambda_x_cyc: f64,
    pub lambda_c_cyc: f64,
    pub lambda_s_cyc: f64,
    pub lambda_rec: f64,
    pub lambda_seg: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::desk();
        let t = TrainConfig::default();
        let w = LossWeights::default();
        Self {
            content_channels: m.content_channels,
            res_blocks: m.res_blocks,
            style_dim: m.style_dim,
            mlp_hidden: m.mlp_hidden,
            disc_scales: m.disc_scales,
            seg_mode: m.seg_mode,
            seg_input: m.seg_input,
            init_seed: m.init_seed,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            batch_size: t.batch_size,
            iterations: t.iterations,
            mask_mode: t.mask_mode.to_string(),
            multi_sample: t.multi_sample,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            log_every: t.log_every,
            lambda_adv: w.adv,
            lambda_x_cyc: w.x_cyc,
            lambda_c_cyc: w.c_cyc,
            lambda_s_cyc: w.s_cyc,
            lambda_rec: w.rec,
            lambda_seg: w.seg,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn model_config(
        &self,
        num_domains: usize,
        height: usize,
        width: usize,
        num_classes: usize,
    ) -> Result<ModelConfig> {
        let m = ModelConfig {
            num_domains,
            height,
            width,
            content_channels: self.content_channels,
            res_blocks: self.res_blocks,
            style_dim: self.style_dim,
            mlp_hidden: self.mlp_hidden,
            disc_scales: self.disc_scales,
            num_classes,
            seg_mode: self.seg_mode,
            seg_input: self.seg_input,
            init_seed: self.init_seed,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            batch_size: self.batch_size,
            iterations: self.iterations,
            weights: LossWeights {
                adv: self.lambda_adv,
                x_cyc: self.lambda_x_cyc,
                c_cyc: self.lambda_c_cyc,
                s_cyc: self.lambda_s_cyc,
                rec: self.lambda_rec,
                seg: self.lambda_seg,
            },
            mask_mode: self.mask_mode.parse::<MaskMode>()?,
            multi_sample: self.multi_sample,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            log_every: self.log_every,
        };
        t.validate()?;
        Ok(t)
    }
}
