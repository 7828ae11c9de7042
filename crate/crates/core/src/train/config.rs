//! Run configuration in a line-oriented `key=value` format. Unknown keys
//! and malformed values are rejected with the key named in the error.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::train::net::{BlockSpec, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub classes: usize,
    pub in_channels: usize,
    pub channels: usize,
    pub aux_channels: usize,
    pub blocks: Vec<BlockSpec>,
    pub input_norm: bool,
    pub domains: usize,
    pub batch: usize,
    pub max_iter: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub offset_lr_multiplier: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub loss_scale: f64,
    pub void_class: u8,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            classes: 4,
            in_channels: 3,
            channels: 8,
            aux_channels: 16,
            blocks: vec![
                BlockSpec::Downsample,
                BlockSpec::Residual {
                    variant: Variant::Regular,
                    dilation: 1,
                },
            ],
            input_norm: true,
            domains: 1,
            batch: 4,
            max_iter: 1000,
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 2e-4,
            offset_lr_multiplier: 1.0,
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.3,
            loss_scale: 2.0,
            void_class: 255,
        }
    }
}

fn key_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| key_err(key, format!("cannot parse value {value:?}")))
}

/// Grammar: comma-separated items, each `down` or `res:VARIANT:DILATION`
/// with variant one of `regular`, `dc`, `rdc`, `frdc`.
pub fn parse_blocks(text: &str) -> Result<Vec<BlockSpec>> {
    let mut blocks = Vec::new();
    for item in text.split(',') {
        let item = item.trim();
        if item == "down" {
            blocks.push(BlockSpec::Downsample);
            continue;
        }
        let mut parts = item.split(':');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("res"), Some(variant), Some(dilation), None) => {
                let variant = match variant {
                    "regular" => Variant::Regular,
                    "dc" => Variant::Dc,
                    "rdc" => Variant::Rdc,
                    "frdc" => Variant::Frdc,
                    other => {
                        return Err(key_err("blocks", format!("unknown variant {other:?}")))
                    }
                };
                let dilation: usize = parse_value("blocks", dilation)?;
                blocks.push(BlockSpec::Residual { variant, dilation });
            }
            _ => return Err(key_err("blocks", format!("malformed block item {item:?}"))),
        }
    }
    if blocks.is_empty() {
        return Err(key_err("blocks", "at least one block is required"));
    }
    Ok(blocks)
}

fn blocks_to_string(blocks: &[BlockSpec]) -> String {
    blocks
        .iter()
        .map(|b| match b {
            BlockSpec::Downsample => "down".to_string(),
            BlockSpec::Residual { variant, dilation } => {
                let v = match variant {
                    Variant::Regular => "regular",
                    Variant::Dc => "dc",
                    Variant::Rdc => "rdc",
                    Variant::Frdc => "frdc",
                };
                format!("res:{v}:{dilation}")
            }
        })
        .collect::<Vec<_>>()
        .join(",")
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "seed" => config.seed = parse_value(key, value)?,
                "classes" => config.classes = parse_value(key, value)?,
                "in_channels" => config.in_channels = parse_value(key, value)?,
                "channels" => config.channels = parse_value(key, value)?,
                "aux_channels" => config.aux_channels = parse_value(key, value)?,
                "blocks" => config.blocks = parse_blocks(value)?,
                "input_norm" => config.input_norm = parse_value(key, value)?,
                "domains" => config.domains = parse_value(key, value)?,
                "batch" => config.batch = parse_value(key, value)?,
                "max_iter" => config.max_iter = parse_value(key, value)?,
                "base_lr" => config.base_lr = parse_value(key, value)?,
                "momentum" => config.momentum = parse_value(key, value)?,
                "weight_decay" => config.weight_decay = parse_value(key, value)?,
                "offset_lr_multiplier" => {
                    config.offset_lr_multiplier = parse_value(key, value)?
                }
                "alpha" => config.alpha = parse_value(key, value)?,
                "beta" => config.beta = parse_value(key, value)?,
                "gamma" => config.gamma = parse_value(key, value)?,
                "loss_scale" => config.loss_scale = parse_value(key, value)?,
                "void_class" => config.void_class = parse_value(key, value)?,
                other => return Err(key_err(other, "unknown key")),
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(key_err("batch", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(key_err("max_iter", "must be positive"));
        }
        if self.domains == 0 {
            return Err(key_err("domains", "must be positive"));
        }
        if (self.void_class as usize) < self.classes {
            return Err(key_err("void_class", "must not collide with a real class"));
        }
        if self.loss_scale <= 0.0 {
            return Err(key_err("loss_scale", "must be positive"));
        }
        Ok(())
    }

    /// Round-trippable serialization used when copying the configuration
    /// into a checkpoint directory.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "classes={}", self.classes);
        let _ = writeln!(s, "in_channels={}", self.in_channels);
        let _ = writeln!(s, "channels={}", self.channels);
        let _ = writeln!(s, "aux_channels={}", self.aux_channels);
        let _ = writeln!(s, "blocks={}", blocks_to_string(&self.blocks));
        let _ = writeln!(s, "input_norm={}", self.input_norm);
        let _ = writeln!(s, "domains={}", self.domains);
        let _ = writeln!(s, "batch={}", self.batch);
        let _ = writeln!(s, "max_iter={}", self.max_iter);
        let _ = writeln!(s, "base_lr={}", self.base_lr);
        let _ = writeln!(s, "momentum={}", self.momentum);
        let _ = writeln!(s, "weight_decay={}", self.weight_decay);
        let _ = writeln!(s, "offset_lr_multiplier={}", self.offset_lr_multiplier);
        let _ = writeln!(s, "alpha={}", self.alpha);
        let _ = writeln!(s, "beta={}", self.beta);
        let _ = writeln!(s, "gamma={}", self.gamma);
        let _ = writeln!(s, "loss_scale={}", self.loss_scale);
        let _ = writeln!(s, "void_class={}", self.void_class);
        s
    }
}
